"""
Synchronous collision-free AER scan: every neuron owns one slot per scanning
period and the reader polls slots serially.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from neuron_core import BiasConfig, NeuronState
from sim_errors import AddressError, BusCapacityError

logger = logging.getLogger(__name__)

PS_PER_NS = 1_000
PS_PER_MS = 1_000_000_000

DEFAULT_PERIOD_PS = 1 * PS_PER_MS
DEFAULT_SLOT_PS = 32 * PS_PER_NS


@dataclass(frozen=True)
class ScanSchedule:
    """Slot layout of one scan bus.

    `slot_map` maps a local neuron index to its slot; identity when None.
    """

    n_neurons: int
    period: int = DEFAULT_PERIOD_PS
    slot_duration: int = DEFAULT_SLOT_PS
    slot_map: Optional[Tuple[int, ...]] = None

    def __post_init__(self) -> None:
        if self.period <= 0 or self.slot_duration <= 0:
            raise BusCapacityError("scan period and slot duration must be positive")
        if self.n_neurons < 1:
            raise BusCapacityError(f"a scan bus needs at least one neuron, got {self.n_neurons}")
        max_slots = self.period // self.slot_duration
        if self.n_neurons * self.slot_duration > self.period:
            raise BusCapacityError(
                f"{self.n_neurons} neurons x {self.slot_duration} ps slots exceed the "
                f"{self.period} ps scan period (max {max_slots} slots per bus)"
            )
        if self.slot_map is not None:
            if sorted(self.slot_map) != list(range(self.n_neurons)):
                raise BusCapacityError("slot_map must be a bijection onto [0, n_neurons)")

    @property
    def max_slots(self) -> int:
        return self.period // self.slot_duration

    def slot_of(self, neuron_id: int) -> int:
        if not 0 <= neuron_id < self.n_neurons:
            raise AddressError(f"neuron {neuron_id} is not on this bus (n={self.n_neurons})")
        if self.slot_map is None:
            return neuron_id
        return self.slot_map[neuron_id]


@dataclass(frozen=True)
class AERSample:
    time: int
    neuron_id: int
    address: int
    active: bool


def slot_times(schedule: ScanSchedule, neuron_id: int, k: int) -> int:
    """Instant of the k-th scan of `neuron_id`, in picoseconds"""
    return k * schedule.period + schedule.slot_of(neuron_id) * schedule.slot_duration


def address_width(n_neurons: int) -> int:
    if n_neurons < 1:
        raise AddressError("an address space needs at least one neuron")
    return max(1, (n_neurons - 1).bit_length())


def encode_address(neuron_id: int, n_neurons: int) -> int:
    if not 0 <= neuron_id < n_neurons:
        raise AddressError(f"neuron id {neuron_id} out of range for {n_neurons} neurons")
    return neuron_id


def decode_address(address: int, n_neurons: int) -> int:
    if not 0 <= address < n_neurons:
        raise AddressError(f"address {address} out of range for {n_neurons} neurons")
    return address


def format_address(neuron_id: int, n_neurons: int) -> str:
    """Address as the bit string driven on the bus, e.g. '101'"""
    return format(encode_address(neuron_id, n_neurons), f"0{address_width(n_neurons)}b")


def sample(
    neuron_state: NeuronState,
    t: int,
    schedule: ScanSchedule,
    cfg: BiasConfig,
    neuron_id: int = 0,
) -> AERSample:
    """Level-sample the active-low output at a slot instant.

    Boundary inclusive: V_mem exactly at threshold reads active. An excursion
    that starts and ends between two slots of the same neuron is never seen.
    """
    if (t - schedule.slot_of(neuron_id) * schedule.slot_duration) % schedule.period != 0:
        raise ValueError(f"t={t} ps is not a slot instant of neuron {neuron_id}")
    return AERSample(
        time=t,
        neuron_id=neuron_id,
        address=encode_address(neuron_id, schedule.n_neurons),
        active=neuron_state.v_mem >= cfg.v_threshold,
    )


@dataclass
class BusArray:
    """Independent scan buses packed bus by bus over global neuron ids"""

    schedules: List[ScanSchedule] = field(default_factory=list)

    @classmethod
    def build(
        cls,
        n_neurons: int,
        n_buses: int = 1,
        period: int = DEFAULT_PERIOD_PS,
        slot_duration: int = DEFAULT_SLOT_PS,
    ) -> "BusArray":
        if n_buses < 1:
            raise BusCapacityError(f"need at least one scan bus, got {n_buses}")
        if n_buses > n_neurons:
            raise BusCapacityError(f"{n_buses} buses for only {n_neurons} neurons")
        base, extra = divmod(n_neurons, n_buses)
        schedules = [
            ScanSchedule(base + (1 if b < extra else 0), period, slot_duration)
            for b in range(n_buses)
        ]
        logger.debug("built %d scan bus(es) for %d neurons", n_buses, n_neurons)
        return cls(schedules)

    def __post_init__(self) -> None:
        self._offsets: List[int] = []
        total = 0
        for s in self.schedules:
            self._offsets.append(total)
            total += s.n_neurons
        self._index: Dict[int, Tuple[int, int]] = {}
        self.n_neurons = total

    def locate(self, neuron_id: int) -> Tuple[int, int]:
        """Return (bus index, local index) of a global neuron id"""
        if not 0 <= neuron_id < self.n_neurons:
            raise AddressError(f"neuron {neuron_id} out of range for {self.n_neurons} neurons")
        cached = self._index.get(neuron_id)
        if cached is not None:
            return cached
        bus = 0
        while bus + 1 < len(self._offsets) and self._offsets[bus + 1] <= neuron_id:
            bus += 1
        located = (bus, neuron_id - self._offsets[bus])
        self._index[neuron_id] = located
        return located

    def slot_time(self, neuron_id: int, k: int) -> int:
        bus, local = self.locate(neuron_id)
        return slot_times(self.schedules[bus], local, k)

    def sample(self, neuron_id: int, state: NeuronState, t: int, cfg: BiasConfig) -> AERSample:
        bus, local = self.locate(neuron_id)
        reading = sample(state, t, self.schedules[bus], cfg, local)
        return AERSample(time=t, neuron_id=neuron_id, address=reading.address, active=reading.active)
