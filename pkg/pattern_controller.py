"""
Off-chip firing-pattern controller: reads AER samples and sends RST pulses
back, so one fixed bias set yields tonic, bursting or adapting neurons.
"""
import logging
from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from aer_bus import AERSample
from event_engine import EventKind, SpikeEvent
from sim_errors import ConfigValidationError
from time_units import format_time, parse_time

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Passive:
    def describe(self) -> str:
        return "passive"


@dataclass(frozen=True)
class Tonic:
    rst_duration: int

    def __post_init__(self) -> None:
        if self.rst_duration <= 0:
            raise ConfigValidationError("tonic rst_duration must be > 0")

    def describe(self) -> str:
        return f"tonic:{format_time(self.rst_duration)}"


@dataclass(frozen=True)
class Burst:
    spikes_per_burst: int
    rst_duration: int

    def __post_init__(self) -> None:
        if self.spikes_per_burst < 1:
            raise ConfigValidationError("burst spikes_per_burst must be >= 1")
        if self.rst_duration <= 0:
            raise ConfigValidationError("burst rst_duration must be > 0")

    def describe(self) -> str:
        return f"burst:{self.spikes_per_burst}:{format_time(self.rst_duration)}"


@dataclass(frozen=True)
class Adaptation:
    """RST width grows by `rst_increment` per reset, clamped at `rst_max`.

    `decay_after` restores `rst_init` after that many consecutive inactive
    samples; None keeps the adapted width for the whole run.
    """

    rst_init: int
    rst_increment: int
    rst_max: int
    decay_after: Optional[int] = None

    def __post_init__(self) -> None:
        if min(self.rst_init, self.rst_increment, self.rst_max) <= 0:
            raise ConfigValidationError("adaptation durations must be > 0")
        if self.rst_init > self.rst_max:
            raise ConfigValidationError("adaptation rst_init must be <= rst_max")
        if self.decay_after is not None and self.decay_after < 1:
            raise ConfigValidationError("adaptation decay_after must be >= 1")

    def describe(self) -> str:
        text = (
            f"adaptation:{format_time(self.rst_init)}:{format_time(self.rst_increment)}"
            f":{format_time(self.rst_max)}"
        )
        if self.decay_after is not None:
            text += f":{self.decay_after}"
        return text


ControllerMode = Union[Passive, Tonic, Burst, Adaptation]


@dataclass(frozen=True)
class ControllerState:
    mode: ControllerMode
    consecutive_active_count: int = 0
    current_rst_duration: int = 0
    consecutive_inactive_count: int = 0


@dataclass(frozen=True)
class ResetCommand:
    neuron_id: int
    issue_time: int
    duration: int


def initial_state(mode: ControllerMode) -> ControllerState:
    duration = mode.rst_init if isinstance(mode, Adaptation) else 0
    return ControllerState(mode=mode, current_rst_duration=duration)


def parse_mode(text: str) -> ControllerMode:
    """Parse `passive`, `tonic:24ns`, `burst:5:24ns` or
    `adaptation:3ns:3ns:32ns[:decay_after]`"""
    parts = [p.strip() for p in text.strip().lower().split(":")]
    name, args = parts[0], parts[1:]
    try:
        if name == "passive" and not args:
            return Passive()
        if name == "tonic" and len(args) == 1:
            return Tonic(parse_time(args[0]))
        if name == "burst" and len(args) == 2:
            return Burst(int(args[0]), parse_time(args[1]))
        if name == "adaptation" and len(args) in (3, 4):
            decay = int(args[3]) if len(args) == 4 else None
            return Adaptation(parse_time(args[0]), parse_time(args[1]), parse_time(args[2]), decay)
    except ValueError as e:
        raise ConfigValidationError(f"invalid controller mode {text!r}: {e}") from e
    raise ConfigValidationError(f"invalid controller mode {text!r}")


def on_sample(state: ControllerState, s: AERSample) -> Tuple[ControllerState, Optional[ResetCommand]]:
    mode = state.mode

    if isinstance(mode, Passive):
        return state, None

    if isinstance(mode, Tonic):
        if not s.active:
            return state, None
        return replace(state, consecutive_active_count=0), ResetCommand(s.neuron_id, s.time, mode.rst_duration)

    if isinstance(mode, Burst):
        if not s.active:
            return replace(state, consecutive_active_count=0), None
        count = state.consecutive_active_count + 1
        if count >= mode.spikes_per_burst:
            return replace(state, consecutive_active_count=0), ResetCommand(s.neuron_id, s.time, mode.rst_duration)
        return replace(state, consecutive_active_count=count), None

    if isinstance(mode, Adaptation):
        if not s.active:
            inactive = state.consecutive_inactive_count + 1
            duration = state.current_rst_duration
            if mode.decay_after is not None and inactive >= mode.decay_after:
                duration = mode.rst_init
            return replace(state, consecutive_inactive_count=inactive, current_rst_duration=duration), None
        command = ResetCommand(s.neuron_id, s.time, state.current_rst_duration)
        grown = min(state.current_rst_duration + mode.rst_increment, mode.rst_max)
        return replace(state, current_rst_duration=grown, consecutive_inactive_count=0), command

    raise TypeError(f"unknown controller mode {mode!r}")


def command_to_event(c: ResetCommand, latency: int = 0) -> SpikeEvent:
    if latency < 0:
        raise ValueError(f"feedback latency must be >= 0, got {latency}")
    return SpikeEvent(
        time=c.issue_time + latency,
        neuron_id=c.neuron_id,
        kind=EventKind.RESET,
        duration=c.duration,
    )


class PatternController:
    """One ControllerState per neuron plus the feedback latency"""

    def __init__(self, modes: Dict[int, ControllerMode], default: ControllerMode = Passive(), latency: int = 0):
        if latency < 0:
            raise ValueError(f"feedback latency must be >= 0, got {latency}")
        self.default = default
        self.latency = latency
        self.states: Dict[int, ControllerState] = {nid: initial_state(m) for nid, m in modes.items()}

    def mode_of(self, neuron_id: int) -> ControllerMode:
        state = self.states.get(neuron_id)
        return state.mode if state is not None else self.default

    def is_passive(self, neuron_id: int) -> bool:
        return isinstance(self.mode_of(neuron_id), Passive)

    def feed(self, s: AERSample) -> Optional[Tuple[ResetCommand, SpikeEvent]]:
        state = self.states.get(s.neuron_id)
        if state is None:
            state = initial_state(self.default)
        state, command = on_sample(state, s)
        self.states[s.neuron_id] = state
        if command is None:
            return None
        logger.debug("neuron %d: reset %d ps at t=%d ps", command.neuron_id, command.duration, command.issue_time)
        return command, command_to_event(command, self.latency)

    def bank(self, neuron_ids: Sequence[int]) -> "ControllerBank":
        """Array copy of the given neurons' states for population runs"""
        states = [self.states.get(nid) or initial_state(self.default) for nid in neuron_ids]
        return ControllerBank(states, self.latency)


_PASSIVE, _TONIC, _BURST, _ADAPTATION = range(4)


class ControllerBank:
    """ControllerStates of a neuron block held as arrays.

    `feed` applies one AER sample to each given row with the same rules as
    on_sample and returns the rows that issue a reset with their widths.
    """

    def __init__(self, states: Sequence[ControllerState], latency: int = 0):
        if latency < 0:
            raise ValueError(f"feedback latency must be >= 0, got {latency}")
        n = len(states)
        self.latency = latency
        self.kind = np.zeros(n, dtype=np.int8)
        self.width = np.zeros(n, dtype=np.int64)
        self.per_burst = np.ones(n, dtype=np.int64)
        self.rst_init = np.zeros(n, dtype=np.int64)
        self.rst_increment = np.zeros(n, dtype=np.int64)
        self.rst_max = np.zeros(n, dtype=np.int64)
        self.decay_after = np.zeros(n, dtype=np.int64)
        self.active_count = np.array([s.consecutive_active_count for s in states], dtype=np.int64)
        self.current = np.array([s.current_rst_duration for s in states], dtype=np.int64)
        self.inactive = np.array([s.consecutive_inactive_count for s in states], dtype=np.int64)
        for i, s in enumerate(states):
            mode = s.mode
            if isinstance(mode, Tonic):
                self.kind[i] = _TONIC
                self.width[i] = mode.rst_duration
            elif isinstance(mode, Burst):
                self.kind[i] = _BURST
                self.width[i] = mode.rst_duration
                self.per_burst[i] = mode.spikes_per_burst
            elif isinstance(mode, Adaptation):
                self.kind[i] = _ADAPTATION
                self.rst_init[i] = mode.rst_init
                self.rst_increment[i] = mode.rst_increment
                self.rst_max[i] = mode.rst_max
                self.decay_after[i] = mode.decay_after or 0
            elif not isinstance(mode, Passive):
                raise TypeError(f"unknown controller mode {mode!r}")

    def feed(self, rows: np.ndarray, active: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        kind = self.kind[rows]

        fire = (kind == _TONIC) & active
        width = np.where(fire, self.width[rows], 0)

        burst = kind == _BURST
        count = np.where(active, self.active_count[rows] + 1, 0)
        burst_fire = burst & active & (count >= self.per_burst[rows])
        self.active_count[rows[burst]] = np.where(burst_fire, 0, count)[burst]
        width = np.where(burst_fire, self.width[rows], width)
        fire |= burst_fire

        adapt = kind == _ADAPTATION
        current = self.current[rows]
        adapt_fire = adapt & active
        width = np.where(adapt_fire, current, width)
        fire |= adapt_fire
        inactive = np.where(active, 0, self.inactive[rows] + 1)
        decay = self.decay_after[rows]
        restored = ~active & (decay > 0) & (inactive >= decay)
        grown = np.minimum(current + self.rst_increment[rows], self.rst_max[rows])
        current = np.where(adapt_fire, grown, np.where(restored, self.rst_init[rows], current))
        self.current[rows[adapt]] = current[adapt]
        self.inactive[rows[adapt]] = inactive[adapt]

        return rows[fire], width[fire]

    @staticmethod
    def command(neuron_id: int, issue_time: int, duration: int) -> ResetCommand:
        return ResetCommand(neuron_id, issue_time, duration)
