"""
Deterministic discrete-event scheduler: timed input, reset and scan events
become piecewise-constant drive intervals over which each neuron is advanced.

Neurons only interact with the outside world through their own events and
their own controller feedback, so every neuron runs on its own timeline and
is integrated between its own breakpoints. Results are merged in neuron
order, which keeps the output identical whether timelines run one after the
other or on a thread pool.
"""
import heapq
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from aer_bus import AERSample, BusArray
from neuron_core import (
    BiasConfig,
    BiasTable,
    Crossing,
    DriveInput,
    NeuronState,
    advance,
    advance_many,
    steady_state,
)
from sim_errors import AddressError, EventContextError, PastEventError, SimulationError
from sim_random import JITTER_STREAM, generator
from trace_io import TraceRow

logger = logging.getLogger(__name__)

DEFAULT_TRACE_STRIDE_PS = 1_000_000

# jitter offsets are drawn this many occurrences at a time
JITTER_BLOCK = 256

# population runs expand pulse trains this far ahead at a time
POPULATION_CHUNK_PS = 50_000_000_000


class EventKind(str, Enum):
    RESET = "rst"
    INHIBITORY = "inh"
    EXCITATORY = "exc"

    @property
    def rank(self) -> int:
        """Same-instant order: resets before inhibition before excitation"""
        return _KIND_RANK[self]


_KIND_RANK = {EventKind.RESET: 0, EventKind.INHIBITORY: 1, EventKind.EXCITATORY: 2}


@dataclass(frozen=True)
class SpikeEvent:
    """A timed pulse request; `duration` is the pulse width and so the weight"""

    time: int
    neuron_id: int
    kind: EventKind
    duration: int
    seq: int = 0

    def __post_init__(self) -> None:
        if self.time < 0:
            raise ValueError(f"event time must be >= 0, got {self.time}")
        if self.duration <= 0:
            raise ValueError(f"event duration must be > 0, got {self.duration}")
        if self.neuron_id < 0:
            raise AddressError(f"neuron id must be >= 0, got {self.neuron_id}")


@dataclass(frozen=True)
class PulseWindow:
    start: int
    end: int
    kind: EventKind
    amplitude: Optional[float] = None

    def __post_init__(self) -> None:
        if self.start >= self.end:
            raise ValueError(f"pulse window must have start < end, got [{self.start}, {self.end})")

    def contains(self, t: int) -> bool:
        return self.start <= t < self.end


def pulse_amplitude(kind: EventKind, cfg: BiasConfig) -> float:
    if kind is EventKind.EXCITATORY:
        return cfg.i_pulse_exc
    if kind is EventKind.INHIBITORY:
        return cfg.i_pulse_inh
    return cfg.i_pulse_rst


def active_drive(t: int, windows: Iterable[PulseWindow], cfg: BiasConfig) -> DriveInput:
    """Sum the amplitudes of the windows covering `t`, per kind.

    Windows are half-open, so a pulse ending at `t` no longer drives. A
    window without an amplitude uses the bias set's pulse current.
    """
    totals = {EventKind.EXCITATORY: 0.0, EventKind.INHIBITORY: 0.0, EventKind.RESET: 0.0}
    for w in windows:
        if w.contains(t):
            totals[w.kind] += w.amplitude if w.amplitude is not None else pulse_amplitude(w.kind, cfg)
    return DriveInput(
        i_exc=totals[EventKind.EXCITATORY],
        i_inh=totals[EventKind.INHIBITORY],
        i_rst=totals[EventKind.RESET],
    )


class EventQueue:
    """Pending SpikeEvents ordered by (time, neuron_id, kind rank, seq)"""

    def __init__(self) -> None:
        self._heap: List[Tuple[int, int, int, int, SpikeEvent]] = []
        self._seq = itertools.count()
        self.now = 0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, e: SpikeEvent) -> SpikeEvent:
        """Queue `e` and return it stamped with its insertion number"""
        if e.time < self.now:
            raise PastEventError(f"event at t={e.time} ps is before now={self.now} ps")
        stored = replace(e, seq=next(self._seq))
        heapq.heappush(self._heap, (stored.time, stored.neuron_id, stored.kind.rank, stored.seq, stored))
        return stored

    def peek(self) -> Optional[SpikeEvent]:
        return self._heap[0][-1] if self._heap else None

    def pop(self) -> SpikeEvent:
        if not self._heap:
            raise IndexError("pop from an empty event queue")
        e = heapq.heappop(self._heap)[-1]
        self.now = e.time
        return e


def schedule(queue: EventQueue, e: SpikeEvent) -> EventQueue:
    queue.schedule(e)
    return queue


@dataclass(frozen=True)
class PulseTrain:
    """Periodic stimulus expanded lazily, one pending occurrence at a time.

    `count=None` repeats forever. With `jitter` each occurrence is delayed by
    a reproducible integer offset drawn uniformly from [0, jitter].
    """

    kind: EventKind
    neuron_id: int
    start: int
    duration: int
    every: Optional[int] = None
    count: Optional[int] = 1
    jitter: int = 0
    seed: int = 0
    train_id: int = 0

    def __post_init__(self) -> None:
        if self.start < 0 or self.duration <= 0:
            raise ValueError("pulse train needs start >= 0 and duration > 0")
        if self.every is None:
            if self.count != 1:
                raise ValueError("a pulse train without `every` has exactly one occurrence")
        elif self.every <= 0:
            raise ValueError(f"pulse train period must be > 0, got {self.every}")
        if self.count is not None and self.count < 1:
            raise ValueError(f"pulse train count must be >= 1, got {self.count}")
        if self.jitter < 0 or (self.jitter and (self.every is None or self.jitter >= self.every)):
            raise ValueError("pulse train jitter must be >= 0 and below its period")

    def occurrences(self) -> Iterator[SpikeEvent]:
        cursor = TrainCursor(self)
        k = 0
        while self.count is None or k < self.count:
            offset = int(cursor.offsets(k, k + 1)[0]) if self.jitter else 0
            yield SpikeEvent(self.start + k * (self.every or 0) + offset, self.neuron_id, self.kind, self.duration)
            k += 1


class TrainCursor:
    """Array expansion of a PulseTrain for population runs.

    Jitter is drawn in blocks of JITTER_BLOCK per occurrence index, so
    `occurrences()` and `take_before()` yield identical times.
    """

    def __init__(self, train: PulseTrain):
        self.train = train
        self.k = 0
        self._rng = generator(train.seed, JITTER_STREAM, train.neuron_id, train.train_id) if train.jitter else None
        self._buf = np.empty(0, dtype=np.int64)
        self._buf_start = 0

    @property
    def exhausted(self) -> bool:
        return self.train.count is not None and self.k >= self.train.count

    def offsets(self, k0: int, k1: int) -> np.ndarray:
        if self._rng is None:
            return np.zeros(k1 - k0, dtype=np.int64)
        drop = (k0 - self._buf_start) // JITTER_BLOCK * JITTER_BLOCK
        if drop > 0:
            self._buf = self._buf[drop:]
            self._buf_start += drop
        while self._buf_start + len(self._buf) < k1:
            block = self._rng.integers(0, self.train.jitter, size=JITTER_BLOCK, endpoint=True)
            self._buf = np.concatenate([self._buf, block])
        return self._buf[k0 - self._buf_start:k1 - self._buf_start]

    def take_before(self, t_end: int) -> np.ndarray:
        """Consume and return the occurrence times below `t_end`"""
        train = self.train
        if train.every is None:
            n = 1 if train.start < t_end else 0
        else:
            n = max(0, -(-(t_end - train.start) // train.every))
        if train.count is not None:
            n = min(n, train.count)
        if n <= self.k:
            return np.empty(0, dtype=np.int64)
        ks = np.arange(self.k, n, dtype=np.int64)
        times = train.start + ks * (train.every or 0) + self.offsets(self.k, n)
        # jitter stays below the period, so the times increase and the kept ones are a prefix
        kept = int(np.count_nonzero(times < t_end))
        self.k += kept
        return times[:kept]


@dataclass
class EventCounters:
    excitatory: int = 0
    inhibitory: int = 0
    reset: int = 0
    pulse_ends: int = 0
    samples: int = 0
    active_samples: int = 0
    crossings_up: int = 0
    crossings_down: int = 0
    intervals: int = 0

    def add(self, other: "EventCounters") -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))

    @property
    def inputs(self) -> int:
        return self.excitatory + self.inhibitory + self.reset

    @property
    def total(self) -> int:
        """Events handled: applied pulses, pulse ends and scan samples"""
        return self.inputs + self.pulse_ends + self.samples

    def as_dict(self) -> Dict[str, int]:
        data = asdict(self)
        data["total"] = self.total
        return data


# internal items share the timeline heap; queued SpikeEvents rank after
# pulse ends and samples and before stride points
_END = 0
_SAMPLE = 1
_EVENT_BASE = 2
_STRIDE = 9


class NeuronTimeline:
    """One neuron's committed state, pending items and recorded outputs"""

    def __init__(
        self,
        neuron_id: int,
        cfg: BiasConfig,
        state: NeuronState,
        buses: BusArray,
        controller: Any = None,
        traced: bool = False,
        trace_stride: int = DEFAULT_TRACE_STRIDE_PS,
    ):
        self.neuron_id = neuron_id
        self.cfg = cfg
        self.state = state
        self.committed_time = 0
        self.buses = buses
        self.controller = controller
        self.traced = traced
        self.trace_stride = trace_stride

        self.queue = EventQueue()
        self.windows: List[PulseWindow] = []
        self._items: List[Tuple[int, int, int, Any]] = []
        self._item_seq = itertools.count()
        self._trains: Dict[int, Iterator[SpikeEvent]] = {}

        self.counters = EventCounters()
        self.peak_depth = 0
        self.spike_times: List[int] = []
        self.down_times: List[int] = []
        self.active_sample_times: List[int] = []
        self.resets: List[Any] = []
        self.rows: List[TraceRow] = []
        self.notify = False
        self.notices: List[Tuple[str, Tuple[Any, ...]]] = []
        self._clock = 0

        self._push(buses.slot_time(neuron_id, 0), _SAMPLE, 0)
        if traced:
            self._push(0, _STRIDE, None)

    # ---------------- scheduling -----------------

    def _push(self, t: int, rank: int, payload: Any) -> None:
        heapq.heappush(self._items, (t, rank, next(self._item_seq), payload))
        self._track_depth()

    def _track_depth(self) -> None:
        depth = len(self._items) + len(self.queue)
        if depth > self.peak_depth:
            self.peak_depth = depth

    def schedule(self, e: SpikeEvent) -> SpikeEvent:
        stored = self.queue.schedule(e)
        self._track_depth()
        return stored

    def add_train(self, train: PulseTrain) -> None:
        occurrences = train.occurrences()
        first = next(occurrences, None)
        if first is not None:
            self._trains[self.schedule(first).seq] = occurrences

    def _next_key(self) -> Optional[Tuple[int, int]]:
        keys = []
        if self._items:
            keys.append(self._items[0][:2])
        head = self.queue.peek()
        if head is not None:
            keys.append((head.time, _EVENT_BASE + head.kind.rank))
        return min(keys) if keys else None

    # ---------------- main loop -----------------

    def run_until(self, t_end: int) -> None:
        """Process every breakpoint in [committed_time, t_end)"""
        try:
            while True:
                key = self._next_key()
                if key is None or key[0] >= t_end:
                    break
                self._clock = key[0]
                self._integrate_to(key[0])
                self._process_instant(key[0])
        except EventContextError:
            raise
        except (SimulationError, ValueError, ArithmeticError) as e:
            raise EventContextError(f"{type(e).__name__}: {e}", self.neuron_id, self._clock) from e

    def state_at(self, t: int) -> NeuronState:
        """State at `t` without committing it; no breakpoint may lie before `t`"""
        if t == self.committed_time:
            return self.state
        drive = active_drive(self.committed_time, self.windows, self.cfg)
        return advance(self.state, drive, t - self.committed_time, self.cfg).state

    def _integrate_to(self, t: int) -> None:
        dt = t - self.committed_time
        if dt == 0:
            return
        drive = active_drive(self.committed_time, self.windows, self.cfg)
        result = advance(self.state, drive, dt, self.cfg)
        for offset, direction in result.crossings:
            t_cross = self.committed_time + offset
            if direction is Crossing.UP:
                self.spike_times.append(t_cross)
                self.counters.crossings_up += 1
                if self.traced:
                    at_cross = advance(self.state, drive, offset, self.cfg).state if offset else self.state
                    self._emit(self._row(t_cross, at_cross, spike=True))
            else:
                self.down_times.append(t_cross)
                self.counters.crossings_down += 1
            if self.notify:
                self.notices.append(("on_crossing", (self.neuron_id, t_cross, direction)))
        self.state = result.state
        self.committed_time = t
        self.counters.intervals += 1

    def _pop_at(self, t: int) -> Optional[Tuple[int, Any]]:
        key = self._next_key()
        if key is None or key[0] != t:
            return None
        if self._items and self._items[0][:2] == key:
            _, rank, _, payload = heapq.heappop(self._items)
            return rank, payload
        return _EVENT_BASE, self.queue.pop()

    def _process_instant(self, t: int) -> None:
        aer_active = False
        while True:
            item = self._pop_at(t)
            if item is None:
                break
            rank, payload = item
            if rank == _END:
                self.windows.remove(payload)
                self.counters.pulse_ends += 1
            elif rank == _SAMPLE:
                aer_active = self._sample(t, payload) or aer_active
            elif rank == _STRIDE:
                self._push(t + self.trace_stride, _STRIDE, None)
            else:
                self._apply(payload)
        if self.traced:
            self._emit(self._row(t, self.state, aer_active=aer_active))

    def _apply(self, e: SpikeEvent) -> None:
        window = PulseWindow(e.time, e.time + e.duration, e.kind, pulse_amplitude(e.kind, self.cfg))
        self.windows.append(window)
        self._push(window.end, _END, window)
        if e.kind is EventKind.EXCITATORY:
            self.counters.excitatory += 1
        elif e.kind is EventKind.INHIBITORY:
            self.counters.inhibitory += 1
        else:
            self.counters.reset += 1
        occurrences = self._trains.pop(e.seq, None)
        if occurrences is not None:
            self._continue_train(occurrences)

    def _continue_train(self, occurrences: Iterator[SpikeEvent]) -> None:
        nxt = next(occurrences, None)
        if nxt is not None:
            self._trains[self.schedule(nxt).seq] = occurrences

    def _sample(self, t: int, k: int) -> bool:
        s: AERSample = self.buses.sample(self.neuron_id, self.state, t, self.cfg)
        self._push(self.buses.slot_time(self.neuron_id, k + 1), _SAMPLE, k + 1)
        self.counters.samples += 1
        if s.active:
            self.counters.active_samples += 1
            self.active_sample_times.append(t)
        if self.notify:
            self.notices.append(("on_sample", (s,)))
        if self.controller is not None:
            feedback = self.controller.feed(s)
            if feedback is not None:
                command, event = feedback
                self.resets.append(command)
                self.schedule(event)
                if self.notify:
                    self.notices.append(("on_reset", (command,)))
        return s.active

    # ---------------- trace -----------------

    def _row(self, t: int, state: NeuronState, aer_active: bool = False, spike: bool = False) -> TraceRow:
        kinds = {w.kind for w in self.windows if w.contains(t)}
        return TraceRow(
            time_ps=t,
            neuron_id=self.neuron_id,
            v_syn=state.v_syn,
            v_mem=state.v_mem,
            exc=EventKind.EXCITATORY in kinds,
            inh=EventKind.INHIBITORY in kinds,
            rst=EventKind.RESET in kinds,
            aer_active=aer_active,
            spike=spike,
        )

    def _emit(self, row: TraceRow) -> None:
        if self.rows and self.rows[-1].time_ps == row.time_ps:
            self.rows[-1] = self.rows[-1].merged(row)
        else:
            self.rows.append(row)


class EventEngine:
    """Population of neuron timelines sharing one clock.

    `controller` is any object with `feed(sample) -> (command, event) | None`
    (see pattern_controller.PatternController). Observers may define any of
    `on_crossing(neuron_id, t, direction)`, `on_sample(sample)` and
    `on_reset(command)`; they are called after each run_until in neuron order.
    """

    def __init__(
        self,
        biases: Sequence[BiasConfig],
        buses: Optional[BusArray] = None,
        controller: Any = None,
        initial_states: Optional[Sequence[NeuronState]] = None,
        trace_neurons: Iterable[int] = (),
        trace_stride: int = DEFAULT_TRACE_STRIDE_PS,
        workers: int = 1,
    ):
        n = len(biases)
        if n < 1:
            raise ValueError("the engine needs at least one neuron")
        if trace_stride <= 0:
            raise ValueError(f"trace stride must be > 0, got {trace_stride}")
        if workers < 1:
            raise ValueError(f"workers must be >= 1, got {workers}")
        self.buses = buses if buses is not None else BusArray.build(n)
        if self.buses.n_neurons != n:
            raise AddressError(f"bus array covers {self.buses.n_neurons} neurons, engine has {n}")
        if initial_states is None:
            initial_states = resting_states(biases)
        elif len(initial_states) != n:
            raise ValueError(f"{len(initial_states)} initial states for {n} neurons")
        traced = set(trace_neurons)
        for nid in traced:
            self._check_id(nid, n)

        self.controller = controller
        self.workers = workers
        self.now = 0
        self.observers: List[Any] = []
        self._timelines = [
            NeuronTimeline(nid, cfg, s, self.buses, controller, nid in traced, trace_stride)
            for nid, (cfg, s) in enumerate(zip(biases, initial_states))
        ]

    @staticmethod
    def _check_id(neuron_id: int, n: int) -> None:
        if not 0 <= neuron_id < n:
            raise AddressError(f"neuron {neuron_id} out of range for {n} neurons")

    @property
    def n_neurons(self) -> int:
        return len(self._timelines)

    def _timeline(self, neuron_id: int) -> NeuronTimeline:
        self._check_id(neuron_id, len(self._timelines))
        return self._timelines[neuron_id]

    def add_observer(self, observer: Any) -> None:
        self.observers.append(observer)
        for tl in self._timelines:
            tl.notify = True

    def schedule(self, e: SpikeEvent) -> SpikeEvent:
        tl = self._timeline(e.neuron_id)
        if e.time < self.now:
            raise PastEventError(f"event at t={e.time} ps is before now={self.now} ps")
        return tl.schedule(e)

    def add_train(self, train: PulseTrain) -> None:
        tl = self._timeline(train.neuron_id)
        if train.start < self.now:
            raise PastEventError(f"train starting at t={train.start} ps is before now={self.now} ps")
        tl.add_train(train)

    def run_until(self, t_end: int) -> None:
        """Advance every neuron through all breakpoints before `t_end`; now = t_end.

        Events at exactly `t_end` stay pending for the next call, so any
        sequence of calls reaching the same end time gives identical results.
        """
        if t_end < self.now:
            raise ValueError(f"cannot run backwards: t_end={t_end} ps < now={self.now} ps")
        if self.workers == 1 or len(self._timelines) == 1:
            for tl in self._timelines:
                tl.run_until(t_end)
        else:
            size = -(-len(self._timelines) // self.workers)
            shards = [self._timelines[i:i + size] for i in range(0, len(self._timelines), size)]
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                for _ in pool.map(lambda shard: [tl.run_until(t_end) for tl in shard], shards):
                    pass
        self.now = t_end
        self._dispatch()
        logger.debug("advanced %d neuron(s) to t=%d ps", len(self._timelines), t_end)

    def _dispatch(self) -> None:
        if not self.observers:
            return
        for tl in self._timelines:
            for method, args in tl.notices:
                for observer in self.observers:
                    callback = getattr(observer, method, None)
                    if callback is not None:
                        callback(*args)
            tl.notices.clear()

    # ---------------- results -----------------

    def state(self, neuron_id: int) -> NeuronState:
        return self._timeline(neuron_id).state_at(self.now)

    def spike_times(self, neuron_id: int) -> List[int]:
        return list(self._timeline(neuron_id).spike_times)

    def down_crossing_times(self, neuron_id: int) -> List[int]:
        return list(self._timeline(neuron_id).down_times)

    def active_sample_times(self, neuron_id: int) -> List[int]:
        return list(self._timeline(neuron_id).active_sample_times)

    def resets(self, neuron_id: int) -> List[Any]:
        return list(self._timeline(neuron_id).resets)

    def trace(self) -> List[TraceRow]:
        """Rows of all traced neurons ordered by (time, neuron_id)"""
        streams = [tl.rows for tl in self._timelines if tl.traced]
        return list(heapq.merge(*streams, key=lambda r: (r.time_ps, r.neuron_id)))

    def neuron_counters(self, neuron_id: int) -> EventCounters:
        return replace(self._timeline(neuron_id).counters)

    @property
    def counters(self) -> EventCounters:
        total = EventCounters()
        for tl in self._timelines:
            total.add(tl.counters)
        return total

    @property
    def peak_queue_depth(self) -> int:
        """Largest number of pending items any one neuron held at once"""
        return max(tl.peak_depth for tl in self._timelines)

    @property
    def pending(self) -> int:
        return sum(len(tl.queue) for tl in self._timelines)


# ---------------- population path -----------------

_INF = np.iinfo(np.int64).max
_RST = EventKind.RESET.rank
_INH = EventKind.INHIBITORY.rank
_EXC = EventKind.EXCITATORY.rank
_COUNTER_BY_RANK = {_RST: "reset", _INH: "inhibitory", _EXC: "excitatory"}
_RECORD_ARITY = {"up": 2, "down": 2, "active": 2, "reset": 3}


def resting_states(biases: Sequence[BiasConfig]) -> List[NeuronState]:
    """Steady state of every bias set, solved once per distinct set"""
    resting: Dict[BiasConfig, NeuronState] = {}
    states = []
    for cfg in biases:
        if cfg not in resting:
            resting[cfg] = steady_state(cfg)
        states.append(resting[cfg])
    return states


def _widen(values: np.ndarray, companion: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n, width = values.shape
    wider = np.full((n, 2 * width), _INF, dtype=np.int64)
    wider[:, :width] = values
    other = np.zeros((n, 2 * width), dtype=companion.dtype)
    other[:, :width] = companion
    return wider, other


class NeuronBlock:
    """A contiguous range of neurons advanced in lockstep with numpy.

    Each round moves every neuron to its own next breakpoint and handles
    that instant the way NeuronTimeline does: pulse ends, then the scan
    sample and its controller feedback, then resets, inhibition and
    excitation starting there. Blocks record no trace rows.
    """

    def __init__(
        self,
        first: int,
        biases: Sequence[BiasConfig],
        states: Sequence[NeuronState],
        buses: BusArray,
        controller: Any = None,
    ):
        n = len(biases)
        self.first = first
        self.biases = list(biases)
        self.ids = np.arange(first, first + n, dtype=np.int64)
        self.tab = BiasTable.from_configs(biases)
        self.v_syn = np.array([s.v_syn for s in states], dtype=float)
        self.v_mem = np.array([s.v_mem for s in states], dtype=float)
        self.committed = np.zeros(n, dtype=np.int64)
        self.now = 0

        self.buses = buses
        self.slot0 = np.array([buses.slot_time(int(nid), 0) for nid in self.ids], dtype=np.int64)
        self.period = np.array([buses.slot_time(int(nid), 1) for nid in self.ids], dtype=np.int64) - self.slot0
        self.k = np.zeros(n, dtype=np.int64)
        self.next_sample = self.slot0.copy()

        # open pulse windows per kind rank; their ends and pending controller resets
        self.open = np.zeros((n, 3), dtype=np.int64)
        self.ends = np.full((n, 2), _INF, dtype=np.int64)
        self.end_kind = np.zeros((n, 2), dtype=np.int8)
        self.reset_at = np.full((n, 1), _INF, dtype=np.int64)
        self.reset_width = np.zeros((n, 1), dtype=np.int64)

        self.bank = controller.bank(self.ids.tolist()) if controller is not None else None
        self.latency = self.bank.latency if self.bank is not None else 0

        self.cursors: List[Tuple[int, TrainCursor]] = []
        self.live_trains = np.zeros(n, dtype=np.int64)
        self._ev_t = np.array([_INF], dtype=np.int64)
        self._ev_kind = np.zeros(1, dtype=np.int8)
        self._ev_dur = np.zeros(1, dtype=np.int64)
        self._ev_last = np.zeros(1, dtype=np.int64)
        self._ev_ptr = np.zeros(n, dtype=np.int64)
        self._ev_stop = np.zeros(n, dtype=np.int64)

        self.counters = {f.name: np.zeros(n, dtype=np.int64) for f in fields(EventCounters)}
        self.peak = np.ones(n, dtype=np.int64)
        self._records: Dict[str, List[Tuple[np.ndarray, ...]]] = {name: [] for name in _RECORD_ARITY}
        self._cache: Dict[str, Tuple[List[np.ndarray], np.ndarray]] = {}
        self.notify = False
        self.notices: List[Tuple[int, int, str, Tuple[Any, ...]]] = []
        self._seq = itertools.count()

    def __len__(self) -> int:
        return len(self.ids)

    # ---------------- inputs -----------------

    def add_train(self, train: PulseTrain) -> None:
        local = train.neuron_id - self.first
        self.cursors.append((local, TrainCursor(train)))
        self.live_trains[local] += 1
        self._track(np.array([local]))

    def _materialize(self, t_end: int) -> None:
        """Expand every train up to `t_end` into arrays sorted by (neuron, time, kind)"""
        rows, times, kinds, durations, lasts = [], [], [], [], []
        for local, cursor in self.cursors:
            ts = cursor.take_before(t_end)
            if ts.size == 0:
                continue
            last = np.zeros(ts.size, dtype=np.int64)
            if cursor.exhausted:
                last[-1] = 1
            rows.append(np.full(ts.size, local, dtype=np.int64))
            times.append(ts)
            kinds.append(np.full(ts.size, cursor.train.kind.rank, dtype=np.int8))
            durations.append(np.full(ts.size, cursor.train.duration, dtype=np.int64))
            lasts.append(last)
        self.cursors = [(local, c) for local, c in self.cursors if not c.exhausted]
        if rows:
            row = np.concatenate(rows)
            t = np.concatenate(times)
            kind = np.concatenate(kinds)
            order = np.lexsort((kind, t, row))
            row = row[order]
            self._ev_t = np.append(t[order], _INF)
            self._ev_kind = np.append(kind[order], 0).astype(np.int8)
            self._ev_dur = np.append(np.concatenate(durations)[order], 0)
            self._ev_last = np.append(np.concatenate(lasts)[order], 0)
        else:
            row = np.empty(0, dtype=np.int64)
            self._ev_t = np.array([_INF], dtype=np.int64)
            self._ev_kind = np.zeros(1, dtype=np.int8)
            self._ev_dur = np.zeros(1, dtype=np.int64)
            self._ev_last = np.zeros(1, dtype=np.int64)
        local_ids = np.arange(len(self.ids))
        self._ev_ptr = np.searchsorted(row, local_ids, side="left").astype(np.int64)
        self._ev_stop = np.searchsorted(row, local_ids, side="right").astype(np.int64)

    def _next_input(self, rows: np.ndarray) -> np.ndarray:
        p = self._ev_ptr[rows]
        return np.where(p < self._ev_stop[rows], self._ev_t[p], _INF)

    # ---------------- main loop -----------------

    def run_until(self, t_end: int, chunk: int) -> None:
        """Process every breakpoint in [now, t_end), `chunk` picoseconds of input at a time"""
        while self.now < t_end:
            chunk_end = min(t_end, self.now + chunk)
            self._materialize(chunk_end)
            self._run_chunk(chunk_end)
            self.now = chunk_end
        self._cache.clear()

    def _run_chunk(self, t_end: int) -> None:
        everyone = np.arange(len(self.ids))
        while True:
            nxt = np.minimum(self.next_sample, self._next_input(everyone))
            nxt = np.minimum(nxt, np.minimum(self.ends.min(axis=1), self.reset_at.min(axis=1)))
            rows = np.flatnonzero(nxt < t_end)
            if rows.size == 0:
                break
            t = nxt[rows]
            self._integrate(rows, t)
            self._instant(rows, t)

    def _integrate(self, rows: np.ndarray, t: np.ndarray) -> None:
        dt = t - self.committed[rows]
        tab = self.tab.take(rows)
        result = advance_many(
            self.v_syn[rows],
            self.v_mem[rows],
            self.open[rows, _EXC] * tab.i_pulse_exc,
            self.open[rows, _INH] * tab.i_pulse_inh,
            self.open[rows, _RST] * tab.i_pulse_rst,
            dt,
            tab,
        )
        if result.crossing_rows.size:
            who = rows[result.crossing_rows]
            when = self.committed[who] + result.crossing_offsets
            up = result.crossing_up
            self._records["up"].append((who[up], when[up]))
            self._records["down"].append((who[~up], when[~up]))
            np.add.at(self.counters["crossings_up"], who[up], 1)
            np.add.at(self.counters["crossings_down"], who[~up], 1)
            if self.notify:
                for w, tc, u in zip(who.tolist(), when.tolist(), up.tolist()):
                    direction = Crossing.UP if u else Crossing.DOWN
                    self._notice(w, "on_crossing", (int(self.ids[w]), tc, direction))
        self.v_syn[rows] = result.v_syn
        self.v_mem[rows] = result.v_mem
        self.counters["intervals"][rows] += dt > 0
        self.committed[rows] = t

    def _instant(self, rows: np.ndarray, t: np.ndarray) -> None:
        ended = self.ends[rows] == t[:, None]
        if ended.any():
            kinds = self.end_kind[rows]
            for rank in (_RST, _INH, _EXC):
                self.open[rows, rank] -= (ended & (kinds == rank)).sum(axis=1)
            self.counters["pulse_ends"][rows] += ended.sum(axis=1)
            ends = self.ends[rows]
            ends[ended] = _INF
            self.ends[rows] = ends
        sampled = self.next_sample[rows] == t
        if sampled.any():
            self._sample(rows[sampled], t[sampled])
        self._apply_resets(rows, t)
        self._apply_inputs(rows, t)
        self._track(rows)

    def _sample(self, rows: np.ndarray, t: np.ndarray) -> None:
        active = self.v_mem[rows] >= _pick_column(self.tab.v_threshold, rows)
        self.counters["samples"][rows] += 1
        self.counters["active_samples"][rows] += active
        self._records["active"].append((rows[active], t[active]))
        self.k[rows] += 1
        self.next_sample[rows] = self.slot0[rows] + self.k[rows] * self.period[rows]
        if self.notify:
            for r, ts, a in zip(rows.tolist(), t.tolist(), active.tolist()):
                nid = int(self.ids[r])
                address = self.buses.locate(nid)[1]
                self._notice(r, "on_sample", (AERSample(time=ts, neuron_id=nid, address=address, active=a),))
        if self.bank is None:
            return
        fired, widths = self.bank.feed(rows, active)
        if fired.size == 0:
            return
        issued = self.committed[fired]
        self._records["reset"].append((fired, issued, widths))
        self._queue_resets(fired, issued + self.latency, widths)
        if self.notify:
            for r, ts, w in zip(fired.tolist(), issued.tolist(), widths.tolist()):
                self._notice(r, "on_reset", (self.bank.command(int(self.ids[r]), ts, w),))

    def _queue_resets(self, rows: np.ndarray, times: np.ndarray, widths: np.ndarray) -> None:
        free = self.reset_at[rows] == _INF
        if not free.any(axis=1).all():
            self.reset_at, self.reset_width = _widen(self.reset_at, self.reset_width)
            free = self.reset_at[rows] == _INF
        col = free.argmax(axis=1)
        self.reset_at[rows, col] = times
        self.reset_width[rows, col] = widths

    def _add_ends(self, rows: np.ndarray, times: np.ndarray, kinds: Any) -> None:
        free = self.ends[rows] == _INF
        if not free.any(axis=1).all():
            self.ends, self.end_kind = _widen(self.ends, self.end_kind)
            free = self.ends[rows] == _INF
        col = free.argmax(axis=1)
        self.ends[rows, col] = times
        self.end_kind[rows, col] = kinds

    def _apply_resets(self, rows: np.ndarray, t: np.ndarray) -> None:
        due = self.reset_at[rows] == t[:, None]
        if not due.any():
            return
        for col in np.flatnonzero(due.any(axis=0)):
            hit = due[:, col]
            r = rows[hit]
            self._add_ends(r, t[hit] + self.reset_width[r, col], _RST)
            self.open[r, _RST] += 1
            self.counters["reset"][r] += 1
            self.reset_at[r, col] = _INF

    def _apply_inputs(self, rows: np.ndarray, t: np.ndarray) -> None:
        while True:
            hit = self._next_input(rows) == t
            if not hit.any():
                return
            r = rows[hit]
            p = self._ev_ptr[r]
            kinds = self._ev_kind[p]
            self._add_ends(r, t[hit] + self._ev_dur[p], kinds)
            for rank, name in _COUNTER_BY_RANK.items():
                mine = r[kinds == rank]
                self.open[mine, rank] += 1
                self.counters[name][mine] += 1
            self.live_trains[r] -= self._ev_last[p]
            self._ev_ptr[r] += 1

    def _track(self, rows: np.ndarray) -> None:
        depth = (
            1
            + (self.ends[rows] != _INF).sum(axis=1)
            + (self.reset_at[rows] != _INF).sum(axis=1)
            + self.live_trains[rows]
        )
        self.peak[rows] = np.maximum(self.peak[rows], depth)

    def _notice(self, row: int, method: str, args: Tuple[Any, ...]) -> None:
        self.notices.append((row, next(self._seq), method, args))

    # ---------------- results -----------------

    @property
    def pending(self) -> int:
        return int(self.live_trains.sum() + (self.reset_at != _INF).sum())

    def _collected(self, name: str) -> Tuple[List[np.ndarray], np.ndarray]:
        cached = self._cache.get(name)
        if cached is not None:
            return cached
        chunks = self._records[name]
        if chunks:
            parts = [np.concatenate(column) for column in zip(*chunks)]
        else:
            parts = [np.empty(0, dtype=np.int64) for _ in range(_RECORD_ARITY[name])]
        # stable, so each neuron keeps its records in time order
        order = np.argsort(parts[0], kind="stable")
        parts = [p[order] for p in parts]
        self._records[name] = [tuple(parts)] if parts[0].size else []
        bounds = np.searchsorted(parts[0], np.arange(len(self.ids) + 1))
        self._cache[name] = (parts, bounds)
        return parts, bounds

    def records(self, name: str, local: int) -> List[Tuple[int, ...]]:
        parts, bounds = self._collected(name)
        lo, hi = bounds[local], bounds[local + 1]
        return list(zip(*(p[lo:hi].tolist() for p in parts[1:])))

    def state(self, local: int) -> NeuronState:
        state = NeuronState(float(self.v_syn[local]), float(self.v_mem[local]))
        dt = self.now - int(self.committed[local])
        if dt == 0:
            return state
        cfg = self.biases[local]
        drive = DriveInput(
            i_exc=int(self.open[local, _EXC]) * cfg.i_pulse_exc,
            i_inh=int(self.open[local, _INH]) * cfg.i_pulse_inh,
            i_rst=int(self.open[local, _RST]) * cfg.i_pulse_rst,
        )
        return advance(state, drive, dt, cfg).state

    def neuron_counters(self, local: int) -> EventCounters:
        return EventCounters(**{name: int(values[local]) for name, values in self.counters.items()})

    def totals(self) -> EventCounters:
        return EventCounters(**{name: int(values.sum()) for name, values in self.counters.items()})


def _pick_column(value: Any, rows: np.ndarray) -> Any:
    return value if np.ndim(value) == 0 else value[rows]


class PopulationEngine:
    """EventEngine's interface over numpy neuron blocks, for untraced runs.

    Produces the same counters, crossings, samples and resets as
    EventEngine up to floating-point rounding. `controller` must also
    offer `bank(neuron_ids)` (see pattern_controller.PatternController).
    """

    def __init__(
        self,
        biases: Sequence[BiasConfig],
        buses: Optional[BusArray] = None,
        controller: Any = None,
        initial_states: Optional[Sequence[NeuronState]] = None,
        workers: int = 1,
        chunk: int = POPULATION_CHUNK_PS,
    ):
        n = len(biases)
        if n < 1:
            raise ValueError("the engine needs at least one neuron")
        if workers < 1:
            raise ValueError(f"workers must be >= 1, got {workers}")
        if chunk <= 0:
            raise ValueError(f"input chunk must be > 0, got {chunk}")
        self.buses = buses if buses is not None else BusArray.build(n)
        if self.buses.n_neurons != n:
            raise AddressError(f"bus array covers {self.buses.n_neurons} neurons, engine has {n}")
        if initial_states is None:
            initial_states = resting_states(biases)
        elif len(initial_states) != n:
            raise ValueError(f"{len(initial_states)} initial states for {n} neurons")

        self.controller = controller
        self.workers = workers
        self.chunk = chunk
        self.now = 0
        self.observers: List[Any] = []
        self._size = -(-n // workers)
        self._n = n
        self._blocks = [
            NeuronBlock(i, biases[i:i + self._size], initial_states[i:i + self._size], self.buses, controller)
            for i in range(0, n, self._size)
        ]

    @property
    def n_neurons(self) -> int:
        return self._n

    def _locate(self, neuron_id: int) -> Tuple[NeuronBlock, int]:
        EventEngine._check_id(neuron_id, self._n)
        return self._blocks[neuron_id // self._size], neuron_id % self._size

    def add_observer(self, observer: Any) -> None:
        self.observers.append(observer)
        for block in self._blocks:
            block.notify = True

    def schedule(self, e: SpikeEvent) -> SpikeEvent:
        if e.time < self.now:
            raise PastEventError(f"event at t={e.time} ps is before now={self.now} ps")
        block, _ = self._locate(e.neuron_id)
        block.add_train(PulseTrain(kind=e.kind, neuron_id=e.neuron_id, start=e.time, duration=e.duration))
        return e

    def add_train(self, train: PulseTrain) -> None:
        block, _ = self._locate(train.neuron_id)
        if train.start < self.now:
            raise PastEventError(f"train starting at t={train.start} ps is before now={self.now} ps")
        block.add_train(train)

    def _run_block(self, block: NeuronBlock, t_end: int) -> None:
        try:
            block.run_until(t_end, self.chunk)
        except EventContextError:
            raise
        except (SimulationError, ValueError, ArithmeticError) as e:
            raise EventContextError(f"{type(e).__name__}: {e}", block.first, block.now) from e

    def run_until(self, t_end: int) -> None:
        """Same contract as EventEngine.run_until"""
        if t_end < self.now:
            raise ValueError(f"cannot run backwards: t_end={t_end} ps < now={self.now} ps")
        if self.workers == 1 or len(self._blocks) == 1:
            for block in self._blocks:
                self._run_block(block, t_end)
        else:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                for _ in pool.map(lambda block: self._run_block(block, t_end), self._blocks):
                    pass
        self.now = t_end
        self._dispatch()
        logger.debug("advanced %d neuron(s) in %d block(s) to t=%d ps", self._n, len(self._blocks), t_end)

    def _dispatch(self) -> None:
        for block in self._blocks:
            if not self.observers:
                block.notices.clear()
                continue
            for _, _, method, args in sorted(block.notices, key=lambda notice: notice[:2]):
                for observer in self.observers:
                    callback = getattr(observer, method, None)
                    if callback is not None:
                        callback(*args)
            block.notices.clear()

    # ---------------- results -----------------

    def state(self, neuron_id: int) -> NeuronState:
        block, local = self._locate(neuron_id)
        return block.state(local)

    def spike_times(self, neuron_id: int) -> List[int]:
        block, local = self._locate(neuron_id)
        return [t for (t,) in block.records("up", local)]

    def down_crossing_times(self, neuron_id: int) -> List[int]:
        block, local = self._locate(neuron_id)
        return [t for (t,) in block.records("down", local)]

    def active_sample_times(self, neuron_id: int) -> List[int]:
        block, local = self._locate(neuron_id)
        return [t for (t,) in block.records("active", local)]

    def resets(self, neuron_id: int) -> List[Any]:
        block, local = self._locate(neuron_id)
        if block.bank is None:
            return []
        return [block.bank.command(neuron_id, t, w) for t, w in block.records("reset", local)]

    def trace(self) -> List[TraceRow]:
        return []

    def neuron_counters(self, neuron_id: int) -> EventCounters:
        block, local = self._locate(neuron_id)
        return block.neuron_counters(local)

    @property
    def counters(self) -> EventCounters:
        total = EventCounters()
        for block in self._blocks:
            total.add(block.totals())
        return total

    @property
    def peak_queue_depth(self) -> int:
        return max(int(block.peak.max()) for block in self._blocks)

    @property
    def pending(self) -> int:
        return sum(block.pending for block in self._blocks)
