"""
Named stimulus programs, scenario runs and the throughput benchmark.

Every program starts its inputs 0.7 ms into the run so that no pulse
overlaps the neuron's own scan slot at whole milliseconds.
"""
import logging
import time
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

from event_engine import EventCounters, EventEngine, PopulationEngine
from neuron_core import NeuronState
from sim_config import ScenarioConfig, apply_mismatch, load_config
from sim_errors import SimulationError
from time_units import PS_PER_UNIT
from trace_io import TraceRow

logger = logging.getLogger(__name__)

PS_PER_S = PS_PER_UNIT["s"]


def fig3a(spike_count: int = 4) -> ScenarioConfig:
    """Tonic spiking: `spike_count` 24 ns inputs at 1 ms, tonic 24 ns resets.

    Four inputs are just enough to reach threshold; three are not.
    """
    return load_config(
        "duration=10ms\n"
        "controller.mode=tonic:24ns\n"
        f"stimulus.input=exc neuron=0 at=0.7ms duration=24ns every=1ms count={spike_count}\n",
        name="fig3a" if spike_count == 4 else f"fig3a_{spike_count}",
    )


def fig3b() -> ScenarioConfig:
    """Bursting: 32 ns inputs every 1 ms keep V_mem high, a reset follows every fifth active sample"""
    return load_config(
        "duration=30ms\n"
        "controller.mode=burst:5:24ns\n"
        "stimulus.input=exc neuron=0 at=0.7ms duration=32ns every=1ms\n",
        name="fig3b",
    )


def fig3b_single() -> ScenarioConfig:
    """The four-input bursting program; under one bias set it never reaches five active samples"""
    return load_config(
        "duration=10ms\n"
        "controller.mode=burst:5:24ns\n"
        "stimulus.input=exc neuron=0 at=0.7ms duration=32ns every=1ms count=4\n",
        name="fig3b_single",
    )


def fig3c(duration: str = "50ms") -> ScenarioConfig:
    """Adaptation: one 24 ns input per ms, reset width 3 ns growing by 3 ns up to 32 ns"""
    return load_config(
        f"duration={duration}\n"
        "controller.mode=adaptation:3ns:3ns:32ns\n"
        "stimulus.input=exc neuron=0 at=0.7ms duration=24ns every=1ms\n",
        name="fig3c",
    )


def fig3d() -> ScenarioConfig:
    """Inhibition: E, I, E, I at 0.5 ms spacing, then relaxation"""
    return load_config(
        "duration=15ms\n"
        "controller.mode=passive\n"
        "stimulus.exc=exc neuron=0 at=0.7ms duration=24ns every=1ms count=2\n"
        "stimulus.inh=inh neuron=0 at=1.2ms duration=24ns every=1ms count=2\n",
        name="fig3d",
    )


def bench_config(n_neurons: int, duration: str = "1s", seed: int = 0, buses: Optional[int] = None) -> ScenarioConfig:
    """Every neuron gets one jittered 24 ns input per ms; no traces"""
    if buses is None:
        buses = max(1, -(-n_neurons // 31_250))
    return load_config(
        f"n_neurons={n_neurons}\n"
        f"duration={duration}\n"
        f"seed={seed}\n"
        f"scan.buses={buses}\n"
        "stimulus.drive=exc neuron=* at=50us duration=24ns every=1ms jitter=900us\n"
        "trace.neurons=none\n",
        name="bench",
    )


SCENARIOS: Dict[str, Callable[[], ScenarioConfig]] = {
    "fig3a": fig3a,
    "fig3b": fig3b,
    "fig3b_single": fig3b_single,
    "fig3c": fig3c,
    "fig3d": fig3d,
}


def get_scenario(name: str) -> ScenarioConfig:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return SCENARIOS[name]()


@dataclass
class NeuronSummary:
    neuron_id: int
    spike_times: List[int]
    active_sample_times: List[int]
    resets: List[Tuple[int, int]]
    final_state: NeuronState

    @property
    def spike_count(self) -> int:
        return len(self.spike_times)

    @property
    def reset_durations(self) -> List[int]:
        return [duration for _, duration in self.resets]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "neuron_id": self.neuron_id,
            "spike_count": self.spike_count,
            "spike_times_ps": self.spike_times,
            "aer_active_times_ps": self.active_sample_times,
            "resets": [{"time_ps": t, "duration_ps": d} for t, d in self.resets],
            "final_state": {"v_syn": self.final_state.v_syn, "v_mem": self.final_state.v_mem},
        }


@dataclass
class RunSummary:
    scenario: str
    config: Dict[str, Any]
    neurons: List[NeuronSummary]
    counters: EventCounters
    peak_queue_depth: int
    model_seconds: float
    wall_seconds: float = 0.0
    trace_sha256: Optional[str] = None

    @property
    def total_spikes(self) -> int:
        return sum(n.spike_count for n in self.neurons)

    @property
    def throughput(self) -> float:
        """Neuron-seconds of model time per wall-clock second"""
        if self.wall_seconds <= 0.0:
            return float("inf")
        return len(self.neurons) * self.model_seconds / self.wall_seconds

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario,
            "config": self.config,
            "total_spikes": self.total_spikes,
            "neurons": [n.to_dict() for n in self.neurons],
            "events": self.counters.as_dict(),
            "peak_queue_depth": self.peak_queue_depth,
            "model_seconds": self.model_seconds,
            "trace_sha256": self.trace_sha256,
            "timing": {"wall_seconds": self.wall_seconds, "throughput": self.throughput},
        }


# untraced populations at least this large run on the numpy path
POPULATION_MIN_NEURONS = 64


def build_engine(
    cfg: ScenarioConfig, workers: int = 1, vectorized: Optional[bool] = None
) -> Union[EventEngine, PopulationEngine]:
    """Engine wired to the config's buses, controller and stimuli.

    `vectorized=None` picks the numpy population path for large untraced
    runs and per-neuron timelines otherwise.
    """
    if vectorized is None:
        vectorized = not cfg.trace_neurons and cfg.n_neurons >= POPULATION_MIN_NEURONS
    if vectorized and cfg.trace_neurons:
        raise ValueError("the population engine records no traces; set trace.neurons=none")
    if vectorized:
        engine: Union[EventEngine, PopulationEngine] = PopulationEngine(
            apply_mismatch(cfg),
            buses=cfg.bus_array(),
            controller=cfg.controller(),
            workers=workers,
        )
    else:
        engine = EventEngine(
            apply_mismatch(cfg),
            buses=cfg.bus_array(),
            controller=cfg.controller(),
            trace_neurons=cfg.trace_neurons,
            trace_stride=cfg.trace_stride,
            workers=workers,
        )
    for train in cfg.trains():
        engine.add_train(train)
    return engine


def summarize(
    cfg: ScenarioConfig, engine: Union[EventEngine, PopulationEngine], wall_seconds: float = 0.0
) -> RunSummary:
    neurons = [
        NeuronSummary(
            neuron_id=nid,
            spike_times=engine.spike_times(nid),
            active_sample_times=engine.active_sample_times(nid),
            resets=[(c.issue_time, c.duration) for c in engine.resets(nid)],
            final_state=engine.state(nid),
        )
        for nid in range(engine.n_neurons)
    ]
    return RunSummary(
        scenario=cfg.name,
        config=cfg.to_dict(),
        neurons=neurons,
        counters=engine.counters,
        peak_queue_depth=engine.peak_queue_depth,
        model_seconds=engine.now / PS_PER_S,
        wall_seconds=wall_seconds,
    )


def run_scenario(cfg: ScenarioConfig, workers: int = 1) -> Tuple[List[TraceRow], RunSummary]:
    """Wire engine, scan buses and controller, run to cfg.duration"""
    logger.info("running scenario %r: %d neuron(s) for %d ps", cfg.name, cfg.n_neurons, cfg.duration)
    try:
        engine = build_engine(cfg, workers)
        start = time.perf_counter()
        engine.run_until(cfg.duration)
        wall = time.perf_counter() - start
    except SimulationError as e:
        raise SimulationError(f"scenario {cfg.name!r}: {e}") from e
    summary = summarize(cfg, engine, wall)
    logger.info(
        "scenario %r finished: %d spike(s), %d event(s) in %.2f s",
        cfg.name, summary.total_spikes, summary.counters.total, wall,
    )
    return engine.trace(), summary


@dataclass
class BenchmarkReport:
    n_neurons: int
    model_seconds: float
    counters: EventCounters
    peak_queue_depth: int
    wall_seconds: float = 0.0
    workers: int = 1

    @property
    def throughput(self) -> float:
        if self.wall_seconds <= 0.0:
            return float("inf")
        return self.n_neurons * self.model_seconds / self.wall_seconds

    def content(self) -> Dict[str, Any]:
        """Everything except timing; identical across repeated runs.

        `workload` holds the counts fixed by the stimulus program alone,
        which scale exactly with the population size.
        """
        return {
            "n_neurons": self.n_neurons,
            "model_seconds": self.model_seconds,
            "events": self.counters.as_dict(),
            "workload": {
                "inputs": self.counters.inputs,
                "pulse_ends": self.counters.pulse_ends,
                "samples": self.counters.samples,
                "total": self.counters.total,
            },
            "peak_queue_depth": self.peak_queue_depth,
        }

    def to_dict(self) -> Dict[str, Any]:
        data = self.content()
        data["timing"] = {
            "wall_seconds": self.wall_seconds,
            "throughput_neuron_s_per_s": self.throughput,
            "workers": self.workers,
        }
        return data


def benchmark(cfg: ScenarioConfig, workers: int = 1) -> BenchmarkReport:
    """Run `cfg` untraced and report neuron-seconds per wall-second"""
    untraced = replace(cfg, trace_neurons=())
    engine = build_engine(untraced, workers, vectorized=True)
    start = time.perf_counter()
    engine.run_until(untraced.duration)
    wall = time.perf_counter() - start
    report = BenchmarkReport(
        n_neurons=cfg.n_neurons,
        model_seconds=untraced.duration / PS_PER_S,
        counters=engine.counters,
        peak_queue_depth=engine.peak_queue_depth,
        wall_seconds=wall,
        workers=workers,
    )
    logger.info(
        "benchmark: %d neuron(s) x %.3f s in %.2f s wall (%.1f neuron-s/s)",
        report.n_neurons, report.model_seconds, wall, report.throughput,
    )
    return report
