"""
Tests for the numpy population path against the per-neuron engine
"""
import os
import sys
from dataclasses import replace

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from event_engine import EventKind, PopulationEngine, PulseTrain, SpikeEvent, TrainCursor  # noqa: E402
from neuron_core import (  # noqa: E402
    NO_DRIVE,
    BiasTable,
    Crossing,
    DriveInput,
    NeuronState,
    advance,
    advance_many,
    default_bias,
)
from scenarios import build_engine  # noqa: E402
from sim_config import load_config  # noqa: E402
from sim_errors import PastEventError  # noqa: E402

NS = 1_000
US = 1_000_000
MS = 1_000_000_000


def test_advance_many_matches_scalar():
    """Each row follows the scalar integrator, crossings included"""
    cfg = default_bias()
    cases = [
        (NeuronState(0.02, 0.14), NO_DRIVE, 1 * MS),
        (NeuronState(0.02, 0.14), DriveInput(i_exc=cfg.i_pulse_exc), 24 * NS),
        (NeuronState(1.0, 0.5), NO_DRIVE, 1 * MS),
        (NeuronState(0.02, 0.65), DriveInput(i_rst=cfg.i_pulse_rst), 24 * NS),
        (NeuronState(0.0, 0.3), NO_DRIVE, 200 * US),
        (NeuronState(0.5, 0.5), NO_DRIVE, 0),
    ]
    result = advance_many(
        [c[0].v_syn for c in cases],
        [c[0].v_mem for c in cases],
        np.array([c[1].i_exc for c in cases]),
        np.array([c[1].i_inh for c in cases]),
        np.array([c[1].i_rst for c in cases]),
        np.array([c[2] for c in cases]),
        BiasTable.from_configs([cfg] * len(cases)),
    )
    for row, (state, drive, dt) in enumerate(cases):
        expected = advance(state, drive, dt, cfg)
        assert result.v_syn[row] == pytest.approx(expected.state.v_syn, abs=1e-7)
        assert result.v_mem[row] == pytest.approx(expected.state.v_mem, abs=1e-7)
        mine = result.crossing_rows == row
        assert mine.sum() == len(expected.crossings)
        found = zip(result.crossing_offsets[mine], result.crossing_up[mine], expected.crossings)
        for offset, up, (want, direction) in found:
            assert abs(int(offset) - want) <= 1_000
            assert bool(up) == (direction is Crossing.UP)


def test_bias_table_keeps_shared_fields_scalar():
    """Only mismatched fields become arrays"""
    cfg = default_bias()
    other = replace(cfg, c_mem=20e-15)
    table = BiasTable.from_configs([cfg, other, cfg])
    assert np.ndim(table.c_syn) == 0
    assert list(table.c_mem) == [18e-15, 20e-15, 18e-15]
    assert list(table.take(np.array([1])).c_mem) == [20e-15]
    assert BiasTable.from_configs([cfg] * 4).shared


def test_cursor_matches_lazy_occurrences():
    """Array expansion and lazy expansion give the same jittered times"""
    train = PulseTrain(EventKind.EXCITATORY, 3, 50 * US, 24 * NS, every=MS, count=600, jitter=900 * US, seed=4)
    lazy = [e.time for e in train.occurrences()]
    cursor = TrainCursor(train)
    taken = np.concatenate([cursor.take_before(t) for t in (7 * MS, 300 * MS, 301 * MS, 700 * MS)])
    assert taken.tolist() == lazy
    assert cursor.exhausted


MIXED = (
    "n_neurons=6\nduration=40ms\nseed=11\n"
    "controller.mode=tonic:24ns\n"
    "controller.mode.1=burst:3:24ns\n"
    "controller.mode.2=adaptation:3ns:3ns:32ns:3\n"
    "controller.mode.3=passive\n"
    "controller.latency={latency}\n"
    "stimulus.drive=exc neuron=* at=0.7ms duration=32ns every=1ms jitter=200us\n"
    "stimulus.block=inh neuron=4 at=8.2ms duration=24ns every=5ms count=4\n"
    "trace.neurons=none\nmismatch.sigma=0.03\n"
)


@pytest.mark.parametrize("latency", ["0", "50us"])
def test_population_matches_timelines(latency):
    """Counts, samples and resets agree with the per-neuron engine"""
    cfg = load_config(MIXED.format(latency=latency))
    runs = []
    for vectorized in (False, True):
        engine = build_engine(cfg, vectorized=vectorized)
        engine.run_until(cfg.duration)
        runs.append(engine)
    timelines, population = runs
    assert isinstance(population, PopulationEngine)
    assert population.counters == timelines.counters
    assert population.peak_queue_depth == timelines.peak_queue_depth
    for nid in range(cfg.n_neurons):
        assert population.active_sample_times(nid) == timelines.active_sample_times(nid)
        assert population.resets(nid) == timelines.resets(nid)
        assert population.neuron_counters(nid) == timelines.neuron_counters(nid)
        spikes = population.spike_times(nid)
        assert len(spikes) == len(timelines.spike_times(nid))
        assert all(abs(a - b) <= 1_000 for a, b in zip(spikes, timelines.spike_times(nid)))
        assert population.state(nid).v_mem == pytest.approx(timelines.state(nid).v_mem, abs=1e-6)


def test_split_runs_match_one_run():
    """Stopping at arbitrary instants changes nothing"""
    cfg = load_config(MIXED.format(latency="50us"))
    whole = build_engine(cfg, vectorized=True)
    whole.run_until(cfg.duration)
    split = build_engine(cfg, vectorized=True)
    for t in (1, 3 * MS + 17, 3 * MS + 17, 20 * MS, cfg.duration):
        split.run_until(t)
    assert split.counters == whole.counters
    assert [split.resets(n) for n in range(6)] == [whole.resets(n) for n in range(6)]
    assert [split.spike_times(n) for n in range(6)] == [whole.spike_times(n) for n in range(6)]


def test_blocks_on_threads_match_one_block():
    """Worker count only changes how neurons are split into blocks"""
    cfg = load_config(MIXED.format(latency="0"))
    runs = []
    for workers in (1, 4):
        engine = build_engine(cfg, workers=workers, vectorized=True)
        engine.run_until(cfg.duration)
        runs.append(engine)
    assert runs[0].counters == runs[1].counters
    assert [runs[0].spike_times(n) for n in range(6)] == [runs[1].spike_times(n) for n in range(6)]


def test_population_events_at_run_end_stay_pending():
    """Breakpoints at exactly t_end are left for the next call"""
    engine = PopulationEngine([default_bias()] * 2)
    engine.schedule(SpikeEvent(MS + 500 * US, 1, EventKind.EXCITATORY, 24 * NS))
    engine.run_until(MS + 500 * US)
    assert engine.counters.excitatory == 0
    assert engine.pending == 1
    engine.run_until(2 * MS)
    assert engine.counters.excitatory == 1
    assert engine.counters.pulse_ends == 1
    assert engine.pending == 0
    with pytest.raises(PastEventError):
        engine.schedule(SpikeEvent(MS, 0, EventKind.EXCITATORY, 24 * NS))
    with pytest.raises(ValueError):
        build_engine(load_config("n_neurons=2\n"), vectorized=True)


def test_thousand_neuron_scan():
    """1,024 neurons for 100 ms: 100 distinct samples each, excursions seen within a period"""

    class SampleLog:
        def __init__(self):
            self.instants = []

        def on_sample(self, s):
            self.instants.append(s.time)

    driven = (0, 511, 1023)
    cfg = load_config(
        "n_neurons=1024\nduration=100ms\ntrace.neurons=none\n"
        + "".join(f"stimulus.d{n}=exc neuron={n} at=0.7ms duration=32ns every=1ms\n" for n in driven)
    )
    engine = build_engine(cfg)
    assert isinstance(engine, PopulationEngine)
    log = SampleLog()
    engine.add_observer(log)
    engine.run_until(cfg.duration)

    assert all(engine.neuron_counters(n).samples == 100 for n in range(1024))
    assert len(log.instants) == 1024 * 100
    assert len(set(log.instants)) == len(log.instants)
    for n in driven:
        onset = engine.spike_times(n)[0]
        seen = [t for t in engine.active_sample_times(n) if t >= onset]
        assert seen and seen[0] - onset < MS
    assert engine.counters.crossings_up == sum(len(engine.spike_times(n)) for n in driven)
