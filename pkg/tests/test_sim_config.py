"""
Tests for config loading, validation and mismatch injection
"""
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from event_engine import EventKind  # noqa: E402
from pattern_controller import Adaptation, Passive, Tonic  # noqa: E402
from sim_config import (  # noqa: E402
    MISMATCH_PARAMS,
    apply_mismatch,
    load_config,
    load_config_file,
    parse_stimulus,
)
from sim_errors import ConfigParseError, ConfigValidationError  # noqa: E402
from time_units import format_time, parse_time  # noqa: E402

NS = 1_000
MS = 1_000_000_000


def test_empty_document_gives_defaults():
    """No overrides: chip bias point, 1 ms period, 32 ns slots"""
    cfg = load_config("")
    b = cfg.biases
    assert b.vdd == 1.2
    assert b.i_pulse_exc == 550e-9 and b.i_pulse_inh == 550e-9 and b.i_pulse_rst == 550e-9
    assert b.i_n0 == 2e-12 and b.i_p0 == 2e-12
    assert b.c_syn == 22e-15 and b.c_mem == 18e-15
    assert cfg.scan_period == MS and cfg.scan_slot == 32 * NS
    assert cfg.n_neurons == 1 and cfg.default_mode == Passive()
    assert cfg.latency == 0 and cfg.trace_neurons == (0,)


def test_full_document():
    """Every key family is parsed into the config"""
    cfg = load_config(
        "# four neurons\n"
        "n_neurons=4\n"
        "duration=20ms\n"
        "seed=3\n"
        "bias.c_mem=20e-15\n"
        "scan.buses=2\n"
        "controller.mode=tonic:24ns\n"
        "controller.mode.3=adaptation:3ns:3ns:32ns\n"
        "controller.latency=100ns\n"
        "stimulus.drive=exc neuron=* at=0.7ms duration=24ns every=1ms\n"
        "stimulus.block=inh neuron=2 at=1.2ms duration=10ns\n"
        "trace.neurons=0,3\n"
        "trace.stride=10us\n"
        "mismatch.sigma=0.05\n"
        "mismatch.sigma.c_mem=0.1\n"
        "mismatch.seed=9\n"
    )
    assert cfg.n_neurons == 4 and cfg.duration == 20 * MS and cfg.seed == 3
    assert cfg.biases.c_mem == 20e-15
    assert cfg.scan_buses == 2
    assert cfg.default_mode == Tonic(24 * NS)
    assert cfg.modes == {3: Adaptation(3 * NS, 3 * NS, 32 * NS)}
    assert cfg.latency == 100 * NS
    assert [s.label for s in cfg.stimuli] == ["drive", "block"]
    assert cfg.stimuli[0].neuron is None and cfg.stimuli[0].count is None
    assert cfg.stimuli[1].kind is EventKind.INHIBITORY and cfg.stimuli[1].count == 1
    assert cfg.trace_neurons == (0, 3) and cfg.trace_stride == 10_000_000
    assert cfg.mismatch.sigma["c_mem"] == 0.1 and cfg.mismatch.sigma["i_n0"] == 0.05
    assert cfg.mismatch.seed == 9
    assert len(cfg.trains()) == 5


def test_document_round_trip():
    """to_document() loads back to an equal config"""
    cfg = load_config(
        "n_neurons=3\nduration=7ms\ncontroller.mode.1=burst:5:24ns\n"
        "stimulus.a=exc neuron=1 at=0.7ms duration=32ns every=1ms count=4 jitter=10us\n"
        "trace.neurons=all\nmismatch.sigma.i_s=0.02\n",
        name="sample",
    )
    assert load_config(cfg.to_document(), name="sample") == cfg


def test_negative_capacitance_rejected():
    """Physical invariants surface as validation errors"""
    with pytest.raises(ConfigValidationError):
        load_config("bias.c_mem=-1e-15\n")


def test_slot_budget_rejected():
    """More neurons than one bus can scan cites the 31,250-slot bound"""
    with pytest.raises(ConfigValidationError) as exc:
        load_config("n_neurons=31251\n")
    assert "31250" in str(exc.value)
    assert load_config("n_neurons=31251\nscan.buses=2\n").scan_buses == 2


def test_parse_error_reports_line():
    """A line without '=' is a parse error naming its line"""
    with pytest.raises(ConfigParseError) as exc:
        load_config("n_neurons=2\nduration=5ms\nbroken\n")
    assert exc.value.line == 3
    assert str(exc.value).startswith("line 3:")


def test_duplicate_key_rejected():
    """A key may appear once"""
    with pytest.raises(ConfigParseError) as exc:
        load_config("seed=1\nseed=2\n")
    assert exc.value.line == 2


@pytest.mark.parametrize(
    "text",
    [
        "colour=blue\n",
        "bias.unknown=1\n",
        "duration=0\n",
        "duration=1.5ps\n",
        "n_neurons=two\n",
        "n_neurons=2\ncontroller.mode.5=passive\n",
        "stimulus.x=exc neuron=1 at=0 duration=24ns\n",
        "stimulus.x=spike neuron=0 at=0 duration=24ns\n",
        "stimulus.x=exc neuron=0 at=0\n",
        "stimulus.x=exc neuron=0 at=0 duration=24ns count=3\n",
        "mismatch.sigma=-0.1\n",
        "mismatch.sigma.v_on=0.1\n",
        "mismatch.sigma=0.05\nmismatch.seed=-1\n",
        "trace.neurons=4\n",
        "controller.latency=-1ns\n",
    ],
)
def test_validation_errors(text):
    """Invalid values raise ConfigValidationError"""
    with pytest.raises(ConfigValidationError):
        load_config(text)


def test_parse_stimulus_forms():
    """Single pulses, finite and endless trains"""
    single = parse_stimulus("s", "rst neuron=0 at=2ms duration=24ns")
    assert (single.kind, single.at, single.every, single.count) == (EventKind.RESET, 2 * MS, None, 1)
    finite = parse_stimulus("f", "exc neuron=* at=0.7ms duration=24ns every=1ms count=4")
    assert finite.count == 4 and finite.neuron is None
    endless = parse_stimulus("e", "inh neuron=1 at=0 duration=1ns every=10us count=forever")
    assert endless.count is None
    assert parse_stimulus("f", finite.describe()) == finite


def test_time_units():
    """Time strings convert exactly to picoseconds"""
    assert parse_time("24ns") == 24_000
    assert parse_time("0.7ms") == 700_000_000
    assert parse_time("3") == 3
    assert parse_time("1s") == 10**12
    assert format_time(24_000) == "24ns"
    assert format_time(700_000_000) == "700us"
    assert format_time(0) == "0ps"
    for bad in ("0.5ps", "-1ns", "abc", "3 parsecs"):
        with pytest.raises(ValueError):
            parse_time(bad)


def test_load_config_file(tmp_path):
    """Files load with their stem as the scenario name"""
    path = tmp_path / "sweep.cfg"
    path.write_text("n_neurons=2\n", encoding="utf-8")
    cfg = load_config_file(path)
    assert cfg.name == "sweep" and cfg.n_neurons == 2


def test_mismatch_disabled_shares_biases():
    """sigma = 0 gives identical copies of the nominal set"""
    cfg = load_config("n_neurons=5\nmismatch.sigma=0\n")
    population = apply_mismatch(cfg)
    assert len(population) == 5
    assert all(b == cfg.biases for b in population)


def test_mismatch_is_reproducible():
    """Same seed, same population; a different seed differs"""
    cfg = load_config("n_neurons=20\nmismatch.sigma=0.05\nseed=4\n")
    assert apply_mismatch(cfg) == apply_mismatch(cfg)
    other = load_config("n_neurons=20\nmismatch.sigma=0.05\nseed=5\n")
    assert apply_mismatch(other) != apply_mismatch(cfg)
    # neuron i draws the same values whatever the population size
    bigger = load_config("n_neurons=40\nmismatch.sigma=0.05\nseed=4\n")
    assert apply_mismatch(bigger)[:20] == apply_mismatch(cfg)


def test_mismatch_statistics():
    """10,000 neurons at 5 %: means within 1 %, spreads within 10 % of 5 %"""
    cfg = load_config("n_neurons=10000\ntrace.neurons=none\nmismatch.sigma=0.05\nseed=1\n")
    population = apply_mismatch(cfg)
    for param in MISMATCH_PARAMS:
        nominal = getattr(cfg.biases, param)
        ratios = np.array([getattr(b, param) for b in population]) / nominal
        assert abs(ratios.mean() - 1.0) <= 0.01
        assert abs(ratios.std(ddof=1) - 0.05) <= 0.005
    untouched = {b.v_on for b in population}
    assert untouched == {cfg.biases.v_on}
