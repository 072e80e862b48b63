"""
Tests for the two-node neuron model and its integrators
"""
import os
import sys
from dataclasses import replace

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from neuron_core import (  # noqa: E402
    NO_DRIVE,
    BiasConfig,
    Crossing,
    DriveInput,
    NeuronState,
    advance,
    currents,
    default_bias,
    detect_threshold,
    leak_current_n,
    leak_current_p,
    reference_step,
    shift_current,
    steady_state,
    step,
    step_exact_linear,
)
from sim_errors import BiasConfigError, NoSteadyStateError, RegimeViolationError  # noqa: E402

US = 1_000_000
MS = 1_000_000_000


def test_default_bias_values():
    """Defaults carry the chip bias point"""
    cfg = default_bias()
    assert cfg.vdd == 1.2
    assert cfg.i_n0 == 2e-12 and cfg.i_p0 == 2e-12
    assert cfg.i_pulse_exc == 550e-9 and cfg.i_pulse_inh == 550e-9 and cfg.i_pulse_rst == 550e-9
    assert cfg.c_syn == 22e-15 and cfg.c_mem == 18e-15
    assert cfg.shift_ceiling == pytest.approx(5.5e-6)


def test_bias_validation():
    """Non-physical parameters are rejected"""
    with pytest.raises(BiasConfigError):
        BiasConfig(c_mem=-1e-15)
    with pytest.raises(BiasConfigError):
        BiasConfig(lambda_n=-1.0)
    with pytest.raises(BiasConfigError):
        BiasConfig(v_threshold=1.5)


def test_shift_current_regions():
    """Off below onset, exponential above, saturated far above"""
    cfg = default_bias()
    assert shift_current(0.05, 0.0, cfg) == 0.0
    assert shift_current(0.0, 0.5, cfg) == 0.0
    low = shift_current(0.12, 0.0, cfg)
    high = shift_current(0.15, 0.0, cfg)
    assert 0.0 < low < high
    assert shift_current(1.2, 0.0, cfg) == cfg.shift_ceiling


def test_currents_zero_at_rails():
    """A net current pushing a node past its rail is dropped"""
    cfg = default_bias()
    b = currents(NeuronState(0.0, 0.3), DriveInput(i_inh=550e-9), cfg)
    assert b.i_syn_net == 0.0
    b = currents(NeuronState(cfg.vdd, cfg.vdd), NO_DRIVE, cfg)
    assert b.i_mem_net == 0.0
    b = currents(NeuronState(0.3, 0.3), NO_DRIVE, cfg)
    assert b.i_syn_net == pytest.approx(-leak_current_n(0.3, cfg))
    assert b.i_mem_net == pytest.approx(leak_current_p(0.3, cfg))


def test_detect_threshold():
    """Upward, downward and no crossing; landing on threshold counts as upward"""
    cfg = default_bias()
    assert detect_threshold(0.5, 0.7, cfg) is Crossing.UP
    assert detect_threshold(0.5, 0.6, cfg) is Crossing.UP
    assert detect_threshold(0.7, 0.5, cfg) is Crossing.DOWN
    assert detect_threshold(0.1, 0.2, cfg) is None


def test_steady_state_balance():
    """At rest I_p = I_shift = I_n to 1e-6 relative"""
    cfg = default_bias()
    rest = steady_state(cfg)
    i_n = leak_current_n(rest.v_syn, cfg)
    i_p = leak_current_p(rest.v_mem, cfg)
    assert abs(i_p - i_n) / i_n <= 1e-6
    assert abs(shift_current(rest.v_mem, rest.v_syn, cfg) - i_n) / i_n <= 1e-6
    assert rest.v_syn == pytest.approx(0.0212, abs=1e-3)
    assert rest.v_mem == pytest.approx(0.1412, abs=1e-3)


def test_steady_state_without_modulation():
    """Both lambdas zero leave the resting level undetermined"""
    with pytest.raises(NoSteadyStateError):
        steady_state(BiasConfig(lambda_n=0.0, lambda_p=0.0))


def test_steady_state_is_fixed_point():
    """With no input the rest state does not move"""
    cfg = default_bias()
    rest = steady_state(cfg)
    after = advance(rest, NO_DRIVE, 5 * MS, cfg).state
    assert after.v_syn == pytest.approx(rest.v_syn, abs=1e-6)
    assert after.v_mem == pytest.approx(rest.v_mem, abs=1e-6)


@pytest.mark.parametrize("corner", [(0.0, 0.0), (0.0, 1.2), (1.2, 0.0), (1.2, 1.2)])
def test_rail_corners_converge(corner):
    """Every rail corner relaxes to the rest point within 200 ms"""
    cfg = default_bias()
    rest = steady_state(cfg)
    final = advance(NeuronState(*corner), NO_DRIVE, 200 * MS, cfg).state
    assert final.v_syn == pytest.approx(rest.v_syn, abs=1e-3)
    assert final.v_mem == pytest.approx(rest.v_mem, abs=1e-3)


def test_advance_rejects_negative_interval():
    """dt < 0 is an error, dt = 0 is a no-op"""
    cfg = default_bias()
    s = NeuronState(0.1, 0.2)
    with pytest.raises(ValueError):
        advance(s, NO_DRIVE, -1, cfg)
    assert advance(s, NO_DRIVE, 0, cfg).state == s


@pytest.mark.parametrize("lambdas", [(0.0, 0.0), (5.0, 0.1)])
def test_closed_form_agreement(lambdas):
    """With the diode off the integrator matches the closed form within 1 nV"""
    cfg = replace(default_bias(), lambda_n=lambdas[0], lambda_p=lambdas[1])
    start = NeuronState(0.5, 0.3)
    for drive in (NO_DRIVE, DriveInput(i_exc=1e-12), DriveInput(i_rst=1e-12)):
        exact = step_exact_linear(start, drive, 200 * US, cfg)
        approx = advance(start, drive, 200 * US, cfg).state
        assert abs(exact.v_syn - approx.v_syn) <= 1e-9
        assert abs(exact.v_mem - approx.v_mem) <= 1e-9


def test_closed_form_regime_check():
    """The closed form refuses intervals where the diode conducts"""
    cfg = default_bias()
    with pytest.raises(RegimeViolationError):
        step_exact_linear(NeuronState(0.0, 0.3), NO_DRIVE, 1 * US, cfg)


def test_reference_agreement_through_pulse_and_relaxation():
    """Adaptive steps stay within 10 uV of fixed-step RK4 at every breakpoint"""
    cfg = default_bias()
    fast = slow = steady_state(cfg)
    segments = [
        (DriveInput(i_exc=cfg.i_pulse_exc), 24_000, 10),
        (NO_DRIVE, 200 * US, 10_000),
        (DriveInput(i_inh=cfg.i_pulse_inh), 24_000, 10),
        (NO_DRIVE, 200 * US, 10_000),
    ]
    for drive, dt, dt_sub in segments:
        fast = advance(fast, drive, dt, cfg).state
        slow = reference_step(slow, drive, dt, cfg, dt_sub=dt_sub)
        assert abs(fast.v_syn - slow.v_syn) <= 1e-5
        assert abs(fast.v_mem - slow.v_mem) <= 1e-5


def test_reference_agreement_with_diode_on():
    """Strong level-shifter conduction is tracked within 10 uV"""
    cfg = default_bias()
    start = NeuronState(0.0, 0.3)
    fast = advance(start, NO_DRIVE, 200 * US, cfg).state
    slow = reference_step(start, NO_DRIVE, 200 * US, cfg, dt_sub=10_000)
    assert abs(fast.v_syn - slow.v_syn) <= 1e-5
    assert abs(fast.v_mem - slow.v_mem) <= 1e-5


def test_threshold_crossing_offset():
    """A linear ramp crosses threshold at the interpolated picosecond"""
    cfg = replace(default_bias(), lambda_n=0.0, lambda_p=0.0)
    # V_mem ramps at i_p0 / c_mem from 0.5 V; 0.1 V takes 0.9 ms
    result = advance(NeuronState(1.0, 0.5), NO_DRIVE, 1 * MS, cfg)
    assert len(result.crossings) == 1
    offset, direction = result.crossings[0]
    assert direction is Crossing.UP
    assert offset == pytest.approx(900_000_000, abs=1_000)
    state, first = step(NeuronState(1.0, 0.5), NO_DRIVE, 1 * MS, cfg)
    assert first is Crossing.UP
    assert state == result.state


def test_reset_pulse_stays_on_rail():
    """A reset drives V_mem down to ground without undershoot"""
    cfg = default_bias()
    result = advance(NeuronState(0.02, 0.65), DriveInput(i_rst=cfg.i_pulse_rst), 24_000, cfg)
    assert 0.0 <= result.state.v_mem < 0.05
    assert 0.0 <= result.state.v_syn <= cfg.vdd
    assert any(direction is Crossing.DOWN for _, direction in result.crossings)


def test_superposition_without_coupling():
    """Disabled diode and lambda_n = 0 make V_syn a linear filter"""
    cfg = replace(default_bias(), lambda_n=0.0, v_on=1.19)
    start = NeuronState(0.6, 0.3)

    def run(pulses):
        # pulses: (start_ps, duration_ps, current); integrate piecewise to 1 ms
        edges = sorted({0, 1 * MS, *(p[0] for p in pulses), *(p[0] + p[1] for p in pulses)})
        s = start
        for a, b in zip(edges, edges[1:]):
            i_exc = sum(c for t0, d, c in pulses if t0 <= a < t0 + d)
            s = advance(s, DriveInput(i_exc=i_exc), b - a, cfg).state
        return s.v_syn

    train_a = [(100 * US, 24_000, 55e-9), (400 * US, 24_000, 55e-9)]
    train_b = [(300 * US, 10_000, 100e-9)]
    base = run([])
    dev_a = run(train_a) - base
    dev_b = run(train_b) - base
    dev_ab = run(train_a + train_b) - base
    assert abs(dev_ab - (dev_a + dev_b)) <= 1e-6
