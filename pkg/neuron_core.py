"""
Behavioral dynamics of one silicon neuron: two capacitor nodes (synapse and
membrane) coupled through a diode-connected level shifter.

Sign convention: the level-shifter current flows from the membrane node into
the synapse node, so it adds to V_syn and subtracts from V_mem. Time is an
integer number of picoseconds at every public boundary; only the integrator
works in float seconds.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from sim_errors import (
    BiasConfigError,
    NoSteadyStateError,
    NonFiniteStateError,
    RegimeViolationError,
    SimulationError,
)

logger = logging.getLogger(__name__)

PS = 1e-12

# I_shift saturates at this multiple of the excitatory pulse amplitude
SHIFT_CEILING_FACTOR = 10.0

STEP_TOLERANCE_V = 1e-9
RAIL_SNAP_V = 1e-6
MIN_SUBSTEP_S = 1e-16
MAX_SUBSTEPS = 5_000_000


@dataclass(frozen=True)
class BiasConfig:
    """All electrical parameters of the behavioral model.

    Defaults are the measured chip bias point (1.2 V rail, 2 pA leaks, 550 nA
    pulses, 22 fF and 18 fF capacitors) with calibrated diode and
    channel-length-modulation parameters. The synapse forgets an input
    within about 2 ms while the membrane slews at I_p / C_mem, which makes
    four 24 ns inputs at 1 ms spacing just enough to fire.
    """

    vdd: float = 1.2
    i_n0: float = 2e-12
    lambda_n: float = 5.0
    i_p0: float = 2e-12
    lambda_p: float = 0.1
    i_pulse_exc: float = 550e-9
    i_pulse_inh: float = 550e-9
    i_pulse_rst: float = 550e-9
    c_syn: float = 22e-15
    c_mem: float = 18e-15
    i_s: float = 1e-12
    v_on: float = 0.085
    v_slope: float = 0.03
    v_threshold: float = 0.6

    def __post_init__(self) -> None:
        for name in ("vdd", "i_n0", "i_p0", "i_pulse_exc", "i_pulse_inh", "i_pulse_rst",
                     "c_syn", "c_mem", "i_s", "v_slope"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise BiasConfigError(f"{name} must be strictly positive, got {value!r}")
        for name in ("lambda_n", "lambda_p"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise BiasConfigError(f"{name} must be >= 0, got {value!r}")
        if not 0 < self.v_threshold < self.vdd:
            raise BiasConfigError(f"v_threshold must lie in (0, vdd), got {self.v_threshold!r}")
        if not 0 <= self.v_on < self.vdd:
            raise BiasConfigError(f"v_on must lie in [0, vdd), got {self.v_on!r}")

    @property
    def shift_ceiling(self) -> float:
        return SHIFT_CEILING_FACTOR * self.i_pulse_exc


def default_bias() -> BiasConfig:
    return BiasConfig()


@dataclass(frozen=True)
class NeuronState:
    v_syn: float
    v_mem: float


@dataclass(frozen=True)
class DriveInput:
    """Externally applied pulse currents, constant over an integration interval"""

    i_exc: float = 0.0
    i_inh: float = 0.0
    i_rst: float = 0.0

    @property
    def is_zero(self) -> bool:
        return self.i_exc == 0.0 and self.i_inh == 0.0 and self.i_rst == 0.0


NO_DRIVE = DriveInput()


@dataclass(frozen=True)
class CurrentBreakdown:
    i_exc: float
    i_inh: float
    i_n: float
    i_p: float
    i_shift: float
    i_rst: float
    i_syn_net: float
    i_mem_net: float


class Crossing(str, Enum):
    UP = "up"
    DOWN = "down"


@dataclass(frozen=True)
class AdvanceResult:
    state: NeuronState
    crossings: Tuple[Tuple[int, Crossing], ...] = field(default_factory=tuple)
    substeps: int = 0


# ---------------- current laws -----------------

def leak_current_n(v_syn: float, cfg: BiasConfig) -> float:
    """Synapse leak I_n with affine channel-length modulation"""
    return cfg.i_n0 * (1.0 + cfg.lambda_n * v_syn)


def leak_current_p(v_mem: float, cfg: BiasConfig) -> float:
    """Membrane charge current I_p, largest when V_mem is far from the rail"""
    return cfg.i_p0 * (1.0 + cfg.lambda_p * (cfg.vdd - v_mem))


def _shift_and_conductance(delta: float, cfg: BiasConfig) -> Tuple[float, float]:
    x = (delta - cfg.v_on) / cfg.v_slope
    if x <= 0.0:
        return 0.0, 0.0
    ceiling = cfg.shift_ceiling
    if x >= math.log1p(ceiling / cfg.i_s):
        return ceiling, 0.0
    e = math.exp(x)
    return cfg.i_s * (e - 1.0), cfg.i_s * e / cfg.v_slope


def shift_current(v_mem: float, v_syn: float, cfg: BiasConfig) -> float:
    """Level-shifter current, membrane to synapse.

    Zero up to the onset v_on, soft exponential above it, saturated at
    `cfg.shift_ceiling` so the exponential never overflows.
    """
    return _shift_and_conductance(v_mem - v_syn, cfg)[0]


def _pinned(v: float, net: float, vdd: float) -> bool:
    return (v >= vdd and net > 0.0) or (v <= 0.0 and net < 0.0)


def currents(state: NeuronState, drive: DriveInput, cfg: BiasConfig) -> CurrentBreakdown:
    i_n = leak_current_n(state.v_syn, cfg)
    i_p = leak_current_p(state.v_mem, cfg)
    i_shift = shift_current(state.v_mem, state.v_syn, cfg)
    syn_net = drive.i_exc - drive.i_inh + i_shift - i_n
    mem_net = i_p - i_shift - drive.i_rst
    if _pinned(state.v_syn, syn_net, cfg.vdd):
        syn_net = 0.0
    if _pinned(state.v_mem, mem_net, cfg.vdd):
        mem_net = 0.0
    return CurrentBreakdown(
        i_exc=drive.i_exc,
        i_inh=drive.i_inh,
        i_n=i_n,
        i_p=i_p,
        i_shift=i_shift,
        i_rst=drive.i_rst,
        i_syn_net=syn_net,
        i_mem_net=mem_net,
    )


def detect_threshold(v_before: float, v_after: float, cfg: BiasConfig) -> Optional[Crossing]:
    theta = cfg.v_threshold
    if v_before < theta <= v_after:
        return Crossing.UP
    if v_after < theta <= v_before:
        return Crossing.DOWN
    return None


# ---------------- closed form -----------------

def _phi1(y: float) -> float:
    if y == 0.0:
        return 1.0
    return math.expm1(y) / y


def _affine_advance(v0: float, a: float, b: float, c: float, h: float) -> float:
    # exact solution of c dv/dt = a + b v over h seconds
    return v0 + h * _phi1(h * b / c) * (a + b * v0) / c


def step_exact_linear(state: NeuronState, drive: DriveInput, dt: int, cfg: BiasConfig) -> NeuronState:
    """Closed-form advance while the level shifter is off.

    Both nodes are then independent affine ODEs; with zero modulation they
    reduce to ramps dV = I dt / C. Raises RegimeViolationError when the
    diode conducts at either end of the interval or a rail would be crossed.
    """
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    if dt == 0:
        return state
    if state.v_mem - state.v_syn > cfg.v_on:
        raise RegimeViolationError("level shifter conducts at the start of the interval")
    h = dt * PS
    v_syn = _affine_advance(
        state.v_syn,
        drive.i_exc - drive.i_inh - cfg.i_n0,
        -cfg.i_n0 * cfg.lambda_n,
        cfg.c_syn,
        h,
    )
    v_mem = _affine_advance(
        state.v_mem,
        cfg.i_p0 * (1.0 + cfg.lambda_p * cfg.vdd) - drive.i_rst,
        -cfg.i_p0 * cfg.lambda_p,
        cfg.c_mem,
        h,
    )
    if v_mem - v_syn > cfg.v_on:
        raise RegimeViolationError("level shifter turns on within the interval")
    if not (0.0 <= v_syn <= cfg.vdd and 0.0 <= v_mem <= cfg.vdd):
        raise RegimeViolationError("a node would cross a rail within the interval")
    return NeuronState(v_syn, v_mem)


# ---------------- adaptive integrator -----------------

def _rates(v_syn: float, v_mem: float, drive: DriveInput, cfg: BiasConfig):
    i_shift, g = _shift_and_conductance(v_mem - v_syn, cfg)
    net_s = drive.i_exc - drive.i_inh + i_shift - cfg.i_n0 * (1.0 + cfg.lambda_n * v_syn)
    net_m = cfg.i_p0 * (1.0 + cfg.lambda_p * (cfg.vdd - v_mem)) - i_shift - drive.i_rst
    j_ss = (-g - cfg.i_n0 * cfg.lambda_n) / cfg.c_syn
    j_sm = g / cfg.c_syn
    j_ms = g / cfg.c_mem
    j_mm = (-g - cfg.i_p0 * cfg.lambda_p) / cfg.c_mem
    if _pinned(v_syn, net_s, cfg.vdd):
        net_s = j_ss = j_sm = 0.0
    if _pinned(v_mem, net_m, cfg.vdd):
        net_m = j_ms = j_mm = 0.0
    return net_s / cfg.c_syn, net_m / cfg.c_mem, j_ss, j_sm, j_ms, j_mm


def _h_phi1(z: float, h: float) -> float:
    return h * _phi1(h * z)


def _h_phi1_prime(z: float, h: float) -> float:
    y = h * z
    if abs(y) < 1e-5:
        d = 0.5 + y / 3.0
    else:
        d = (math.exp(y) * (y - 1.0) + 1.0) / (y * y)
    return h * h * d


def _exp_euler(v_syn: float, v_mem: float, drive: DriveInput, h: float, cfg: BiasConfig) -> Tuple[float, float]:
    """One exponential Rosenbrock-Euler step, x + h phi1(hJ) f(x).

    The 2x2 Jacobian has real eigenvalues (its off-diagonal product is
    non-negative), so phi1 of the matrix comes from Newton's divided
    difference on the two eigenvalues.
    """
    f_s, f_m, a, b, c, d = _rates(v_syn, v_mem, drive, cfg)
    half_tr = 0.5 * (a + d)
    disc = math.sqrt(max(0.0, 0.25 * (a - d) * (a - d) + b * c))
    lam1 = half_tr + disc
    lam2 = half_tr - disc
    f2 = _h_phi1(lam2, h)
    if h * (lam1 - lam2) < 1e-6:
        dd = _h_phi1_prime(half_tr, h)
    else:
        dd = (_h_phi1(lam1, h) - f2) / (lam1 - lam2)
    jf_s = a * f_s + b * f_m - lam2 * f_s
    jf_m = c * f_s + d * f_m - lam2 * f_m
    return v_syn + f2 * f_s + dd * jf_s, v_mem + f2 * f_m + dd * jf_m


def _rail_fraction(v0: float, v1: float, vdd: float) -> float:
    if v1 > vdd and v0 < vdd:
        return (vdd - v0) / (v1 - v0)
    if v1 < 0.0 and v0 > 0.0:
        return v0 / (v0 - v1)
    return 1.0


def _settle(v0: float, v1: float, vdd: float) -> float:
    if v1 > v0 and v1 >= vdd - RAIL_SNAP_V:
        return vdd
    if v1 < v0 and v1 <= RAIL_SNAP_V:
        return 0.0
    return min(max(v1, 0.0), vdd)


def _clamp(v: float, vdd: float) -> float:
    return min(max(v, 0.0), vdd)


def advance(state: NeuronState, drive: DriveInput, dt: int, cfg: BiasConfig) -> AdvanceResult:
    """Integrate both nodes over `dt` picoseconds of constant drive.

    Substeps are sized by step-doubling error control and cut short where
    a node reaches a rail. Every threshold crossing of V_mem is reported
    with its picosecond offset from the start of the interval.
    """
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    if dt == 0:
        return AdvanceResult(state)
    total = dt * PS
    vdd = cfg.vdd
    v_syn, v_mem = state.v_syn, state.v_mem
    t = 0.0
    h = total
    crossings: List[Tuple[int, Crossing]] = []
    substeps = 0

    while t < total:
        h = min(h, total - t)
        if total - t - h < MIN_SUBSTEP_S:
            h = total - t
        full_s, full_m = _exp_euler(v_syn, v_mem, drive, h, cfg)
        mid_s, mid_m = _exp_euler(v_syn, v_mem, drive, 0.5 * h, cfg)
        new_s, new_m = _exp_euler(mid_s, mid_m, drive, 0.5 * h, cfg)
        err = max(abs(new_s - full_s), abs(new_m - full_m))
        if not (math.isfinite(new_s) and math.isfinite(new_m) and math.isfinite(err)):
            raise NonFiniteStateError(
                f"non-finite state after substep: v_syn={new_s!r}, v_mem={new_m!r}"
            )

        if err > STEP_TOLERANCE_V and h > MIN_SUBSTEP_S:
            h = max(MIN_SUBSTEP_S, h * max(0.1, 0.9 * (STEP_TOLERANCE_V / err) ** (1.0 / 3.0)))
            continue

        fraction = min(_rail_fraction(v_syn, new_s, vdd), _rail_fraction(v_mem, new_m, vdd))
        if fraction < 0.999 and h * fraction > MIN_SUBSTEP_S:
            # land on the rail instead of stepping through it
            h = h * fraction
            continue

        # a shortened step ends within RAIL_SNAP_V of the rail it was aimed at
        new_s = _settle(v_syn, new_s, vdd)
        new_m = _settle(v_mem, new_m, vdd)

        direction = detect_threshold(v_mem, new_m, cfg)
        if direction is not None:
            theta = cfg.v_threshold
            offset = t + h * (theta - v_mem) / (new_m - v_mem)
            crossings.append((min(dt, max(0, int(round(offset / PS)))), direction))

        v_syn, v_mem = new_s, new_m
        t += h
        substeps += 1
        if substeps > MAX_SUBSTEPS:
            raise SimulationError(f"integrator exceeded {MAX_SUBSTEPS} substeps over {dt} ps")
        if err > 0.0:
            h = h * min(4.0, max(0.1, 0.9 * (STEP_TOLERANCE_V / err) ** (1.0 / 3.0)))
        else:
            h = h * 4.0

    return AdvanceResult(NeuronState(v_syn, v_mem), tuple(crossings), substeps)


def step(
    state: NeuronState, drive: DriveInput, dt: int, cfg: BiasConfig
) -> Tuple[NeuronState, Optional[Crossing]]:
    """Advance over a constant-drive interval; report the first V_mem crossing"""
    result = advance(state, drive, dt, cfg)
    crossing = result.crossings[0][1] if result.crossings else None
    return result.state, crossing


# ---------------- populations -----------------

BIAS_FIELDS = (
    "vdd", "i_n0", "lambda_n", "i_p0", "lambda_p", "i_pulse_exc", "i_pulse_inh", "i_pulse_rst",
    "c_syn", "c_mem", "i_s", "v_on", "v_slope", "v_threshold",
)


class BiasTable:
    """Bias sets of a population, one column per BiasConfig field.

    A field shared by every neuron stays a plain float and broadcasts
    against the state arrays; mismatched fields become per-neuron arrays.
    """

    def __init__(self, columns: Dict[str, Any]):
        self.columns = columns
        for name, value in columns.items():
            setattr(self, name, value)
        self.ceiling = SHIFT_CEILING_FACTOR * self.i_pulse_exc
        self.log_ceiling = np.log1p(self.ceiling / self.i_s)
        self.shared = all(np.ndim(v) == 0 for v in columns.values())

    @classmethod
    def from_configs(cls, configs: Sequence[BiasConfig]) -> "BiasTable":
        if not configs:
            raise ValueError("a bias table needs at least one bias set")
        columns: Dict[str, Any] = {}
        for name in BIAS_FIELDS:
            values = [getattr(c, name) for c in configs]
            first = values[0]
            columns[name] = first if all(v == first for v in values) else np.array(values)
        return cls(columns)

    def take(self, rows: np.ndarray) -> "BiasTable":
        if self.shared:
            return self
        return BiasTable({name: v if np.ndim(v) == 0 else v[rows] for name, v in self.columns.items()})


def _pick(x: Any, rows: np.ndarray) -> Any:
    return x if np.ndim(x) == 0 else x[rows]


def _shift_and_conductance_many(delta: np.ndarray, tab: BiasTable) -> Tuple[np.ndarray, np.ndarray]:
    x = (delta - tab.v_on) / tab.v_slope
    e = np.exp(np.minimum(x, tab.log_ceiling))
    below = x <= 0.0
    saturated = x >= tab.log_ceiling
    i_shift = np.where(below, 0.0, np.where(saturated, tab.ceiling, tab.i_s * (e - 1.0)))
    g = np.where(below | saturated, 0.0, tab.i_s * e / tab.v_slope)
    return i_shift, g


def _linearize_many(v_syn, v_mem, i_exc, i_inh, i_rst, tab: BiasTable):
    """Rates, eigenvalues and J f at the start of a substep, elementwise"""
    i_shift, g = _shift_and_conductance_many(v_mem - v_syn, tab)
    net_s = i_exc - i_inh + i_shift - tab.i_n0 * (1.0 + tab.lambda_n * v_syn)
    net_m = tab.i_p0 * (1.0 + tab.lambda_p * (tab.vdd - v_mem)) - i_shift - i_rst
    pin_s = ((v_syn >= tab.vdd) & (net_s > 0.0)) | ((v_syn <= 0.0) & (net_s < 0.0))
    pin_m = ((v_mem >= tab.vdd) & (net_m > 0.0)) | ((v_mem <= 0.0) & (net_m < 0.0))
    f_s = np.where(pin_s, 0.0, net_s / tab.c_syn)
    f_m = np.where(pin_m, 0.0, net_m / tab.c_mem)
    a = np.where(pin_s, 0.0, (-g - tab.i_n0 * tab.lambda_n) / tab.c_syn)
    b = np.where(pin_s, 0.0, g / tab.c_syn)
    c = np.where(pin_m, 0.0, g / tab.c_mem)
    d = np.where(pin_m, 0.0, (-g - tab.i_p0 * tab.lambda_p) / tab.c_mem)
    half_tr = 0.5 * (a + d)
    disc = np.sqrt(np.maximum(0.0, 0.25 * (a - d) * (a - d) + b * c))
    lam1 = half_tr + disc
    lam2 = half_tr - disc
    jf_s = a * f_s + b * f_m - lam2 * f_s
    jf_m = c * f_s + d * f_m - lam2 * f_m
    return f_s, f_m, jf_s, jf_m, lam1, lam2, half_tr


def _h_phi1_many(z: np.ndarray, h: np.ndarray) -> np.ndarray:
    y = h * z
    zero = y == 0.0
    safe = np.where(zero, 1.0, y)
    return h * np.where(zero, 1.0, np.expm1(safe) / safe)


def _h_phi1_prime_many(z: np.ndarray, h: np.ndarray) -> np.ndarray:
    y = h * z
    small = np.abs(y) < 1e-5
    safe = np.where(small, 1.0, y)
    d = np.where(small, 0.5 + y / 3.0, (np.exp(safe) * (safe - 1.0) + 1.0) / (safe * safe))
    return h * h * d


def _exp_euler_many(v_syn, v_mem, lin, h):
    f_s, f_m, jf_s, jf_m, lam1, lam2, half_tr = lin
    f2 = _h_phi1_many(lam2, h)
    close = h * (lam1 - lam2) < 1e-6
    gap = np.where(close, 1.0, lam1 - lam2)
    dd = np.where(close, _h_phi1_prime_many(half_tr, h), (_h_phi1_many(lam1, h) - f2) / gap)
    return v_syn + f2 * f_s + dd * jf_s, v_mem + f2 * f_m + dd * jf_m


def _rail_fraction_many(v0: np.ndarray, v1: np.ndarray, vdd: Any) -> np.ndarray:
    top = (v1 > vdd) & (v0 < vdd)
    bottom = (v1 < 0.0) & (v0 > 0.0)
    span = np.where(v1 == v0, 1.0, v1 - v0)
    return np.where(top, (vdd - v0) / span, np.where(bottom, -v0 / span, 1.0))


def _settle_many(v0: np.ndarray, v1: np.ndarray, vdd: Any) -> np.ndarray:
    snapped = np.where((v1 > v0) & (v1 >= vdd - RAIL_SNAP_V), vdd, v1)
    snapped = np.where((v1 < v0) & (v1 <= RAIL_SNAP_V), 0.0, snapped)
    return np.minimum(np.maximum(snapped, 0.0), vdd)


@dataclass(frozen=True)
class PopulationAdvance:
    """Result of advance_many; crossings are sorted by row then offset"""

    v_syn: np.ndarray
    v_mem: np.ndarray
    crossing_rows: np.ndarray
    crossing_offsets: np.ndarray
    crossing_up: np.ndarray


def advance_many(
    v_syn: np.ndarray,
    v_mem: np.ndarray,
    i_exc: Any,
    i_inh: Any,
    i_rst: Any,
    dt: np.ndarray,
    tab: BiasTable,
) -> PopulationAdvance:
    """`advance` for a whole population at once.

    Row i integrates over its own `dt[i]` picoseconds under its own drive,
    with the same error control, rail handling and crossing interpolation
    as the scalar integrator. Finished rows drop out of the working set.
    """
    v_syn = np.array(v_syn, dtype=float)
    v_mem = np.array(v_mem, dtype=float)
    dt = np.asarray(dt, dtype=np.int64)
    if (dt < 0).any():
        raise ValueError("dt must be >= 0 for every row")
    rows = np.flatnonzero(dt > 0)
    found_rows: List[np.ndarray] = []
    found_offsets: List[np.ndarray] = []
    found_up: List[np.ndarray] = []

    sub = tab.take(rows)
    vs, vm = v_syn[rows], v_mem[rows]
    ie, ii, ir = _pick(i_exc, rows), _pick(i_inh, rows), _pick(i_rst, rows)
    steps = dt[rows]
    total = steps * PS
    t = np.zeros(rows.size)
    h = total.copy()
    substeps = np.zeros(rows.size, dtype=np.int64)

    with np.errstate(divide="ignore", invalid="ignore", over="ignore", under="ignore"):
        while rows.size:
            left = total - t
            h = np.minimum(h, left)
            h = np.where(left - h < MIN_SUBSTEP_S, left, h)
            lin = _linearize_many(vs, vm, ie, ii, ir, sub)
            full_s, full_m = _exp_euler_many(vs, vm, lin, h)
            mid_s, mid_m = _exp_euler_many(vs, vm, lin, 0.5 * h)
            new_s, new_m = _exp_euler_many(mid_s, mid_m, _linearize_many(mid_s, mid_m, ie, ii, ir, sub), 0.5 * h)
            err = np.maximum(np.abs(new_s - full_s), np.abs(new_m - full_m))
            if not (np.isfinite(new_s).all() and np.isfinite(new_m).all() and np.isfinite(err).all()):
                raise NonFiniteStateError("non-finite state after a population substep")
            factor = 0.9 * (STEP_TOLERANCE_V / err) ** (1.0 / 3.0)

            reject = (err > STEP_TOLERANCE_V) & (h > MIN_SUBSTEP_S)
            fraction = np.minimum(_rail_fraction_many(vs, new_s, sub.vdd), _rail_fraction_many(vm, new_m, sub.vdd))
            cut = ~reject & (fraction < 0.999) & (h * fraction > MIN_SUBSTEP_S)
            accept = ~(reject | cut)
            new_s = _settle_many(vs, new_s, sub.vdd)
            new_m = _settle_many(vm, new_m, sub.vdd)

            theta = sub.v_threshold
            up = accept & (vm < theta) & (theta <= new_m)
            down = accept & (new_m < theta) & (theta <= vm)
            hit = up | down
            if hit.any():
                offset = t + h * (theta - vm) / (new_m - vm)
                offset_ps = np.minimum(np.maximum(np.rint(offset / PS), 0), steps).astype(np.int64)
                found_rows.append(rows[hit])
                found_offsets.append(offset_ps[hit])
                found_up.append(up[hit])

            vs = np.where(accept, new_s, vs)
            vm = np.where(accept, new_m, vm)
            t = np.where(accept, t + h, t)
            substeps += accept
            if (substeps > MAX_SUBSTEPS).any():
                raise SimulationError(f"integrator exceeded {MAX_SUBSTEPS} substeps in a population step")
            grow = np.where(err > 0.0, np.minimum(4.0, np.maximum(0.1, factor)), 4.0)
            shrink = np.maximum(MIN_SUBSTEP_S, h * np.maximum(0.1, factor))
            h = np.where(reject, shrink, np.where(cut, h * fraction, h * grow))

            done = accept & (t >= total)
            if done.any():
                v_syn[rows[done]] = vs[done]
                v_mem[rows[done]] = vm[done]
                keep = ~done
                rows, vs, vm, t, h = rows[keep], vs[keep], vm[keep], t[keep], h[keep]
                steps, total, substeps = steps[keep], total[keep], substeps[keep]
                ie, ii, ir = _pick(ie, keep), _pick(ii, keep), _pick(ir, keep)
                sub = sub.take(keep)

    if found_rows:
        cr = np.concatenate(found_rows)
        co = np.concatenate(found_offsets)
        cu = np.concatenate(found_up)
        order = np.lexsort((co, cr))
        cr, co, cu = cr[order], co[order], cu[order]
    else:
        cr = np.empty(0, dtype=np.int64)
        co = np.empty(0, dtype=np.int64)
        cu = np.empty(0, dtype=bool)
    return PopulationAdvance(v_syn, v_mem, cr, co, cu)


def reference_step(
    state: NeuronState, drive: DriveInput, dt: int, cfg: BiasConfig, dt_sub: int = 1
) -> NeuronState:
    """Fixed-substep RK4 with rail clamping; slow, used as a test oracle"""
    if dt_sub <= 0:
        raise ValueError("dt_sub must be positive")

    def rhs(vs: float, vm: float) -> Tuple[float, float]:
        f_s, f_m = _rates(vs, vm, drive, cfg)[:2]
        return f_s, f_m

    vs, vm = state.v_syn, state.v_mem
    vdd = cfg.vdd
    remaining = dt
    while remaining > 0:
        n = min(dt_sub, remaining)
        h = n * PS
        k1 = rhs(vs, vm)
        k2 = rhs(_clamp(vs + 0.5 * h * k1[0], vdd), _clamp(vm + 0.5 * h * k1[1], vdd))
        k3 = rhs(_clamp(vs + 0.5 * h * k2[0], vdd), _clamp(vm + 0.5 * h * k2[1], vdd))
        k4 = rhs(_clamp(vs + h * k3[0], vdd), _clamp(vm + h * k3[1], vdd))
        vs = _clamp(vs + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]), vdd)
        vm = _clamp(vm + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]), vdd)
        remaining -= n
    return NeuronState(vs, vm)


# ---------------- steady state -----------------

def steady_state(cfg: BiasConfig) -> NeuronState:
    """Solve I_p(V_mem) = I_shift = I_n(V_syn) for the resting point.

    Needs lambda_n > 0 or lambda_p > 0; with both zero the absolute level
    of the pair is free and there is a continuum of fixed points.
    """
    if cfg.lambda_n <= 0.0 and cfg.lambda_p <= 0.0:
        raise NoSteadyStateError(
            "lambda_n and lambda_p are both zero: the fixed point is not unique"
        )

    def offset(current: float) -> float:
        if current >= cfg.shift_ceiling:
            raise NoSteadyStateError(
                f"balance current {current:.3e} A exceeds the level-shifter ceiling"
            )
        return cfg.v_on + cfg.v_slope * math.log1p(current / cfg.i_s)

    if cfg.lambda_n == 0.0:
        v_mem = cfg.vdd - (cfg.i_n0 / cfg.i_p0 - 1.0) / cfg.lambda_p
        v_syn = v_mem - offset(cfg.i_n0)
    else:
        def syn_for(v_mem: float) -> float:
            return (leak_current_p(v_mem, cfg) / cfg.i_n0 - 1.0) / cfg.lambda_n

        def residual(v_mem: float) -> float:
            return v_mem - syn_for(v_mem) - offset(leak_current_p(v_mem, cfg))

        lo, hi = 0.0, cfg.vdd
        r_lo, r_hi = residual(lo), residual(hi)
        if r_lo > 0.0 or r_hi < 0.0:
            raise NoSteadyStateError("no balance point with V_mem inside the rails")
        if r_lo == 0.0:
            v_mem = lo
        elif r_hi == 0.0:
            v_mem = hi
        else:
            v_mem = brentq(residual, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        v_syn = syn_for(v_mem)

    if not (0.0 <= v_syn <= cfg.vdd and 0.0 <= v_mem <= cfg.vdd):
        raise NoSteadyStateError(
            f"balance point (v_syn={v_syn:.4f} V, v_mem={v_mem:.4f} V) lies outside the rails"
        )
    logger.debug("steady state v_syn=%.6f V v_mem=%.6f V", v_syn, v_mem)
    return NeuronState(v_syn, v_mem)
