"""
Scenario configuration: dotenv-style KEY=VALUE documents, validation and
device-mismatch injection.

Example document:

    n_neurons=4
    duration=20ms
    bias.c_mem=18e-15
    controller.mode=tonic:24ns
    controller.mode.3=adaptation:3ns:3ns:32ns
    stimulus.drive=exc neuron=* at=0.7ms duration=24ns every=1ms
    trace.neurons=0,3
    mismatch.sigma=0.05
"""
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from dotenv.parser import parse_stream

from aer_bus import DEFAULT_PERIOD_PS, DEFAULT_SLOT_PS, BusArray
from event_engine import DEFAULT_TRACE_STRIDE_PS, EventKind, PulseTrain
from neuron_core import BiasConfig, default_bias
from pattern_controller import ControllerMode, Passive, PatternController, parse_mode
from sim_errors import BiasConfigError, BusCapacityError, ConfigParseError, ConfigValidationError
from sim_random import MISMATCH_STREAM, generator
from time_units import format_time, parse_time

logger = logging.getLogger(__name__)

DEFAULT_DURATION_PS = parse_time("10ms")

# parameters that receive multiplicative Gaussian mismatch
MISMATCH_PARAMS = ("i_n0", "i_p0", "c_syn", "c_mem", "i_s")
# a draw never scales a parameter below this fraction of nominal
MIN_MISMATCH_FACTOR = 0.01

BIAS_FIELDS = tuple(f.name for f in fields(BiasConfig))


@dataclass(frozen=True)
class StimulusSpec:
    """One `stimulus.<label>` line; `neuron=None` targets every neuron"""

    label: str
    kind: EventKind
    at: int
    duration: int
    neuron: Optional[int] = None
    every: Optional[int] = None
    count: Optional[int] = 1
    jitter: int = 0

    def describe(self) -> str:
        text = (
            f"{self.kind.value} neuron={'*' if self.neuron is None else self.neuron}"
            f" at={format_time(self.at)} duration={format_time(self.duration)}"
        )
        if self.every is not None:
            text += f" every={format_time(self.every)} count={'forever' if self.count is None else self.count}"
        if self.jitter:
            text += f" jitter={format_time(self.jitter)}"
        return text

    def trains(self, n_neurons: int, seed: int, train_id: int) -> List[PulseTrain]:
        targets = range(n_neurons) if self.neuron is None else [self.neuron]
        return [
            PulseTrain(
                kind=self.kind,
                neuron_id=nid,
                start=self.at,
                duration=self.duration,
                every=self.every,
                count=self.count,
                jitter=self.jitter,
                seed=seed,
                train_id=train_id,
            )
            for nid in targets
        ]


def parse_stimulus(label: str, text: str) -> StimulusSpec:
    """Parse `<exc|inh|rst> neuron=<id|*> at=<t> duration=<t> [every=<t> count=<n|forever>] [jitter=<t>]`"""
    tokens = text.split()
    if not tokens:
        raise ConfigValidationError(f"stimulus.{label}: empty stimulus")
    try:
        kind = EventKind(tokens[0].lower())
    except ValueError:
        raise ConfigValidationError(
            f"stimulus.{label}: kind must be exc, inh or rst, got {tokens[0]!r}"
        ) from None
    options: Dict[str, str] = {}
    for token in tokens[1:]:
        name, sep, value = token.partition("=")
        if not sep or name not in ("neuron", "at", "duration", "every", "count", "jitter"):
            raise ConfigValidationError(f"stimulus.{label}: unexpected token {token!r}")
        options[name] = value
    for required in ("neuron", "at", "duration"):
        if required not in options:
            raise ConfigValidationError(f"stimulus.{label}: missing {required}=")
    if "count" in options and "every" not in options:
        raise ConfigValidationError(f"stimulus.{label}: count= needs every=")
    try:
        neuron = None if options["neuron"] == "*" else int(options["neuron"])
        every = parse_time(options["every"]) if "every" in options else None
        count: Optional[int] = 1
        if every is not None:
            raw_count = options.get("count", "forever")
            count = None if raw_count == "forever" else int(raw_count)
        spec = StimulusSpec(
            label=label,
            kind=kind,
            at=parse_time(options["at"]),
            duration=parse_time(options["duration"]),
            neuron=neuron,
            every=every,
            count=count,
            jitter=parse_time(options.get("jitter", "0")),
        )
        # PulseTrain carries the structural checks
        PulseTrain(spec.kind, 0, spec.at, spec.duration, spec.every, spec.count, spec.jitter)
    except ValueError as e:
        raise ConfigValidationError(f"stimulus.{label}: {e}") from e
    return spec


@dataclass(frozen=True)
class MismatchConfig:
    sigma: Dict[str, float] = field(default_factory=dict)
    seed: Optional[int] = None

    def sigma_of(self, param: str) -> float:
        return self.sigma.get(param, 0.0)

    @property
    def enabled(self) -> bool:
        return any(s > 0.0 for s in self.sigma.values())


@dataclass(frozen=True)
class ScenarioConfig:
    biases: BiasConfig = field(default_factory=default_bias)
    n_neurons: int = 1
    duration: int = DEFAULT_DURATION_PS
    seed: int = 0
    scan_period: int = DEFAULT_PERIOD_PS
    scan_slot: int = DEFAULT_SLOT_PS
    scan_buses: int = 1
    default_mode: ControllerMode = field(default_factory=Passive)
    modes: Dict[int, ControllerMode] = field(default_factory=dict)
    latency: int = 0
    stimuli: Tuple[StimulusSpec, ...] = ()
    trace_neurons: Tuple[int, ...] = (0,)
    trace_stride: int = DEFAULT_TRACE_STRIDE_PS
    mismatch: MismatchConfig = field(default_factory=MismatchConfig)
    name: str = "custom"

    def __post_init__(self) -> None:
        if self.n_neurons < 1:
            raise ConfigValidationError(f"n_neurons must be >= 1, got {self.n_neurons}")
        if self.duration <= 0:
            raise ConfigValidationError(f"duration must be > 0, got {self.duration} ps")
        if self.seed < 0:
            raise ConfigValidationError(f"seed must be >= 0, got {self.seed}")
        if self.latency < 0:
            raise ConfigValidationError(f"controller.latency must be >= 0, got {self.latency} ps")
        if self.trace_stride <= 0:
            raise ConfigValidationError(f"trace.stride must be > 0, got {self.trace_stride} ps")
        for nid in self.modes:
            self._check_neuron(nid, "controller.mode")
        for s in self.stimuli:
            if s.neuron is not None:
                self._check_neuron(s.neuron, f"stimulus.{s.label}")
        for nid in self.trace_neurons:
            self._check_neuron(nid, "trace.neurons")
        if self.mismatch.seed is not None and self.mismatch.seed < 0:
            raise ConfigValidationError(f"mismatch.seed must be >= 0, got {self.mismatch.seed}")
        for param, sigma in self.mismatch.sigma.items():
            if param not in MISMATCH_PARAMS:
                raise ConfigValidationError(f"mismatch.sigma.{param}: only {', '.join(MISMATCH_PARAMS)} are jittered")
            if not math.isfinite(sigma) or sigma < 0.0:
                raise ConfigValidationError(f"mismatch.sigma.{param} must be >= 0, got {sigma}")
        try:
            self.bus_array()
        except BusCapacityError as e:
            raise ConfigValidationError(str(e)) from e

    def _check_neuron(self, neuron_id: int, where: str) -> None:
        if not 0 <= neuron_id < self.n_neurons:
            raise ConfigValidationError(f"{where}: neuron {neuron_id} out of range for n_neurons={self.n_neurons}")

    def bus_array(self) -> BusArray:
        return BusArray.build(self.n_neurons, self.scan_buses, self.scan_period, self.scan_slot)

    def controller(self) -> PatternController:
        return PatternController(dict(self.modes), default=self.default_mode, latency=self.latency)

    def trains(self) -> List[PulseTrain]:
        trains: List[PulseTrain] = []
        for index, s in enumerate(self.stimuli):
            trains.extend(s.trains(self.n_neurons, self.seed, index))
        return trains

    def to_dict(self) -> Dict[str, Any]:
        """Fully resolved configuration for the run summary"""
        return {
            "name": self.name,
            "n_neurons": self.n_neurons,
            "duration_ps": self.duration,
            "seed": self.seed,
            "bias": asdict(self.biases),
            "scan": {"period_ps": self.scan_period, "slot_ps": self.scan_slot, "buses": self.scan_buses},
            "controller": {
                "default": self.default_mode.describe(),
                "modes": {str(nid): m.describe() for nid, m in sorted(self.modes.items())},
                "latency_ps": self.latency,
            },
            "stimuli": {s.label: s.describe() for s in self.stimuli},
            "trace": {"neurons": list(self.trace_neurons), "stride_ps": self.trace_stride},
            "mismatch": {"sigma": dict(sorted(self.mismatch.sigma.items())), "seed": self.mismatch.seed},
        }

    def to_document(self) -> str:
        """KEY=VALUE text that load_config turns back into this config"""
        lines = [
            f"n_neurons={self.n_neurons}",
            f"duration={format_time(self.duration)}",
            f"seed={self.seed}",
        ]
        lines += [f"bias.{name}={getattr(self.biases, name)!r}" for name in BIAS_FIELDS]
        lines += [
            f"scan.period={format_time(self.scan_period)}",
            f"scan.slot={format_time(self.scan_slot)}",
            f"scan.buses={self.scan_buses}",
            f"controller.mode={self.default_mode.describe()}",
        ]
        lines += [f"controller.mode.{nid}={m.describe()}" for nid, m in sorted(self.modes.items())]
        lines.append(f"controller.latency={format_time(self.latency)}")
        lines += [f"stimulus.{s.label}={s.describe()}" for s in self.stimuli]
        trace = ",".join(str(n) for n in self.trace_neurons) or "none"
        lines += [f"trace.neurons={trace}", f"trace.stride={format_time(self.trace_stride)}"]
        lines += [f"mismatch.sigma.{p}={s!r}" for p, s in sorted(self.mismatch.sigma.items())]
        if self.mismatch.seed is not None:
            lines.append(f"mismatch.seed={self.mismatch.seed}")
        return "\n".join(lines) + "\n"


def _parse_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigValidationError(f"{key}: expected an integer, got {value!r}") from None


def _parse_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigValidationError(f"{key}: expected a number, got {value!r}") from None


def _parse_duration(key: str, value: str) -> int:
    try:
        return parse_time(value)
    except ValueError as e:
        raise ConfigValidationError(f"{key}: {e}") from None


def _parse_trace_neurons(value: str, n_neurons: int) -> Tuple[int, ...]:
    text = value.strip().lower()
    if text == "all":
        return tuple(range(n_neurons))
    if text in ("", "none"):
        return ()
    ids = sorted({_parse_int("trace.neurons", part.strip()) for part in text.split(",")})
    return tuple(ids)


def read_document(text: str) -> Dict[str, Tuple[str, int]]:
    """Parse KEY=VALUE lines into {key: (value, line)}"""
    entries: Dict[str, Tuple[str, int]] = {}
    for binding in parse_stream(io.StringIO(text)):
        line = binding.original.line
        if binding.error:
            raise ConfigParseError(f"cannot parse {binding.original.string.strip()!r}", line)
        if binding.key is None:
            continue
        if binding.value is None:
            raise ConfigParseError(f"expected KEY=VALUE, got {binding.key!r}", line)
        if binding.key in entries:
            raise ConfigParseError(f"duplicate key {binding.key!r}", line)
        entries[binding.key] = (binding.value, line)
    return entries


def load_config(text: str, name: str = "custom") -> ScenarioConfig:
    """Build a validated ScenarioConfig from a config document.

    Missing keys keep their defaults. Raises ConfigParseError with the line
    number for malformed lines and ConfigValidationError naming the key or
    invariant otherwise.
    """
    entries = read_document(text)
    values = {key: value for key, (value, _) in entries.items()}

    bias_overrides: Dict[str, float] = {}
    modes: Dict[int, ControllerMode] = {}
    stimuli: List[StimulusSpec] = []
    sigma: Dict[str, float] = {}
    kwargs: Dict[str, Any] = {"name": name}

    n_neurons = _parse_int("n_neurons", values.pop("n_neurons", "1"))
    kwargs["n_neurons"] = n_neurons

    for key, value in values.items():
        line = entries[key][1]
        try:
            if key.startswith("bias."):
                param = key[len("bias."):]
                if param not in BIAS_FIELDS:
                    raise ConfigValidationError(f"unknown bias parameter {param!r}")
                bias_overrides[param] = _parse_float(key, value)
            elif key == "duration":
                kwargs["duration"] = _parse_duration(key, value)
            elif key == "seed":
                kwargs["seed"] = _parse_int(key, value)
            elif key == "scan.period":
                kwargs["scan_period"] = _parse_duration(key, value)
            elif key == "scan.slot":
                kwargs["scan_slot"] = _parse_duration(key, value)
            elif key == "scan.buses":
                kwargs["scan_buses"] = _parse_int(key, value)
            elif key == "controller.mode":
                kwargs["default_mode"] = parse_mode(value)
            elif key.startswith("controller.mode."):
                modes[_parse_int(key, key[len("controller.mode."):])] = parse_mode(value)
            elif key == "controller.latency":
                kwargs["latency"] = _parse_duration(key, value)
            elif key.startswith("stimulus."):
                stimuli.append(parse_stimulus(key[len("stimulus."):], value))
            elif key == "trace.neurons":
                kwargs["trace_neurons"] = _parse_trace_neurons(value, n_neurons)
            elif key == "trace.stride":
                kwargs["trace_stride"] = _parse_duration(key, value)
            elif key == "mismatch.sigma":
                _parse_float(key, value)
            elif key.startswith("mismatch.sigma."):
                sigma[key[len("mismatch.sigma."):]] = _parse_float(key, value)
            elif key == "mismatch.seed":
                kwargs["mismatch"] = _parse_int(key, value)
            else:
                raise ConfigValidationError(f"unknown key {key!r}")
        except ConfigValidationError as e:
            raise ConfigValidationError(f"line {line}: {e}") from e

    # per-parameter sigmas win over the shared one whatever the line order
    if "mismatch.sigma" in values:
        shared = _parse_float("mismatch.sigma", values["mismatch.sigma"])
        for param in MISMATCH_PARAMS:
            if f"mismatch.sigma.{param}" not in values:
                sigma[param] = shared

    try:
        biases = replace(default_bias(), **bias_overrides)
    except BiasConfigError as e:
        raise ConfigValidationError(str(e)) from e
    mismatch_seed = kwargs.pop("mismatch", None)
    cfg = ScenarioConfig(
        biases=biases,
        modes=modes,
        stimuli=tuple(stimuli),
        mismatch=MismatchConfig(sigma=sigma, seed=mismatch_seed),
        **kwargs,
    )
    logger.info("loaded config %r: %d neuron(s), %d stimulus line(s)", name, cfg.n_neurons, len(cfg.stimuli))
    return cfg


def load_config_file(path: Union[str, Path]) -> ScenarioConfig:
    p = Path(path)
    return load_config(p.read_text(encoding="utf-8"), name=p.stem)


def apply_mismatch(cfg: ScenarioConfig) -> List[BiasConfig]:
    """Per-neuron bias sets with multiplicative Gaussian mismatch.

    Neuron i draws from its own counter-based stream keyed by (seed, i), so
    populations built from the same seed agree neuron by neuron.
    """
    if not cfg.mismatch.enabled:
        return [cfg.biases] * cfg.n_neurons
    seed = cfg.mismatch.seed if cfg.mismatch.seed is not None else cfg.seed
    sigmas = [cfg.mismatch.sigma_of(p) for p in MISMATCH_PARAMS]
    nominal = [getattr(cfg.biases, p) for p in MISMATCH_PARAMS]
    population = []
    for nid in range(cfg.n_neurons):
        z = generator(seed, MISMATCH_STREAM, nid).standard_normal(len(MISMATCH_PARAMS))
        jittered = {
            p: v * max(MIN_MISMATCH_FACTOR, 1.0 + s * float(zi))
            for p, v, s, zi in zip(MISMATCH_PARAMS, nominal, sigmas, z)
        }
        population.append(replace(cfg.biases, **jittered))
    logger.debug("applied mismatch to %d neuron(s) with seed %d", cfg.n_neurons, seed)
    return population
