import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from scenarios import SCENARIOS, bench_config, benchmark, get_scenario, run_scenario
from sim_config import ScenarioConfig, load_config_file
from sim_errors import ConfigParseError, ConfigValidationError, SimulationError
from time_units import format_time, parse_time
from trace_io import checksum, plot_traces, write_summary, write_trace

logger = logging.getLogger(__name__)

DEFAULT_OUT_DIR = "runs"
DEFAULT_BENCH_NEURONS = 1000


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Run the event-driven silicon neuron simulator on a named scenario or a config file."
    )
    parser.add_argument("--config", type=str, help="Path to a KEY=VALUE scenario config document")
    parser.add_argument(
        "--scenario",
        choices=[*SCENARIOS, "custom"],
        help="Built-in scenario, or 'custom' to run --config",
    )
    parser.add_argument("--duration", type=str, help="Override the model duration, e.g. 50ms")
    parser.add_argument("--out", type=str, help="Output directory (default: $NEUROSIM_OUT_DIR or ./runs)")
    parser.add_argument("--seed", type=int, help="Override the rng seed")
    parser.add_argument("--bench", action="store_true", help="Run the throughput benchmark instead")
    parser.add_argument(
        "--neurons",
        type=int,
        default=DEFAULT_BENCH_NEURONS,
        help="Neuron count for --bench without a scenario or config",
    )
    parser.add_argument("--plot", action="store_true", help="Write one PNG per traced neuron")
    parser.add_argument("--workers", type=int, help="Worker threads (default: $NEUROSIM_WORKERS or 1)")
    parser.add_argument("--log-level", type=str, help="Logging level (default: $NEUROSIM_LOG_LEVEL or WARNING)")
    return parser


def resolve_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> ScenarioConfig:
    if args.config and args.scenario not in (None, "custom"):
        parser.error("--config and a built-in --scenario are mutually exclusive")
    if args.scenario == "custom" and not args.config:
        parser.error("--scenario custom needs --config")

    if args.config:
        cfg = load_config_file(args.config)
    elif args.scenario:
        cfg = get_scenario(args.scenario)
    elif args.bench:
        cfg = bench_config(args.neurons)
    else:
        parser.error("give --scenario, --config or --bench")

    if args.duration:
        try:
            cfg = replace(cfg, duration=parse_time(args.duration))
        except ValueError as e:
            parser.error(f"--duration: {e}")
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)

    level = (args.log_level or os.getenv("NEUROSIM_LOG_LEVEL") or "WARNING").upper()
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    workers = args.workers if args.workers is not None else int(os.getenv("NEUROSIM_WORKERS", "1"))
    out_root = Path(args.out or os.getenv("NEUROSIM_OUT_DIR") or DEFAULT_OUT_DIR).expanduser()

    try:
        cfg = resolve_config(args, parser)
    except (ConfigParseError, ConfigValidationError) as e:
        print(f"Config error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"Cannot read config: {e}", file=sys.stderr)
        return 2

    out_dir = out_root / cfg.name
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.bench:
        print(f"Benchmarking {cfg.n_neurons} neuron(s) for {format_time(cfg.duration)} of model time...")
        try:
            report = benchmark(cfg, workers=workers)
        except SimulationError as e:
            print(f"Simulation failed: {e}", file=sys.stderr)
            return 1
        (out_dir / "bench.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
        events = report.counters
        print("\n=== Benchmark ===")
        print(f"Neurons: {report.n_neurons} | Model time: {report.model_seconds:.3f} s | Workers: {report.workers}")
        print(f"Wall time: {report.wall_seconds:.2f} s -> {report.throughput:.1f} neuron-s per s")
        print(f"Events: {events.total} (inputs {events.inputs}, samples {events.samples}, pulse ends {events.pulse_ends})")
        print(f"Peak queue depth: {report.peak_queue_depth}")
        print(f"\n✓ Report written to {out_dir / 'bench.json'}")
        return 0

    print(f"Running scenario {cfg.name} ({cfg.n_neurons} neuron(s), {format_time(cfg.duration)})...")
    try:
        trace, summary = run_scenario(cfg, workers=workers)
    except SimulationError as e:
        print(f"Simulation failed: {e}", file=sys.stderr)
        return 1

    trace_path = out_dir / "trace.csv"
    write_trace(trace, trace_path)
    summary.trace_sha256 = checksum(trace_path)
    write_summary(summary.to_dict(), out_dir / "summary.json")
    plots = plot_traces(trace, out_dir, cfg.biases.v_threshold) if args.plot else []

    print("\n=== Run Summary ===")
    print(f"Scenario: {summary.scenario} | Model time: {summary.model_seconds * 1e3:.3f} ms | Wall: {summary.wall_seconds:.2f} s")
    print(f"Events: {summary.counters.total} | Peak queue depth: {summary.peak_queue_depth}")
    for neuron in summary.neurons[:10]:
        durations = ", ".join(format_time(d) for d in neuron.reset_durations) or "-"
        print(
            f"Neuron {neuron.neuron_id}: {neuron.spike_count} spike(s), "
            f"{len(neuron.active_sample_times)} active sample(s), resets [{durations}]"
        )
    if len(summary.neurons) > 10:
        print(f"... {len(summary.neurons) - 10} more neuron(s) in summary.json")
    print(f"\n✓ Trace: {trace_path} ({len(trace)} rows, sha256 {summary.trace_sha256[:12]})")
    print(f"✓ Summary: {out_dir / 'summary.json'}")
    if plots:
        print(f"✓ Plots: {len(plots)} PNG file(s) in {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
