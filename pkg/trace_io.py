"""
Trace rows, the CSV trace format, run summaries and optional plots
"""
import csv
import hashlib
import io
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, TextIO, Union

logger = logging.getLogger(__name__)

TRACE_HEADER = ["time_ps", "neuron_id", "v_syn", "v_mem", "exc", "inh", "rst", "aer_active", "spike"]
FLAG_FIELDS = ("exc", "inh", "rst", "aer_active", "spike")

PathLike = Union[str, Path]


@dataclass(frozen=True)
class TraceRow:
    time_ps: int
    neuron_id: int
    v_syn: float
    v_mem: float
    exc: bool = False
    inh: bool = False
    rst: bool = False
    aer_active: bool = False
    spike: bool = False

    def merged(self, later: "TraceRow") -> "TraceRow":
        """Coalesce two rows of the same instant: later voltages, OR-ed flags"""
        if (later.time_ps, later.neuron_id) != (self.time_ps, self.neuron_id):
            raise ValueError("only rows of the same neuron and instant can be merged")
        return replace(later, **{f: getattr(self, f) or getattr(later, f) for f in FLAG_FIELDS})

    def to_record(self) -> List[str]:
        return [
            str(self.time_ps),
            str(self.neuron_id),
            format(self.v_syn, ".9g"),
            format(self.v_mem, ".9g"),
            *("1" if getattr(self, f) else "0" for f in FLAG_FIELDS),
        ]


def _write_rows(rows: Iterable[TraceRow], handle: TextIO) -> int:
    writer = csv.writer(handle, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    count = 0
    for row in rows:
        writer.writerow(row.to_record())
        count += 1
    return count


def write_trace(rows: Iterable[TraceRow], destination: Union[PathLike, TextIO]) -> int:
    """Write rows as CSV; returns the number of data rows.

    Voltages carry 9 significant digits, flags are 0/1. I/O errors propagate.
    """
    if hasattr(destination, "write"):
        return _write_rows(rows, destination)  # type: ignore[arg-type]
    path = Path(destination)
    with path.open("w", newline="", encoding="utf-8") as f:
        count = _write_rows(rows, f)
    logger.info("wrote %d trace rows to %s", count, path)
    return count


def trace_text(rows: Iterable[TraceRow]) -> str:
    buffer = io.StringIO()
    _write_rows(rows, buffer)
    return buffer.getvalue()


def read_trace(source: Union[PathLike, TextIO]) -> List[TraceRow]:
    if hasattr(source, "read"):
        return _read_rows(source)  # type: ignore[arg-type]
    with Path(source).open(newline="", encoding="utf-8") as f:
        return _read_rows(f)


def _read_rows(handle: TextIO) -> List[TraceRow]:
    reader = csv.reader(handle)
    header = next(reader, None)
    if header != TRACE_HEADER:
        raise ValueError(f"unexpected trace header: {header}")
    rows = []
    for record in reader:
        if len(record) != len(TRACE_HEADER):
            raise ValueError(f"malformed trace record at row {reader.line_num}: {record}")
        rows.append(
            TraceRow(
                time_ps=int(record[0]),
                neuron_id=int(record[1]),
                v_syn=float(record[2]),
                v_mem=float(record[3]),
                **{f: record[4 + i] == "1" for i, f in enumerate(FLAG_FIELDS)},
            )
        )
    return rows


def checksum(path: PathLike) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_summary(summary: Dict[str, Any], path: PathLike) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def plot_traces(
    rows: Iterable[TraceRow],
    out_dir: PathLike,
    v_threshold: Optional[float] = None,
) -> List[Path]:
    """One PNG per traced neuron: voltages on top, event rasters below"""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    by_neuron: Dict[int, List[TraceRow]] = {}
    for row in rows:
        by_neuron.setdefault(row.neuron_id, []).append(row)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for neuron_id, series in sorted(by_neuron.items()):
        t_ms = [r.time_ps * 1e-9 for r in series]
        fig, (top, bottom) = plt.subplots(
            2, 1, sharex=True, figsize=(9, 5), gridspec_kw={"height_ratios": [3, 1]}
        )
        top.plot(t_ms, [r.v_syn for r in series], color="tab:green", label="V_syn")
        top.plot(t_ms, [r.v_mem for r in series], color="tab:pink", label="V_mem")
        if v_threshold is not None:
            top.axhline(v_threshold, color="grey", linestyle="--", linewidth=0.8, label="threshold")
        top.set_ylabel("voltage (V)")
        top.legend(loc="upper right")
        top.set_title(f"neuron {neuron_id}")

        lanes = [("exc", "tab:blue"), ("inh", "tab:red"), ("rst", "tab:orange"), ("aer_active", "tab:purple")]
        for lane, (flag, color) in enumerate(lanes):
            hits = [t for t, r in zip(t_ms, series) if getattr(r, flag)]
            bottom.scatter(hits, [lane] * len(hits), s=6, color=color, marker="|")
        spikes = [t for t, r in zip(t_ms, series) if r.spike]
        bottom.scatter(spikes, [len(lanes)] * len(spikes), s=20, color="black", marker="|")
        bottom.set_yticks(range(len(lanes) + 1))
        bottom.set_yticklabels([flag for flag, _ in lanes] + ["spike"])
        bottom.set_xlabel("time (ms)")

        fig.tight_layout()
        path = out / f"neuron_{neuron_id}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    logger.info("wrote %d plot(s) to %s", len(written), out)
    return written
