"""Versioned on-disk formats: JSON, CSV, JSON-lines timelines and binary traces."""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractViolation
from .tunneling import ChargeSpinConfig, Event, EventTimeline

FORMAT_PREFIX = "donorpair"
VERSION = 1
TRACE_MAGIC = b"DPTRACE1"
_TRACE_HEADER = struct.Struct("<8sd16sII")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def write_json(path: str | Path, kind: str, payload: dict) -> Path:
    path = Path(path)
    doc = {"format": f"{FORMAT_PREFIX}/{kind}", "version": VERSION, **_plain(payload)}
    path.write_text(json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def read_json(path: str | Path, kind: str | None = None) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    fmt = doc.get("format", "")
    if not fmt.startswith(FORMAT_PREFIX + "/") or (kind and fmt != f"{FORMAT_PREFIX}/{kind}"):
        raise ContractViolation(f"{path}: unexpected format {fmt!r}")
    return doc


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """CSV with six significant digits for floats."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


# --------------------------------------------------------------------------
# timelines


def _event_row(e: Event) -> list:
    return [e.time, e.kind, str(e.from_state), str(e.to_state)]


def _config_from_str(text: str) -> ChargeSpinConfig:
    if text.startswith("D1+,"):
        return ChargeSpinConfig(False, text[4:-1])
    return ChargeSpinConfig(True, text)


def write_timelines(path: str | Path, timelines: Sequence[EventTimeline]) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        header = {"format": f"{FORMAT_PREFIX}/timelines", "version": VERSION, "count": len(timelines)}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for tl in timelines:
            rec = {
                "seed": tl.seed,
                "read_duration": tl.read_duration,
                "initial": str(tl.initial_config),
                "final": str(tl.final_config),
                "events": [_event_row(e) for e in tl.events],
            }
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
    return path


def read_timelines(path: str | Path) -> list[EventTimeline]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = json.loads(lines[0])
    if header.get("format") != f"{FORMAT_PREFIX}/timelines":
        raise ContractViolation(f"{path}: not a timeline file")
    out = []
    for line in lines[1:]:
        rec = json.loads(line)
        events = [Event(t, k, _config_from_str(a), _config_from_str(b)) for t, k, a, b in rec["events"]]
        out.append(EventTimeline(events, rec["seed"], _config_from_str(rec["initial"]),
                                 _config_from_str(rec["final"]), rec["read_duration"]))
    return out


# --------------------------------------------------------------------------
# binary traces


@dataclass
class TraceFile:
    sample_rate: float
    params_hash: str
    seeds: np.ndarray
    samples: np.ndarray  # (n_traces, n_samples) float32


def write_traces(path: str | Path, samples: np.ndarray, sample_rate: float, params_hash: str,
                 seeds: Sequence[int]) -> Path:
    """Header (magic, sample rate, params hash, shape), per-trace seeds, float32 samples."""
    samples = np.atleast_2d(np.asarray(samples, dtype="<f4"))
    seeds = np.asarray(seeds, dtype="<u8")
    if seeds.size != samples.shape[0]:
        raise ContractViolation("one seed per trace required")
    h = params_hash.encode("ascii")[:16].ljust(16, b"\0")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_TRACE_HEADER.pack(TRACE_MAGIC, float(sample_rate), h, samples.shape[0], samples.shape[1]))
        fh.write(seeds.tobytes())
        fh.write(samples.tobytes())
    return path


def read_traces(path: str | Path) -> TraceFile:
    blob = Path(path).read_bytes()
    magic, rate, h, n_tr, n_s = _TRACE_HEADER.unpack_from(blob)
    if magic != TRACE_MAGIC:
        raise ContractViolation(f"{path}: bad trace magic")
    off = _TRACE_HEADER.size
    seeds = np.frombuffer(blob, dtype="<u8", count=n_tr, offset=off)
    off += 8 * n_tr
    samples = np.frombuffer(blob, dtype="<f4", count=n_tr * n_s, offset=off).reshape(n_tr, n_s)
    return TraceFile(rate, h.rstrip(b"\0").decode("ascii"), seeds.copy(), samples.copy())


# --------------------------------------------------------------------------
# grids


def write_husimi(path: str | Path, grid) -> Path:
    """Rows are theta, columns are phi; the header row lists the phi values."""
    header = ["theta\\phi"] + [f"{p:.6g}" for p in grid.phi]
    return write_csv(path, header, ([t, *row] for t, row in zip(grid.theta, grid.q)))


def write_evolution(path: str | Path, record) -> Path:
    header = ["time_s", "Sz1", "Sz2", "pTm", "pS", "pT0", "pTp"]
    return write_csv(path, header, record.rows())
