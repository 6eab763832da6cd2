"""On-disk dataset layout, model/report persistence and run manifests.

Dataset layout (line-oriented CSV, diffable, trivially generated):

    <root>/subject_<id>/session_<k>/train_cycle<c>_gesture<g>.csv
        rows = samples, 10 integer channel columns
    <root>/subject_<id>/session_<k>/eval_<e>.csv
        rows = samples, 11 integer columns: 10 channels + requested gesture id

Reports are schema-versioned JSON plus per-session CSV accuracy tables. Every
run directory carries a manifest with the seed and a digest of the exact
configuration; re-running with the same manifest reproduces the report byte
for byte (reports deliberately contain no wall-clock timestamps).
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError, ShapeError
from .nn import Network, load_network, save_network
from .signal import NUM_CHANNELS, SAMPLE_RATE_HZ, RawRecording
from .synth import SessionData, SubjectData

REPORT_SCHEMA_VERSION = 1


def _write_csv(path: Path, rows: np.ndarray) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(",".join(str(int(v)) for v in row))
            fh.write("\n")


def _read_int_csv(path: Path, columns: int) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != columns:
                raise ShapeError(f"{path}: line {lineno} has {len(parts)} columns, expected {columns}")
            try:
                rows.append([int(p) for p in parts])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty recording")
    return np.asarray(rows, dtype=np.int64)


def save_dataset(subjects: list[SubjectData], root) -> None:
    root = Path(root)
    for sub in subjects:
        for sess in sub.sessions:
            d = root / f"subject_{sub.subject}" / f"session_{sess.session}"
            d.mkdir(parents=True, exist_ok=True)
            for c, cycle in enumerate(sess.cycles):
                for g, rec in sorted(cycle.items()):
                    _write_csv(d / f"train_cycle{c}_gesture{g}.csv", rec.samples.T)
            for e, rec in enumerate(sess.evals):
                stacked = np.vstack([rec.samples, rec.labels[None, :]])
                _write_csv(d / f"eval_{e}.csv", stacked.T)


def load_session(root, subject: int, session: int) -> SessionData:
    """Parse one session directory into recordings, validating channel count
    and the fixed 1 kHz rate."""
    d = Path(root) / f"subject_{subject}" / f"session_{session}"
    if not d.is_dir():
        raise DataError(f"missing session directory {d}")
    cycle_re = re.compile(r"train_cycle(\d+)_gesture(\d+)\.csv$")
    eval_re = re.compile(r"eval_(\d+)\.csv$")
    cycles: dict[int, dict[int, RawRecording]] = {}
    evals: dict[int, RawRecording] = {}
    for path in sorted(d.iterdir()):
        m = cycle_re.match(path.name)
        if m:
            c, g = int(m.group(1)), int(m.group(2))
            data = _read_int_csv(path, NUM_CHANNELS)
            rec = RawRecording(
                samples=data.T.astype(np.int16),
                rate_hz=SAMPLE_RATE_HZ,
                labels=np.full(len(data), g, dtype=np.int64),
            )
            cycles.setdefault(c, {})[g] = rec
            continue
        m = eval_re.match(path.name)
        if m:
            data = _read_int_csv(path, NUM_CHANNELS + 1)
            evals[int(m.group(1))] = RawRecording(
                samples=data[:, :NUM_CHANNELS].T.astype(np.int16),
                rate_hz=SAMPLE_RATE_HZ,
                labels=data[:, NUM_CHANNELS].astype(np.int64),
            )
    if not cycles:
        raise DataError(f"{d}: no training cycles found")
    cycle_list = [cycles[c] for c in sorted(cycles)]
    eval_list = [evals[e] for e in sorted(evals)]
    return SessionData(subject=subject, session=session, cycles=cycle_list, evals=eval_list)


def load_subject(root, subject: int) -> SubjectData:
    base = Path(root) / f"subject_{subject}"
    if not base.is_dir():
        raise DataError(f"missing subject directory {base}")
    session_ids = sorted(
        int(p.name.split("_", 1)[1]) for p in base.iterdir() if p.name.startswith("session_")
    )
    if not session_ids:
        raise DataError(f"{base}: no sessions found")
    return SubjectData(subject=subject, sessions=[load_session(root, subject, s) for s in session_ids])


def list_subjects(root) -> list[int]:
    base = Path(root)
    ids = sorted(
        int(p.name.split("_", 1)[1]) for p in base.iterdir() if p.name.startswith("subject_")
    )
    if not ids:
        raise DataError(f"{base}: no subjects found")
    return ids


def _jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def config_digest(cfg) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def save_model(model: Network, path) -> None:
    save_network(model, path)


def load_model(path) -> Network:
    return load_network(path)


def save_report(report_dict: dict, out_dir, accuracy_tables: dict | None = None) -> Path:
    """Write report.json (schema-versioned, deterministic byte layout) plus one
    CSV accuracy table per session; returns the report path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"schema_version": REPORT_SCHEMA_VERSION, **_jsonable(report_dict)}
    report_path = out / "report.json"
    with open(report_path, "w") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=1))
        fh.write("\n")
    for name, table in (accuracy_tables or {}).items():
        algorithms = list(table["algorithms"])
        matrix = np.asarray(table["matrix"], dtype=np.float64)
        with open(out / f"accuracy_{name}.csv", "w") as fh:
            fh.write("subject," + ",".join(algorithms) + "\n")
            for i, row in enumerate(matrix):
                fh.write(str(i) + "," + ",".join(repr(float(v)) for v in row) + "\n")
    return report_path


def load_report(path) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise DataError(f"unsupported report schema {payload.get('schema_version')}")
    return payload


def save_manifest(out_dir, seed: int, cfg) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "seed": seed,
        "config_digest": config_digest(cfg),
        "config": _jsonable(cfg),
    }
    path = out / "manifest.json"
    with open(path, "w") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, indent=1))
        fh.write("\n")
    return path
