"""Report persistence: JSONL records, summary CSV, and the run registry.

Output files carry only deterministic content plus the run id.  Timestamps
and wall-clock times go to the registry file alone, so reruns of the same
config reproduce the JSONL and CSV files byte for byte.
"""

from __future__ import annotations

import csv
import json
import subprocess
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import ExperimentReport


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


def _flatten(row: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in row.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "_"))
        elif isinstance(v, (list, tuple)):
            out[key] = json.dumps(_plain(v))
        else:
            out[key] = _plain(v)
    return out


def report_records(report: ExperimentReport, run_id: str) -> list[dict]:
    """One record per row (eps or frequency), then one summary record."""
    recs = [{"run_id": run_id, "record": "row", "experiment": report.name, **_plain(r)}
            for r in report.rows]
    recs.append({"run_id": run_id, "record": "summary", "experiment": report.name,
                 "seed": report.seed, "passed": report.passed,
                 "criteria": [{"name": c.name, "passed": c.passed, "detail": c.detail}
                              for c in report.criteria],
                 "summary": _plain(report.summary), "config": _plain(report.config_echo)})
    return recs


def write_jsonl(report: ExperimentReport, path, run_id: str) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for rec in report_records(report, run_id):
            fh.write(json.dumps(rec, sort_keys=True, allow_nan=True) + "\n")
    return path


def write_summary_csv(report: ExperimentReport, path, run_id: str) -> Path:
    path = Path(path)
    flat = [_flatten(r) for r in report.rows]
    cols = []
    for f in flat:
        cols.extend(k for k in f if k not in cols)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# run_id={run_id}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id"] + cols)
        for f in flat:
            w.writerow([run_id] + [repr(f[c]) if isinstance(f.get(c), float) else f.get(c, "")
                                   for c in cols])
        for c in report.criteria:
            fh.write(f"# criterion {c.name}: {'pass' if c.passed else 'FAIL'} {c.detail}\n")
    return path


def provenance() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).parent)
        commit = rev.stdout.strip() if rev.returncode == 0 else "unknown"
    except (OSError, subprocess.SubprocessError):
        commit = "unknown"
    return f"mdplab {__version__} (git {commit})"


@dataclass
class RunRegistryEntry:
    run_id: str
    timestamp: str
    artifacts: list[str]
    provenance: str
    wall_clock: float | None = None

    def to_dict(self) -> dict:
        return {"run_id": self.run_id, "timestamp": self.timestamp, "artifacts": self.artifacts,
                "provenance": self.provenance, "wall_clock": self.wall_clock}


def register(directory, run_id: str, artifacts, wall_clock: float | None = None) -> RunRegistryEntry:
    entry = RunRegistryEntry(run_id, datetime.now(timezone.utc).isoformat(timespec="seconds"),
                             [str(a) for a in artifacts], provenance(), wall_clock)
    with (Path(directory) / "registry.jsonl").open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(entry.to_dict()) + "\n")
    return entry


def write_report(report: ExperimentReport, directory, run_id: str,
                 formats=("jsonl", "csv")) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = f"{report.name}-{run_id}"
    paths = []
    if "jsonl" in formats:
        paths.append(write_jsonl(report, directory / f"{stem}.jsonl", run_id))
    if "csv" in formats:
        paths.append(write_summary_csv(report, directory / f"{stem}-summary.csv", run_id))
    return paths
