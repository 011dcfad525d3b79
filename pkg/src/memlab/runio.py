"""Run directories: JSON reports, trajectory CSVs and an index of artifacts."""
from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def write_json(path, data) -> None:
    payload = {"schema_version": SCHEMA_VERSION, **_jsonable(data)}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


class RunDirectory:
    """``<root>/<experiment>-<timestamp>/`` with an ``index.json`` of artifacts."""

    def __init__(self, root, experiment: str, stamp: str | None = None):
        stamp = stamp or time.strftime("%Y%m%dT%H%M%S")
        self.path = Path(root) / f"{experiment}-{stamp}"
        n = 1
        while self.path.exists():
            n += 1
            self.path = Path(root) / f"{experiment}-{stamp}-{n}"
        self.path.mkdir(parents=True)
        self.experiment = experiment
        self.artifacts: list[dict] = []

    def add_json(self, name: str, data, kind: str = "report") -> Path:
        p = self.path / name
        write_json(p, data)
        self.artifacts.append({"file": name, "kind": kind})
        return p

    def add_trajectory(self, name: str, traj) -> Path:
        p = self.path / name
        traj.write_csv(p)
        self.artifacts.append({"file": name, "kind": "trajectory_csv"})
        return p

    def add_table(self, name: str, header: list[str], rows) -> Path:
        p = self.path / name
        with open(p, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")
        self.artifacts.append({"file": name, "kind": "table_csv"})
        return p

    def close(self) -> Path:
        write_json(self.path / "index.json", {"experiment": self.experiment, "artifacts": self.artifacts})
        return self.path
