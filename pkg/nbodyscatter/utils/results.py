"""Result records and the CSV / JSON writers behind every CLI scenario."""
import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..services.free_region import membership
from ..services.nbody_core import pair_distances

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"


class ResultRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: str = SCHEMA_VERSION
    config_hash: str
    scenario: str
    seed: int
    all_passed: Optional[bool] = None
    items: list[dict[str, Any]]


def clean(value):
    """JSON-ready copy of a value: arrays become lists, non-finite floats become None."""
    if isinstance(value, dict):
        return {str(k): clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return [clean(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def build_record(config_hash, scenario, seed, keyed_items, all_passed=None):
    """Record with items sorted by their key, independent of completion order."""
    items = [clean({"key": key, **item}) for key, item in sorted(keyed_items, key=lambda pair: pair[0])]
    return ResultRecord(config_hash=config_hash, scenario=scenario, seed=seed, all_passed=all_passed, items=items)


def write_record(record, directory, name="summary.json"):
    path = Path(directory) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = record.model_dump(mode="json")
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def read_record(path):
    return ResultRecord.model_validate_json(Path(path).read_text(encoding="utf-8"))


def write_timing(directory, scenario, seconds):
    path = Path(directory) / "timing.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"scenario": scenario, "wall_seconds": seconds}, indent=2) + "\n", encoding="utf-8")
    return path


# Trajectory CSV

def trajectory_header(spec):
    return (
        ["t"]
        + [f"q_{k}" for k in range(spec.dim)]
        + [f"p_{k}" for k in range(spec.dim)]
        + ["H", "q_min", "margin1", "margin2", "margin3"]
    )


def trajectory_rows(spec, traj, params):
    q_min = pair_distances(spec, traj.q).min(axis=1)
    for t, q, p, energy, qm, state in zip(traj.times, traj.q, traj.p, traj.energy, q_min, traj.states):
        margins = membership(spec, params, state).margins
        yield [t, *q, *p, energy, qm, *margins]


def _format(value):
    return repr(float(value))


def write_rows(path, header, rows):
    """UTF-8 CSV with a header row; floats are written with repr for exact round trips."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format(v) if isinstance(v, (float, np.floating)) else v for v in row])
            count += 1
    logger.debug(f"Wrote {count} rows to {path}")
    return path


def write_trajectory_csv(path, spec, traj, params):
    return write_rows(path, trajectory_header(spec), trajectory_rows(spec, traj, params))


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]
