"""Writers for the run artifacts: trajectory CSVs, the JSON summary and the boundary histogram."""
import datetime
import json
import logging
import math
import os
from dataclasses import asdict, is_dataclass
from enum import Enum
from typing import Any, Mapping, Optional

import numpy as np
from pydantic import BaseModel

from engawa.geometry import DomainGeometry
from engawa.state import Ensemble, Trajectory

logger = logging.getLogger('engawa.output')

FLOAT_FORMAT = '%.17g'


def serialize_json(x: Any, _visited: Optional[set] = None) -> Any:
    """Turn results into plain JSON values.

    numpy scalars and arrays become Python numbers and lists, non-finite
    floats become ``None``.
    """
    if _visited is None:
        _visited = set()

    obj_id = id(x)
    if obj_id in _visited:
        return None

    if x is None or isinstance(x, (str, bool, int)):
        return x

    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None

    if isinstance(x, np.integer):
        return int(x)

    if isinstance(x, np.bool_):
        return bool(x)

    _visited.add(obj_id)

    try:
        if isinstance(x, np.ndarray):
            return [serialize_json(y, _visited) for y in x.tolist()] if x.ndim else serialize_json(x.item(), _visited)

        if isinstance(x, BaseModel):
            return serialize_json(x.model_dump(mode='json'), _visited)

        if isinstance(x, Enum):
            return x.value

        if isinstance(x, (list, tuple, set)):
            return [serialize_json(y, _visited) for y in x]

        if isinstance(x, Mapping):
            return {str(a): serialize_json(b, _visited) for a, b in x.items()}

        if is_dataclass(x) and not isinstance(x, type):
            return serialize_json(asdict(x), _visited)

        if isinstance(x, (datetime.datetime, datetime.date, datetime.time)):
            return x.isoformat()

        if hasattr(x, '__dict__'):
            return serialize_json(vars(x), _visited)

        return str(x)
    finally:
        _visited.discard(obj_id)


def trajectory_columns(n_particles: int, dimension: int) -> list[str]:
    """``t``, then ``x<i>_<k>`` for every particle and coordinate, then ``flag<i>`` (1-based)."""
    columns = ['t']
    columns += [f'x{i + 1}_{k + 1}' for i in range(n_particles) for k in range(dimension)]
    columns += [f'flag{i + 1}' for i in range(n_particles)]
    return columns


def trajectory_table(traj: Trajectory) -> np.ndarray:
    n_samples = traj.n_samples
    positions = np.asarray(traj.positions, dtype=float).reshape(n_samples, -1)
    flags = np.asarray(traj.flags).reshape(n_samples, -1).astype(float)
    return np.column_stack([np.asarray(traj.times, dtype=float), positions, flags])


def write_trajectory_csv(path: str, traj: Trajectory) -> str:
    n, d = traj.positions.shape[-2:]
    table = trajectory_table(traj)
    fmt = [FLOAT_FORMAT] * (1 + n * d) + ['%d'] * n
    with open(path, 'w', encoding='utf-8', newline='') as f:
        np.savetxt(f, table, fmt=fmt, delimiter=',', header=','.join(trajectory_columns(n, d)), comments='')
    logger.debug('Wrote %d rows to %s', len(table), path)
    return path


def read_trajectory_csv(path: str, n_particles: int, dimension: int) -> Trajectory:
    table = np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2)
    expected = 1 + n_particles * dimension + n_particles
    if table.shape[1] != expected:
        raise ValueError(f'{path} has {table.shape[1]} columns, expected {expected}')
    positions = table[:, 1:1 + n_particles * dimension].reshape(-1, n_particles, dimension)
    flags = table[:, 1 + n_particles * dimension:].astype(bool)
    return Trajectory(times=table[:, 0], positions=positions, flags=flags)


def boundary_histogram(ensemble: Ensemble, g: DomainGeometry, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of where flagged particles sit.

    On a ball the location is the polar angle of the first two coordinates
    relative to the center, on an interval it is the position itself.
    """
    positions = np.asarray(ensemble.positions)
    flags = np.asarray(ensemble.flags, dtype=bool)
    located = positions[flags]
    if g.is_ball:
        offset = located - np.asarray(g.center)
        values = np.arctan2(offset[:, 1], offset[:, 0])
        edges = np.linspace(-np.pi, np.pi, bins + 1)
    else:
        values = located[:, 0]
        edges = np.linspace(g.a, g.b, bins + 1)
    counts, edges = np.histogram(values, bins=edges)
    return edges, counts


def write_histogram_csv(path: str, edges: np.ndarray, counts: np.ndarray) -> str:
    total = int(np.sum(counts))
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write('lower,upper,count,fraction\n')
        for lower, upper, count in zip(edges[:-1], edges[1:], counts):
            fraction = count / total if total else 0.0
            f.write(f'{lower:.17g},{upper:.17g},{int(count)},{fraction:.17g}\n')
    logger.debug('Wrote boundary histogram (%d sojourn samples) to %s', total, path)
    return path


def write_json(path: str, content: Any) -> str:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(serialize_json(content), f, indent=2)
        f.write('\n')
    logger.debug('Wrote %s', path)
    return path


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
