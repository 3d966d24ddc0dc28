import csv
import json
from dataclasses import dataclass
from enum import Enum

import numpy as np
import pytest

from engawa.geometry import DomainGeometry
from engawa.output import (boundary_histogram, read_trajectory_csv,
                           serialize_json, trajectory_columns, write_histogram_csv,
                           write_json, write_trajectory_csv)
from engawa.state import Ensemble, Trajectory


class Colour(Enum):
    RED = 'red'


@dataclass
class Point:
    x: float
    y: float


@pytest.fixture
def two_particles():
    rng = np.random.default_rng(5)
    return Trajectory(
        times=np.linspace(0.0, 1.0, 6),
        positions=rng.uniform(-0.5, 0.5, size=(6, 2, 2)),
        flags=rng.uniform(size=(6, 2)) < 0.5,
    )


def test_trajectory_columns():
    assert trajectory_columns(2, 2) == ['t', 'x1_1', 'x1_2', 'x2_1', 'x2_2', 'flag1', 'flag2']
    assert len(trajectory_columns(3, 1)) == 1 + 3 + 3


def test_trajectory_csv_reloads_exactly(tmp_path, two_particles):
    path = str(tmp_path / 'trajectory_0.csv')
    write_trajectory_csv(path, two_particles)

    with open(path, newline='') as f:
        rows = list(csv.reader(f))
    assert rows[0] == trajectory_columns(2, 2)
    assert len(rows) == 7
    assert all(len(row) == 7 for row in rows)
    assert {row[-1] for row in rows[1:]} <= {'0', '1'}

    reloaded = read_trajectory_csv(path, 2, 2)
    np.testing.assert_array_equal(reloaded.times, two_particles.times)
    np.testing.assert_array_equal(reloaded.positions, two_particles.positions)
    np.testing.assert_array_equal(reloaded.flags, two_particles.flags)


def test_single_row_csv(tmp_path):
    traj = Trajectory(times=np.array([0.0]), positions=np.array([[[0.25]]]), flags=np.array([[False]]))
    path = str(tmp_path / 'trajectory_0.csv')
    write_trajectory_csv(path, traj)
    reloaded = read_trajectory_csv(path, 1, 1)
    assert reloaded.n_samples == 1
    assert reloaded.positions[0, 0, 0] == 0.25


def test_read_rejects_wrong_shape(tmp_path, two_particles):
    path = str(tmp_path / 'trajectory_0.csv')
    write_trajectory_csv(path, two_particles)
    with pytest.raises(ValueError):
        read_trajectory_csv(path, 3, 2)


def test_boundary_histogram_on_the_circle():
    disk = DomainGeometry.ball((0.0, 0.0), 1.0)
    angles = np.array([0.5, 2.0, 3.0, 0.0])
    positions = np.stack([np.cos(angles), np.sin(angles)], axis=-1)[None, :, None, :]
    positions[0, 3, 0] *= 0.2
    flags = np.array([[[True], [True], [True], [False]]])
    ensemble = Ensemble(times=np.arange(4.0), positions=positions, flags=flags, path_indices=[0])
    edges, counts = boundary_histogram(ensemble, disk, 4)
    np.testing.assert_allclose(edges, np.linspace(-np.pi, np.pi, 5))
    assert counts.tolist() == [0, 0, 1, 2]


def test_boundary_histogram_on_the_interval(tmp_path):
    interval = DomainGeometry.interval(0.0, 1.0)
    ensemble = Ensemble(
        times=np.arange(3.0),
        positions=np.array([[[[0.0]], [[1.0]], [[0.0]]]]),
        flags=np.array([[[True], [True], [True]]]),
        path_indices=[0],
    )
    edges, counts = boundary_histogram(ensemble, interval, 2)
    assert counts.tolist() == [2, 1]

    path = str(tmp_path / 'hist_boundary.csv')
    write_histogram_csv(path, edges, counts)
    with open(path, newline='') as f:
        rows = list(csv.DictReader(f))
    assert [int(r['count']) for r in rows] == [2, 1]
    assert sum(float(r['fraction']) for r in rows) == pytest.approx(1.0)


def test_serialize_json():
    content = {
        'mean': np.float64(1.5),
        'counts': np.array([1, 2]),
        'missing': float('nan'),
        'index': np.int64(3),
        'flag': np.bool_(True),
        'colour': Colour.RED,
        'point': Point(1.0, 2.0),
        'pair': (1, np.inf),
    }
    assert serialize_json(content) == {
        'mean': 1.5,
        'counts': [1, 2],
        'missing': None,
        'index': 3,
        'flag': True,
        'colour': 'red',
        'point': {'x': 1.0, 'y': 2.0},
        'pair': [1, None],
    }


def test_serialize_json_breaks_cycles():
    content = {'name': 'loop'}
    content['self'] = content
    assert serialize_json(content) == {'name': 'loop', 'self': None}


def test_write_json(tmp_path):
    path = str(tmp_path / 'summary.json')
    write_json(path, {'weights': np.array([0.5, 1.5])})
    with open(path) as f:
        assert json.load(f) == {'weights': [0.5, 1.5]}
