import math

import numpy as np
import pytest

from engawa._utils import central_difference_jacobian
from engawa.geometry import (DegeneratePoint, DomainGeometry, GeometryError,
                             NotOnBoundary, UnsupportedGeometry, make_geometry)


class Linear:
    """f(x) = x_1."""

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        grad = np.zeros_like(x)
        grad[..., 0] = 1.0
        return grad

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (x.shape[-1],))


class SquaredNorm:
    """f(x) = |x|^2."""

    def gradient(self, x):
        return 2.0 * np.asarray(x, dtype=float)

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(2.0 * np.eye(x.shape[-1]), x.shape + (x.shape[-1],))


@pytest.fixture
def disk():
    return DomainGeometry.ball((0.0, 0.0), 1.0)


@pytest.fixture
def unit_interval():
    return DomainGeometry.interval(0.0, 1.0)


def sphere_points(count, dimension, seed=1, radius=1.0):
    v = np.random.default_rng(seed).standard_normal((count, dimension))
    return radius * v / np.linalg.norm(v, axis=-1, keepdims=True)


def test_signed_distance(disk, unit_interval):
    assert disk.signed_distance([0.5, 0.0]) == pytest.approx(-0.5)
    assert disk.signed_distance([2.0, 0.0]) == pytest.approx(1.0)
    assert unit_interval.signed_distance([0.25]) == pytest.approx(-0.25)
    assert unit_interval.signed_distance([1.5]) == pytest.approx(0.5)


def test_batched_shapes(disk):
    x = np.zeros((5, 3, 2)) + 0.1
    assert disk.signed_distance(x).shape == (5, 3)
    assert disk.projection_field(x).shape == (5, 3, 2, 2)


def test_outward_normal(disk, unit_interval):
    np.testing.assert_allclose(disk.outward_normal([0.0, 1.0]), [0.0, 1.0])
    assert unit_interval.outward_normal([0.0])[0] == -1.0
    assert unit_interval.outward_normal([1.0])[0] == 1.0


def test_outward_normal_off_boundary(disk):
    with pytest.raises(NotOnBoundary):
        disk.outward_normal([0.5, 0.0])


@pytest.mark.parametrize('dimension', [2, 3])
def test_projection_identities(dimension):
    g = DomainGeometry.ball([0.0] * dimension, 1.0)
    x = sphere_points(1000, dimension)
    P = g.projection_matrix(x)
    n = g.outward_normal(x)

    np.testing.assert_allclose(P, np.swapaxes(P, -1, -2), atol=1e-12, rtol=0)
    np.testing.assert_allclose(P @ P, P, atol=1e-12, rtol=0)
    np.testing.assert_allclose(np.einsum('...ab,...b->...a', P, n), 0.0, atol=1e-12)
    np.testing.assert_allclose(np.trace(P, axis1=-2, axis2=-1), dimension - 1, atol=1e-12)


def test_interval_projection_is_zero(unit_interval):
    np.testing.assert_allclose(unit_interval.projection_matrix([1.0]), [[0.0]])


def test_mean_curvature(unit_interval):
    assert DomainGeometry.ball((0.0, 0.0), 2.0).mean_curvature([2.0, 0.0]) == pytest.approx(0.5)
    assert DomainGeometry.ball((0.0, 0.0, 0.0), 1.0).mean_curvature([0.0, 0.0, 1.0]) == pytest.approx(2.0)
    with pytest.raises(UnsupportedGeometry):
        unit_interval.mean_curvature([0.0])


@pytest.mark.parametrize('dimension', [2, 3])
def test_curvature_drift_matches_minus_kappa_n(dimension):
    g = DomainGeometry.ball([0.0] * dimension, 1.0)
    x = sphere_points(100, dimension, seed=7)
    expected = -g.mean_curvature(x)[:, None] * g.outward_normal(x)
    np.testing.assert_allclose(g.curvature_drift_fd(x), expected, atol=1e-3)


def test_ito_correction(disk):
    np.testing.assert_allclose(disk.ito_correction([0.0, 1.0]), [0.0, -0.5])


@pytest.mark.parametrize('dimension', [2, 3])
def test_surface_divergence_of_normal_is_curvature(dimension):
    g = DomainGeometry.ball([0.0] * dimension, 1.0)
    x = sphere_points(20, dimension, seed=3)
    jacobian = central_difference_jacobian(g.normal_field, x, h=1e-6)
    np.testing.assert_allclose(g.surface_divergence(x, jacobian), g.mean_curvature(x), atol=1e-6)


def test_surface_laplacian_of_coordinate(disk):
    theta = np.linspace(0.0, 2.0 * np.pi, 17)
    x = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    # x_1 restricted to the unit circle is cos(theta), an eigenfunction with eigenvalue -1
    np.testing.assert_allclose(disk.surface_laplacian(x, Linear()), -np.cos(theta), atol=1e-12)


@pytest.mark.parametrize('dimension', [2, 3])
def test_surface_laplacian_of_function_constant_on_sphere(dimension):
    g = DomainGeometry.ball([0.0] * dimension, 1.0)
    x = sphere_points(50, dimension, seed=11)
    np.testing.assert_allclose(g.surface_laplacian(x, SquaredNorm()), 0.0, atol=1e-12)


def test_closest_boundary_point(disk, unit_interval):
    np.testing.assert_allclose(disk.closest_boundary_point([0.5, 0.0]), [1.0, 0.0])
    np.testing.assert_allclose(disk.closest_boundary_point([0.0, -3.0]), [0.0, -1.0])
    assert unit_interval.closest_boundary_point([0.3])[0] == 0.0
    assert unit_interval.closest_boundary_point([0.8])[0] == 1.0
    with pytest.raises(DegeneratePoint):
        disk.closest_boundary_point([0.0, 0.0])


def test_measures():
    assert DomainGeometry.interval(0.0, 2.0).measures() == (2.0, 2.0)
    volume, surface = DomainGeometry.ball((0.0, 0.0), 1.0).measures()
    assert volume == pytest.approx(math.pi)
    assert surface == pytest.approx(2.0 * math.pi)
    volume, surface = DomainGeometry.ball((0.0, 0.0, 0.0), 1.0).measures()
    assert volume == pytest.approx(4.0 * math.pi / 3.0)
    assert surface == pytest.approx(4.0 * math.pi)


def test_uniform_interior(disk):
    x = disk.uniform_interior(np.random.default_rng(0), 500)
    assert x.shape == (500, 2)
    assert np.all(disk.contains(x))


def test_invalid_domains():
    with pytest.raises(GeometryError):
        DomainGeometry.interval(1.0, 0.0)
    with pytest.raises(GeometryError):
        DomainGeometry.ball((0.0, 0.0), 0.0)
    with pytest.raises(GeometryError):
        DomainGeometry.ball((0.0,), 1.0)


def test_make_geometry():
    g = make_geometry('ball', 3)
    assert g.dimension == 3
    assert g.center == (0.0, 0.0, 0.0)
    assert make_geometry('interval', a=-1.0, b=2.0).length_scale == 3.0
    with pytest.raises(GeometryError):
        make_geometry('ball', 3, center=[0.0, 0.0])
