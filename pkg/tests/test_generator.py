import numpy as np
import pytest

from engawa.core import NotApplicable
from engawa.densities import DensityField, DensitySuite, Support, preset
from engawa.generator import (EmptyEnsemble, GeneratorError, Observable,
                              ObservableError,
                              apply_generator, combine, constant, coordinate,
                              expanded_generator, martingale_residual,
                              observable, quadratic, radius2,
                              wentzell_residual)
from engawa.geometry import DomainGeometry
from engawa.simulator import SimConfig, simulate_ensemble
from engawa.state import Ensemble, ParticleSystemState, Trajectory
from engawa.validation import check_observable


@pytest.fixture
def disk():
    return DomainGeometry.ball((0.0, 0.0), 1.0)


def state(*points, flags=None):
    x = np.array(points, dtype=float)
    if flags is None:
        flags = np.zeros(x.shape[0], dtype=bool)
    return ParticleSystemState(x, flags)


def smooth_beta_suite(n, delta):
    def value(x):
        return np.exp(0.3 * x[..., 0] - 0.2 * x[..., 1])

    def gradient(x):
        return value(x)[..., None] * np.array([0.3, -0.2])

    alpha = preset('gaussian-alpha', n).alpha
    beta = tuple(DensityField.smooth(value, gradient, Support.BOUNDARY) for _ in range(n))
    return DensitySuite(alpha=alpha, beta=beta, pair=preset('soft', n).pair, delta=delta)


def random_states(g, n, count, seed):
    """Random configurations with a mix of interior and boundary particles."""
    rng = np.random.default_rng(seed)
    x = np.stack([g.uniform_interior(rng, n) for _ in range(count)])
    flags = rng.uniform(size=(count, n)) < 0.5
    x[flags] = g.closest_boundary_point(x[flags])
    return ParticleSystemState(x, flags)


def cubic(n, d):
    """A non-quadratic observable: sum_i (x^i_1)^3 + x^1_1 x^n_2."""
    def value(x):
        return np.sum(x[..., 0] ** 3, axis=-1) + x[..., 0, 0] * x[..., n - 1, 1]

    def gradient(x):
        grad = np.zeros(x.shape)
        grad[..., :, 0] = 3.0 * x[..., :, 0] ** 2
        grad[..., 0, 0] += x[..., n - 1, 1]
        grad[..., n - 1, 1] += x[..., 0, 0]
        return grad.reshape(x.shape[:-2] + (n * d,))

    def hessian(x):
        H = np.zeros(x.shape[:-2] + (n, d, n, d))
        for i in range(n):
            H[..., i, 0, i, 0] = 6.0 * x[..., i, 0]
        H[..., 0, 0, n - 1, 1] += 1.0
        H[..., n - 1, 1, 0, 0] += 1.0
        return H.reshape(x.shape[:-2] + (n * d, n * d))

    return Observable('cubic', n, d, value, gradient, hessian)


def test_catalog_names():
    assert observable('coord:1:2', 2, 2).name == 'coord:1:2'
    assert observable('radius2:2', 2, 3).name == 'radius2:2'
    assert observable('pairdist2:1:2', 2, 2).name == 'pairdist2:1:2'


@pytest.mark.parametrize('name', ['coord:3:1', 'radius2:0', 'pairdist2:1:1', 'energy', 'coord:1'])
def test_catalog_rejects(name):
    with pytest.raises(ObservableError):
        observable(name, 2, 2)


def test_observable_derivatives_are_consistent():
    x = np.array([[0.3, -0.1], [0.2, 0.4]])
    for f in (observable('pairdist2:1:2', 2, 2), observable('radius2:2', 2, 2), cubic(2, 2)):
        check_observable(f, x)


def test_observable_shape_check():
    with pytest.raises(ObservableError):
        radius2(0, 2, 2).value(np.zeros((3, 2)))


def test_generator_examples(disk):
    s = preset('uniform', 1)
    assert apply_generator(coordinate(0, 0, 1, 2), state([0.2, 0.3]), s, disk) == pytest.approx(0.0)
    assert apply_generator(radius2(0, 1, 2), state([0.2, 0.3]), s, disk) == pytest.approx(2.0)
    assert apply_generator(coordinate(0, 0, 1, 2), state([1.0, 0.0], flags=[True]), s, disk) == pytest.approx(-0.5)


def test_interior_constant_densities_give_half_laplacian(disk):
    s = preset('uniform', 2)
    Q = np.array([[2.0, 0.5, 0.0, 1.0], [0.5, 1.0, 0.0, 0.0], [0.0, 0.0, 3.0, 0.0], [1.0, 0.0, 0.0, -1.0]])
    f = quadratic(Q, np.ones(4), 2.0, 2, 2)
    x = state([0.1, 0.2], [-0.3, 0.1])
    assert apply_generator(f, x, s, disk) == pytest.approx(0.5 * np.trace(Q))


@pytest.mark.parametrize('delta', [0, 1])
def test_compact_and_expanded_forms_agree(disk, delta):
    s = smooth_beta_suite(3, delta)
    x = random_states(disk, 3, 100, seed=delta)
    f = cubic(3, 2)
    np.testing.assert_allclose(apply_generator(f, x, s, disk), expanded_generator(f, x, s, disk), atol=1e-10, rtol=0)


def test_generator_is_linear(disk):
    s = smooth_beta_suite(2, 1)
    x = random_states(disk, 2, 20, seed=5)
    f, g = cubic(2, 2), observable('pairdist2:1:2', 2, 2)
    combined = apply_generator(combine(2.0, f, -3.0, g), x, s, disk)
    separate = 2.0 * apply_generator(f, x, s, disk) - 3.0 * apply_generator(g, x, s, disk)
    np.testing.assert_allclose(combined, separate, atol=1e-10)


def test_wentzell_residual_examples(disk):
    s = preset('uniform', 1)
    x = state([1.0, 0.0], flags=[True])
    assert wentzell_residual(constant(3.0, 1, 2), x, s, disk, 0) == pytest.approx(0.0)
    assert wentzell_residual(coordinate(0, 0, 1, 2), x, s, disk, 0) == pytest.approx(1.0)


def test_wentzell_residual_vanishes_for_constructed_quadratic(disk):
    # f = x_1 + c |x|^2: Delta f = 4c and (n, grad f) = 1 + 2c at (1, 0), so c = -1/6
    c = -1.0 / 6.0
    f = quadratic(2.0 * c * np.eye(2), [1.0, 0.0], 0.0, 1, 2)
    residual = wentzell_residual(f, state([1.0, 0.0], flags=[True]), preset('uniform', 1), disk, 0)
    assert abs(residual) <= 1e-12


def test_wentzell_residual_scaled_form(disk):
    s = DensitySuite(alpha=(DensityField.of_constant(2.0),), beta=(DensityField.of_constant(0.5, Support.BOUNDARY),))
    x = state([1.0, 0.0], flags=[True])
    f = coordinate(0, 0, 1, 2)
    assert wentzell_residual(f, x, s, disk, 0) == pytest.approx(4.0)
    assert wentzell_residual(f, x, s, disk, 0, scaled=True) == pytest.approx(2.0)


def test_wentzell_residual_needs_delta_zero(disk):
    with pytest.raises(NotApplicable):
        wentzell_residual(coordinate(0, 0, 1, 2), state([1.0, 0.0], flags=[True]), preset('uniform', 1, delta=1), disk, 0)


def make_trajectory(times, positions, flags=None):
    positions = np.asarray(positions, dtype=float)
    if flags is None:
        flags = np.zeros(positions.shape[:-1], dtype=bool)
    return Trajectory(times=np.asarray(times, dtype=float), positions=positions, flags=flags)


def test_martingale_residual_constant_observable(disk):
    rng = np.random.default_rng(0)
    paths = [make_trajectory([0.0, 0.5, 1.0], 0.3 * rng.uniform(size=(3, 1, 2))) for _ in range(5)]
    assert martingale_residual(paths, constant(2.0, 1, 2), preset('uniform', 1), disk, 1.0) == (0.0, 0.0)


def test_martingale_residual_at_time_zero(disk):
    paths = [make_trajectory([0.0, 1.0], [[[0.1, 0.2]], [[0.5, 0.1]]])]
    estimate, stderr = martingale_residual(paths, radius2(0, 1, 2), preset('uniform', 1), disk, 0.0)
    assert estimate == 0.0
    assert stderr == 0.0


def test_martingale_residual_uses_trapezoid_rule(disk):
    # L |x|^2 = 2 in the interior for uniform densities
    traj = make_trajectory([0.0, 0.5, 1.0], [[[0.0, 0.0]], [[0.5, 0.0]], [[0.5, 0.5]]])
    estimate, _ = martingale_residual([traj], radius2(0, 1, 2), preset('uniform', 1), disk, 1.0)
    assert estimate == pytest.approx(0.5 - 2.0)


def test_martingale_residual_errors(disk):
    with pytest.raises(EmptyEnsemble):
        martingale_residual([], radius2(0, 1, 2), preset('uniform', 1), disk, 0.5)
    traj = make_trajectory([0.0, 0.5], [[[0.0, 0.0]], [[0.1, 0.0]]])
    with pytest.raises(GeneratorError):
        martingale_residual(Ensemble.from_trajectories([traj]), radius2(0, 1, 2), preset('uniform', 1), disk, 1.0)


@pytest.mark.slow
def test_coordinate_is_a_martingale_on_the_sticky_interval():
    g = DomainGeometry.interval(0.0, 1.0)
    suite = preset('uniform', 1)
    ensemble = simulate_ensemble(SimConfig(g, suite, horizon=0.5, dt=1e-3, seed=0, paths=10_000))
    estimate, stderr = martingale_residual(ensemble, observable('coord:1:1', 1, 1), suite, g, 0.5)
    assert stderr > 0.0
    assert abs(estimate) <= 3.0 * stderr
