"""The Wentzell generator of the particle system and the checks built on it.

Observables are functions of a configuration ``x`` of shape ``(..., N, d)``
that bring their own analytic gradient (``(..., N*d)``) and Hessian
(``(..., N*d, N*d)``).
"""
import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Union

import numpy as np

from engawa._utils import mean_and_stderr
from engawa.core import EngawaError, NotApplicable
from engawa.densities import DensitySuite
from engawa.geometry import DomainGeometry
from engawa.state import Ensemble, ParticleSystemState, Trajectory

logger = logging.getLogger('engawa.generator')


class GeneratorError(EngawaError):
    pass


class EmptyEnsemble(GeneratorError):
    pass


class ObservableError(GeneratorError):
    pass


ConfigFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Observable:
    name: str
    n_particles: int
    dimension: int
    value_fn: ConfigFn
    gradient_fn: ConfigFn
    hessian_fn: ConfigFn

    def _config(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-2:] != (self.n_particles, self.dimension):
            raise ObservableError(f'{self.name} expects configurations of {self.n_particles} particles in dimension {self.dimension}, got shape {x.shape}')
        return x

    def value(self, x) -> np.ndarray:
        return np.asarray(self.value_fn(self._config(x)), dtype=float)

    def gradient(self, x) -> np.ndarray:
        return np.asarray(self.gradient_fn(self._config(x)), dtype=float)

    def hessian(self, x) -> np.ndarray:
        return np.asarray(self.hessian_fn(self._config(x)), dtype=float)

    def block_gradient(self, x, i: int) -> np.ndarray:
        d = self.dimension
        return self.gradient(x)[..., i * d:(i + 1) * d]

    def block_hessian(self, x, i: int) -> np.ndarray:
        d = self.dimension
        return self.hessian(x)[..., i * d:(i + 1) * d, i * d:(i + 1) * d]


def combine(a: float, f: Observable, b: float, g: Observable) -> Observable:
    """The observable ``a f + b g``."""
    if (f.n_particles, f.dimension) != (g.n_particles, g.dimension):
        raise ObservableError(f'Cannot combine {f.name} and {g.name}, they live on different configuration spaces')
    return Observable(
        name=f'{a}*{f.name}+{b}*{g.name}',
        n_particles=f.n_particles,
        dimension=f.dimension,
        value_fn=lambda x: a * f.value(x) + b * g.value(x),
        gradient_fn=lambda x: a * f.gradient(x) + b * g.gradient(x),
        hessian_fn=lambda x: a * f.hessian(x) + b * g.hessian(x),
    )


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(x.shape[:-2] + (-1,))


def constant(c: float, n_particles: int, dimension: int) -> Observable:
    nd = n_particles * dimension
    return Observable(
        name=f'const:{c}',
        n_particles=n_particles,
        dimension=dimension,
        value_fn=lambda x: np.full(x.shape[:-2], float(c)),
        gradient_fn=lambda x: np.zeros(x.shape[:-2] + (nd,)),
        hessian_fn=lambda x: np.zeros(x.shape[:-2] + (nd, nd)),
    )


def quadratic(Q, c, k: float, n_particles: int, dimension: int, name: str = 'quadratic') -> Observable:
    """``f(x) = 1/2 x^t Q x + c^t x + k`` on the flattened configuration."""
    nd = n_particles * dimension
    Q = np.asarray(Q, dtype=float).reshape(nd, nd)
    Q = 0.5 * (Q + Q.T)
    c = np.asarray(c, dtype=float).reshape(nd)
    return Observable(
        name=name,
        n_particles=n_particles,
        dimension=dimension,
        value_fn=lambda x: 0.5 * np.einsum('...a,ab,...b->...', _flat(x), Q, _flat(x)) + _flat(x) @ c + k,
        gradient_fn=lambda x: _flat(x) @ Q + c,
        hessian_fn=lambda x: np.broadcast_to(Q, x.shape[:-2] + (nd, nd)),
    )


def coordinate(i: int, k: int, n_particles: int, dimension: int) -> Observable:
    """``x^i_k`` with zero-based indices."""
    c = np.zeros((n_particles, dimension))
    c[i, k] = 1.0
    return quadratic(np.zeros((n_particles * dimension,) * 2), c, 0.0, n_particles, dimension, name=f'coord:{i + 1}:{k + 1}')


def radius2(i: int, n_particles: int, dimension: int) -> Observable:
    """``|x^i|^2``."""
    Q = np.zeros((n_particles, dimension, n_particles, dimension))
    Q[i, :, i, :] = 2.0 * np.eye(dimension)
    nd = n_particles * dimension
    return quadratic(Q.reshape(nd, nd), np.zeros(nd), 0.0, n_particles, dimension, name=f'radius2:{i + 1}')


def pairdist2(i: int, j: int, n_particles: int, dimension: int) -> Observable:
    """``|x^i - x^j|^2``."""
    eye = 2.0 * np.eye(dimension)
    Q = np.zeros((n_particles, dimension, n_particles, dimension))
    Q[i, :, i, :] += eye
    Q[j, :, j, :] += eye
    Q[i, :, j, :] -= eye
    Q[j, :, i, :] -= eye
    nd = n_particles * dimension
    return quadratic(Q.reshape(nd, nd), np.zeros(nd), 0.0, n_particles, dimension, name=f'pairdist2:{i + 1}:{j + 1}')


def _index(token: str, upper: int, what: str, name: str) -> int:
    try:
        value = int(token)
    except ValueError:
        raise ObservableError(f'Invalid {what} index "{token}" in observable "{name}"')
    if not 1 <= value <= upper:
        raise ObservableError(f'The {what} index in "{name}" must lie between 1 and {upper}')
    return value - 1


def observable(name: str, n_particles: int, dimension: int) -> Observable:
    """Look up a catalog observable by name.

    ``coord:i:k``, ``radius2:i`` and ``pairdist2:i:j`` are understood; all
    indices start at 1.
    """
    kind, *args = name.strip().split(':')
    if kind == 'coord' and len(args) == 2:
        return coordinate(_index(args[0], n_particles, 'particle', name), _index(args[1], dimension, 'coordinate', name), n_particles, dimension)
    if kind == 'radius2' and len(args) == 1:
        return radius2(_index(args[0], n_particles, 'particle', name), n_particles, dimension)
    if kind == 'pairdist2' and len(args) == 2:
        i = _index(args[0], n_particles, 'particle', name)
        j = _index(args[1], n_particles, 'particle', name)
        if i == j:
            raise ObservableError(f'"{name}" needs two different particles')
        return pairdist2(i, j, n_particles, dimension)
    raise ObservableError(f'Unknown observable "{name}", expected coord:i:k, radius2:i or pairdist2:i:j')


def apply_generator(f: Observable, x: ParticleSystemState, s: DensitySuite, g: DomainGeometry) -> np.ndarray:
    """``L f = 1/2 Tr(A grad^2 f) + (b, grad f)`` at the (possibly batched) state ``x``."""
    A = s.assemble_diffusion(g, x.positions, x.flags)
    b = s.assemble_drift(g, x.positions, x.flags)
    return 0.5 * np.einsum('...ab,...ba->...', A, f.hessian(x.positions)) + np.einsum('...a,...a->...', b, f.gradient(x.positions))


def expanded_generator(f: Observable, x: ParticleSystemState, s: DensitySuite, g: DomainGeometry) -> np.ndarray:
    """``L f`` term by term, one interior or boundary operator per particle."""
    batch = np.shape(x.positions)[:-2]
    positions = np.asarray(x.positions, dtype=float).reshape((-1,) + np.shape(x.positions)[-2:])
    flags = np.broadcast_to(np.asarray(x.flags, dtype=bool), np.shape(x.positions)[:-1]).reshape(positions.shape[:-1])
    phi_grads = s.phi_log_grads(positions)
    total = np.zeros(positions.shape[:-2])

    for i in range(s.n_particles):
        xi = positions[..., i, :]
        grad = f.block_gradient(positions, i)
        hess = f.block_hessian(positions, i)

        laplacian = np.trace(hess, axis1=-2, axis2=-1)
        interior = 0.5 * (laplacian + np.sum(s.alpha_log_grad(i, xi) * grad, axis=-1))
        interior = interior + 0.5 * np.sum(phi_grads[..., i, :] * grad, axis=-1)

        boundary = np.zeros_like(interior)
        on = flags[..., i]
        if np.any(on):
            p = g.closest_boundary_point(xi[on])
            grad_on = grad[on]
            ratio = s.stickiness_ratio(i, p)
            boundary_on = -0.5 * ratio * np.sum(g.outward_normal(p) * grad_on, axis=-1)
            if s.delta == 1:
                surface_grad = g.surface_gradient(p, grad_on)
                beta_part = np.sum(s.beta_log_surface_grad(i, p, g) * surface_grad, axis=-1)
                phi_part = np.sum(g.surface_gradient(p, phi_grads[on, i]) * surface_grad, axis=-1)
                boundary_on = boundary_on + 0.5 * (g.surface_laplacian_from(p, grad_on, hess[on]) + beta_part + phi_part)
            boundary[on] = boundary_on

        total = total + np.where(on, boundary, interior)
    return total.reshape(batch)


def wentzell_residual(f: Observable, x: ParticleSystemState, s: DensitySuite, g: DomainGeometry, i: int, scaled: bool = False) -> np.ndarray:
    """Left-hand side of the Wentzell condition of particle ``i`` on the boundary.

    ``Delta_i f + (grad_i rho / rho, grad_i f) + (alpha_i / beta_i)(n, grad_i f)``,
    or multiplied through by ``beta_i`` when ``scaled`` (this form stays
    defined as ``beta_i`` goes to 0 and becomes the Neumann condition).
    """
    if s.delta != 0:
        raise NotApplicable('The Wentzell condition is only stated for delta=0')
    positions = np.asarray(x.positions, dtype=float)
    p = positions[..., i, :]
    n = g.outward_normal(p)
    grad = f.block_gradient(positions, i)
    laplacian = np.trace(f.block_hessian(positions, i), axis1=-2, axis2=-1)
    log_grad = s.alpha_log_grad(i, p) + s.phi_log_grad(i, positions)
    bulk = laplacian + np.sum(log_grad * grad, axis=-1)
    normal_derivative = np.sum(n * grad, axis=-1)
    if scaled:
        return s.beta[i].value(p) * bulk + s.alpha[i].value(p) * normal_derivative
    return bulk + s.stickiness_ratio(i, p) * normal_derivative


def _stack(paths: Union[Ensemble, Iterable[Trajectory]]) -> Ensemble:
    if isinstance(paths, Ensemble):
        return paths
    paths = list(paths)
    if not paths:
        raise EmptyEnsemble('No trajectories to average over')
    return Ensemble.from_trajectories(paths)


def martingale_residual(paths: Union[Ensemble, Iterable[Trajectory]], f: Observable, s: DensitySuite, g: DomainGeometry, t: float) -> tuple[float, float]:
    """Monte Carlo mean and standard error of ``f(X_t) - f(X_0) - int_0^t L f(X_s) ds``.

    The integral uses the trapezoid rule on the stored time grid.
    """
    ensemble = _stack(paths)
    if len(ensemble) == 0:
        raise EmptyEnsemble('No trajectories to average over')
    times = np.asarray(ensemble.times)
    if t > times[-1] + 1e-9 * max(1.0, abs(t)):
        raise GeneratorError(f'The trajectories end at t={times[-1]:.6g}, before the requested t={t:.6g}')

    last = int(np.searchsorted(times, t + 1e-9 * max(1.0, abs(t)), side='right'))
    grid = times[:last]
    positions = ensemble.positions[:, :last]
    flags = ensemble.flags[:, :last]

    values = f.value(positions)
    Lf = apply_generator(f, ParticleSystemState(positions, flags), s, g)
    integral = np.sum(0.5 * (Lf[:, 1:] + Lf[:, :-1]) * np.diff(grid), axis=-1)
    residuals = values[:, -1] - values[:, 0] - integral
    logger.debug('Martingale residual of %s over %d paths up to t=%.6g', f.name, len(ensemble), grid[-1])
    return mean_and_stderr(residuals)
