"""Interior densities ``alpha_i``, boundary densities ``beta_i`` and the pair interaction factor ``phi``.

The product density of the particle system is::

    rho(x) = phi(x) * prod_i rho_i(x^i),   rho_i = alpha_i in the interior, beta_i on the boundary

with ``phi(x) = exp(-sum_{i != j} zeta(x^i - x^j))``. The sum runs over
*ordered* pairs, so every unordered pair enters twice. Halve the potential
strength to get the unordered convention.

:class:`DensitySuite` assembles the drift ``b`` and the diffusion matrix ``A``
of the generator ``L f = 1/2 Tr(A grad^2 f) + (b, grad f)``. Configurations
have shape ``(..., N, d)`` and flags shape ``(..., N)``.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from engawa.core import NotApplicable, NumericError
from engawa.geometry import DomainGeometry

logger = logging.getLogger('engawa.densities')

Field = Callable[[np.ndarray], np.ndarray]


class DensityError(NumericError):
    pass


class ZeroDensity(DensityError):
    pass


class BelowCutoff(DensityError):
    def __init__(self, pair: Optional[tuple[int, int]], distance: float, r_min: float):
        self.pair = pair
        self.distance = distance
        self.r_min = r_min
        who = 'Two particles' if pair is None else f'Particles {pair[0]} and {pair[1]}'
        super().__init__(f'{who} are {distance:.3e} apart, below the cutoff floor r_min={r_min:.3e}')


class DensityForm(Enum):
    CONSTANT = 'constant'
    SMOOTH = 'smooth'


class Support(Enum):
    INTERIOR = 'interior'
    BOUNDARY = 'boundary'


@dataclass(frozen=True)
class DensityField:
    form: DensityForm
    support: Support
    constant: float = 1.0
    value_fn: Optional[Field] = None
    gradient_fn: Optional[Field] = None

    def __post_init__(self):
        if self.form == DensityForm.CONSTANT and not self.constant > 0:
            raise ZeroDensity(f'A constant {self.support.value} density must be positive, got {self.constant}')
        if self.form == DensityForm.SMOOTH and (self.value_fn is None or self.gradient_fn is None):
            raise DensityError('A smooth density needs both a value and a gradient function')

    @classmethod
    def of_constant(cls, c: float, support: Support = Support.INTERIOR) -> 'DensityField':
        return cls(form=DensityForm.CONSTANT, support=support, constant=float(c))

    @classmethod
    def smooth(cls, value_fn: Field, gradient_fn: Field, support: Support = Support.INTERIOR) -> 'DensityField':
        return cls(form=DensityForm.SMOOTH, support=support, value_fn=value_fn, gradient_fn=gradient_fn)

    @property
    def is_constant(self) -> bool:
        return self.form == DensityForm.CONSTANT

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.is_constant:
            return np.full(x.shape[:-1], self.constant)
        value = np.asarray(self.value_fn(x), dtype=float)
        if np.any(~(value > 0)):
            raise ZeroDensity(f'The {self.support.value} density is not strictly positive at an evaluated point')
        return value

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.is_constant:
            return np.zeros_like(x)
        return np.asarray(self.gradient_fn(x), dtype=float)

    def log_gradient(self, x) -> np.ndarray:
        if self.is_constant:
            return np.zeros_like(np.asarray(x, dtype=float))
        return self.gradient(x) / self.value(x)[..., None]


class PotentialKind(Enum):
    LENNARD_JONES = 'lennard-jones'
    SMOOTH_BOUNDED = 'smooth-bounded'


@dataclass(frozen=True)
class PairPotential:
    """A symmetric pair potential ``zeta``.

    Smooth bounded potentials take the displacement vector ``x^i - x^j`` and
    return the value / gradient of ``zeta`` there.

    The interaction density sums over ordered pairs,
    ``phi = exp(-sum_{i != j} zeta(x^i - x^j))``, so every unordered pair
    counts twice. The drift ``grad_i ln phi`` is the exact gradient of that
    sum: for Lennard-Jones it is ``2 sum_j f(r)(x^i - x^j)``, twice the
    single-count force ``f(r)(x^i - x^j)`` of :meth:`lj_force_coefficient`.
    For two particles at distance 1 with ``epsilon=1, c=1`` that is
    ``(48, 0)`` rather than ``(24, 0)``. Halve ``epsilon`` to get the
    single-count dynamics.
    """
    kind: PotentialKind
    epsilon: float = 1.0
    c: float = 1.0
    r_min: Optional[float] = None
    clamp_at_cutoff: bool = False
    value_fn: Optional[Field] = None
    gradient_fn: Optional[Field] = None

    def __post_init__(self):
        if self.kind == PotentialKind.LENNARD_JONES:
            if not (self.epsilon > 0 and self.c > 0):
                raise DensityError('Lennard-Jones parameters epsilon and c must be positive')
            if self.r_min is None:
                object.__setattr__(self, 'r_min', 0.05 * self.c)
            if not self.r_min > 0:
                raise DensityError('The cutoff floor r_min must be positive')
        elif self.value_fn is None or self.gradient_fn is None:
            raise DensityError('A smooth bounded potential needs both a value and a gradient function')

    @classmethod
    def lennard_jones(cls, epsilon: float, c: float, r_min: Optional[float] = None, clamp_at_cutoff: bool = False) -> 'PairPotential':
        return cls(kind=PotentialKind.LENNARD_JONES, epsilon=float(epsilon), c=float(c), r_min=r_min, clamp_at_cutoff=clamp_at_cutoff)

    @classmethod
    def smooth_bounded(cls, value_fn: Field, gradient_fn: Field) -> 'PairPotential':
        return cls(kind=PotentialKind.SMOOTH_BOUNDED, value_fn=value_fn, gradient_fn=gradient_fn)

    @classmethod
    def gaussian_bump(cls, amplitude: float, width: float) -> 'PairPotential':
        """``zeta(x) = amplitude * exp(-|x|^2 / (2 width^2))``, bounded and smooth."""
        def value(x):
            return amplitude * np.exp(-np.sum(x * x, axis=-1) / (2.0 * width ** 2))

        def gradient(x):
            return -value(x)[..., None] * x / width ** 2

        return cls.smooth_bounded(value, gradient)

    @property
    def is_lennard_jones(self) -> bool:
        return self.kind == PotentialKind.LENNARD_JONES

    def lj_potential(self, r) -> np.ndarray:
        """``zeta`` as a function of the separation ``r = |x|``."""
        q6 = (self.c / np.asarray(r, dtype=float)) ** 6
        return 4.0 * self.epsilon * (q6 * q6 - q6)

    def lj_force_coefficient(self, r) -> np.ndarray:
        """``f(r) = 24 eps / c^2 (2 (c/r)^14 - (c/r)^8)``, so that ``-grad zeta(x) = f(|x|) x``."""
        if not self.is_lennard_jones:
            raise NotApplicable('The force coefficient is only defined for the Lennard-Jones potential')
        r = np.asarray(r, dtype=float)
        if np.any(r < self.r_min):
            if not self.clamp_at_cutoff:
                raise BelowCutoff(None, float(np.min(r)), self.r_min)
            r = np.maximum(r, self.r_min)
        q = self.c / r
        return 24.0 * self.epsilon / self.c ** 2 * (2.0 * q ** 14 - q ** 8)

    def value(self, displacement) -> np.ndarray:
        displacement = np.asarray(displacement, dtype=float)
        if self.is_lennard_jones:
            r = np.linalg.norm(displacement, axis=-1)
            if self.clamp_at_cutoff:
                r = np.maximum(r, self.r_min)
            return self.lj_potential(r)
        return np.asarray(self.value_fn(displacement), dtype=float)

    def negative_gradient(self, displacement) -> np.ndarray:
        """``-grad zeta`` at the displacement vector."""
        displacement = np.asarray(displacement, dtype=float)
        if self.is_lennard_jones:
            r = np.linalg.norm(displacement, axis=-1)
            return self.lj_force_coefficient(r)[..., None] * displacement
        return -np.asarray(self.gradient_fn(displacement), dtype=float)

    def describe(self) -> dict:
        if self.is_lennard_jones:
            return {'kind': self.kind.value, 'epsilon': self.epsilon, 'c': self.c, 'r_min': self.r_min, 'clamp_at_cutoff': self.clamp_at_cutoff}
        return {'kind': self.kind.value}


def lj_force_coefficient(p: PairPotential, r) -> np.ndarray:
    return p.lj_force_coefficient(r)


def _off_diagonal(n: int) -> np.ndarray:
    return ~np.eye(n, dtype=bool)


@dataclass(frozen=True)
class DensitySuite:
    alpha: tuple[DensityField, ...]
    beta: tuple[DensityField, ...]
    pair: Optional[PairPotential] = None
    delta: int = 0
    name: str = field(default='custom', compare=False)

    def __post_init__(self):
        if len(self.alpha) != len(self.beta):
            raise DensityError(f'Got {len(self.alpha)} interior densities but {len(self.beta)} boundary densities')
        if not self.alpha:
            raise DensityError('A density suite needs at least one particle')
        if self.delta not in (0, 1):
            raise DensityError(f'delta must be 0 or 1, got {self.delta}')

    @property
    def n_particles(self) -> int:
        return len(self.alpha)

    @property
    def all_constant(self) -> bool:
        return all(f.is_constant for f in self.alpha + self.beta)

    def _pair_separations(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        displacement = x[..., :, None, :] - x[..., None, :, :]
        distance = np.linalg.norm(displacement, axis=-1)
        return displacement, distance

    def _check_cutoff(self, distance: np.ndarray) -> None:
        if not self.pair.is_lennard_jones or self.pair.clamp_at_cutoff:
            return
        below = (distance < self.pair.r_min) & _off_diagonal(distance.shape[-1])
        if np.any(below):
            where = tuple(np.argwhere(below)[0])
            raise BelowCutoff((int(where[-2]), int(where[-1])), float(distance[where]), self.pair.r_min)

    def pair_energy(self, x) -> np.ndarray:
        """``sum_{i != j} zeta(x^i - x^j)`` over ordered pairs."""
        x = np.asarray(x, dtype=float)
        if self.pair is None or x.shape[-2] < 2:
            return np.zeros(x.shape[:-2])
        displacement, distance = self._pair_separations(x)
        self._check_cutoff(distance)
        n = x.shape[-2]
        mask = _off_diagonal(n)
        return np.sum(self.pair.value(displacement[..., mask, :]), axis=-1)

    def phi_value(self, x) -> np.ndarray:
        return np.exp(-self.pair_energy(x))

    def phi_log_grads(self, x) -> np.ndarray:
        """``grad_i ln phi`` for every particle at once, shape ``(..., N, d)``.

        Since ``zeta`` is symmetric and the sum runs over ordered pairs this
        equals ``2 sum_{j != i} -grad zeta(x^i - x^j)``.
        """
        x = np.asarray(x, dtype=float)
        if self.pair is None or x.shape[-2] < 2:
            return np.zeros_like(x)
        displacement, distance = self._pair_separations(x)
        self._check_cutoff(distance)
        n = x.shape[-2]
        # fill the diagonal with a harmless separation before evaluating
        safe = np.where(np.eye(n, dtype=bool)[..., None], 1.0, displacement)
        pull = self.pair.negative_gradient(safe)
        pull = np.where(np.eye(n, dtype=bool)[..., None], 0.0, pull)
        return 2.0 * np.sum(pull, axis=-2)

    def phi_log_grad(self, i: int, x) -> np.ndarray:
        return self.phi_log_grads(x)[..., i, :]

    def alpha_log_grad(self, i: int, x) -> np.ndarray:
        return self.alpha[i].log_gradient(x)

    def beta_log_surface_grad(self, i: int, x, g: DomainGeometry) -> np.ndarray:
        if self.delta == 0:
            raise NotApplicable('The boundary density gradient only enters the dynamics with tangential diffusion (delta=1)')
        return g.surface_gradient(x, self.beta[i].log_gradient(x))

    def stickiness_ratio(self, i: int, x) -> np.ndarray:
        beta = self.beta[i].value(x)
        if np.any(~(beta > 0)):
            raise ZeroDensity(f'Boundary density of particle {i} vanishes')
        return self.alpha[i].value(x) / beta

    def log_density(self, x, flags) -> np.ndarray:
        """``ln rho(x)`` with each particle's factor chosen by its boundary flag."""
        x = np.asarray(x, dtype=float)
        flags = np.asarray(flags, dtype=bool)
        total = -self.pair_energy(x)
        for i in range(self.n_particles):
            xi = x[..., i, :]
            total = total + np.where(flags[..., i], np.log(self.beta[i].value(xi)), np.log(self.alpha[i].value(xi)))
        return total

    def interior_drift(self, i: int, x) -> np.ndarray:
        """``1/2 (grad alpha_i / alpha_i + grad_i phi / phi)`` of particle ``i``."""
        x = np.asarray(x, dtype=float)
        return 0.5 * (self.alpha_log_grad(i, x[..., i, :]) + self.phi_log_grad(i, x))

    def escape_drift(self, i: int, g: DomainGeometry, p) -> np.ndarray:
        """``-1/2 (alpha_i / beta_i) n`` at the boundary point ``p``."""
        return -0.5 * self.stickiness_ratio(i, p)[..., None] * g.outward_normal(p)

    def tangential_drift(self, i: int, g: DomainGeometry, p, x) -> np.ndarray:
        """``1/2 delta (grad_Gamma beta_i / beta_i + grad_Gamma,i phi / phi)`` at the boundary point ``p``.

        ``x`` is the full configuration the interaction is evaluated on.
        """
        p = np.asarray(p, dtype=float)
        if self.delta == 0:
            return np.zeros_like(p)
        phi_part = g.surface_gradient(p, self.phi_log_grad(i, x))
        return 0.5 * (self.beta_log_surface_grad(i, p, g) + phi_part)

    @staticmethod
    def _flatten_batch(x, flags) -> tuple[np.ndarray, np.ndarray, tuple]:
        x = np.asarray(x, dtype=float)
        if x.shape[-2] == 0:
            raise DensityError('A configuration needs at least one particle')
        flags = np.broadcast_to(np.asarray(flags, dtype=bool), x.shape[:-1])
        batch = x.shape[:-2]
        return x.reshape((-1,) + x.shape[-2:]), flags.reshape((-1, x.shape[-2])), batch

    def assemble_particle_drift(self, g: DomainGeometry, x, flags) -> np.ndarray:
        """Per-particle blocks ``b_i`` of the drift, shape ``(..., N, d)``.

        Boundary terms of a flagged particle are evaluated at its closest
        boundary point. With ``delta=1`` they include the Ito correction
        ``-1/2 kappa n`` of the tangential motion, which makes the compact
        generator carry the full Laplace-Beltrami operator.
        """
        x, flags, batch = self._flatten_batch(x, flags)
        drift = np.empty_like(x)
        for i in range(self.n_particles):
            drift[:, i, :] = self.interior_drift(i, x)
            mask = flags[:, i]
            if np.any(mask):
                config = x[mask]
                foot = g.closest_boundary_point(config[:, i, :])
                boundary = self.escape_drift(i, g, foot) + self.tangential_drift(i, g, foot, config)
                if self.delta == 1:
                    boundary = boundary + g.ito_correction(foot)
                drift[mask, i, :] = boundary
        return drift.reshape(batch + drift.shape[-2:])

    def assemble_drift(self, g: DomainGeometry, x, flags) -> np.ndarray:
        drift = self.assemble_particle_drift(g, x, flags)
        return drift.reshape(drift.shape[:-2] + (-1,))

    def assemble_diffusion(self, g: DomainGeometry, x, flags) -> np.ndarray:
        """Block-diagonal ``A`` with ``E`` for interior particles and ``delta P`` for boundary ones."""
        x, flags, batch = self._flatten_batch(x, flags)
        m, n, d = x.shape
        A = np.zeros((m, n * d, n * d))
        for i in range(n):
            block = np.tile(np.eye(d), (m, 1, 1))
            mask = flags[:, i]
            if np.any(mask):
                foot = g.closest_boundary_point(x[mask, i, :])
                block[mask] = self.delta * g.projection_field(foot)
            A[:, i * d:(i + 1) * d, i * d:(i + 1) * d] = block
        return A.reshape(batch + (n * d, n * d))

    def describe(self) -> dict:
        def field_name(f: DensityField):
            return f.constant if f.is_constant else 'smooth'

        return {
            'name': self.name,
            'alpha': [field_name(f) for f in self.alpha],
            'beta': [field_name(f) for f in self.beta],
            'pair': None if self.pair is None else self.pair.describe(),
            'delta': self.delta,
        }


def _gaussian_alpha() -> DensityField:
    def value(x):
        return np.exp(-np.sum(x * x, axis=-1))

    def gradient(x):
        return -2.0 * x * value(x)[..., None]

    return DensityField.smooth(value, gradient, Support.INTERIOR)


PRESETS = ('uniform', 'gaussian-alpha', 'lj', 'soft')


def preset(name: str,
           n_particles: int,
           delta: int = 0,
           alpha: float = 1.0,
           beta: float = 1.0,
           lj_epsilon: float = 0.1,
           lj_c: float = 0.1,
           r_min: Optional[float] = None,
           clamp_at_cutoff: bool = False,
           soft_amplitude: float = 1.0,
           soft_width: float = 0.3) -> DensitySuite:
    """Build one of the named density suites."""
    if name not in PRESETS:
        raise DensityError(f'Unknown density preset "{name}", expected one of {", ".join(PRESETS)}')

    if name == 'gaussian-alpha':
        alphas = tuple(_gaussian_alpha() for _ in range(n_particles))
    else:
        alphas = tuple(DensityField.of_constant(alpha, Support.INTERIOR) for _ in range(n_particles))
    betas = tuple(DensityField.of_constant(beta, Support.BOUNDARY) for _ in range(n_particles))

    pair = None
    if name == 'lj':
        pair = PairPotential.lennard_jones(lj_epsilon, lj_c, r_min=r_min, clamp_at_cutoff=clamp_at_cutoff)
        if clamp_at_cutoff:
            logger.warning('Lennard-Jones force is clamped at r_min=%s, the dynamics no longer follow the exact potential below it', pair.r_min)
    elif name == 'soft':
        pair = PairPotential.gaussian_bump(soft_amplitude, soft_width)

    logger.debug('Built density preset %s for %d particles (delta=%d)', name, n_particles, delta)
    return DensitySuite(alpha=alphas, beta=betas, pair=pair, delta=delta, name=name)


def without_interaction(s: DensitySuite) -> DensitySuite:
    """The same suite with ``phi = 1``."""
    return DensitySuite(alpha=s.alpha, beta=s.beta, pair=None, delta=s.delta, name=s.name)
