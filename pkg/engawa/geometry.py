"""Bounded domains and the boundary geometry the sticky dynamics needs.

Two kinds of domain are supported: an interval ``(a, b)`` in one dimension and
a ball in any dimension ``d >= 2``. Both have closed forms for the outward
normal ``n``, the tangential projection ``P = E - n n^t``, the mean curvature
``kappa = div_Gamma n`` and the volume / surface measures.

The curvature follows the outward normal convention, so a sphere of radius
``R`` has ``kappa = (d - 1) / R > 0`` and the Ito correction of the
Stratonovich boundary motion ``P o dB`` is ``-1/2 kappa n``.

All functions accept points with a leading batch shape, i.e. arrays of shape
``(..., d)``. Off the boundary the normal is extended radially (ball) or to
the nearer endpoint (interval).
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol

import numpy as np

from engawa.core import EngawaError

logger = logging.getLogger('engawa.geometry')

DEFAULT_TOLERANCE = 1e-9


class GeometryError(EngawaError):
    pass


class NotOnBoundary(GeometryError):
    pass


class UnsupportedGeometry(GeometryError):
    pass


class DegeneratePoint(GeometryError):
    pass


class GeometryKind(Enum):
    INTERVAL = 'interval'
    BALL = 'ball'


class PointFunction(Protocol):
    """Anything that supplies the first two derivatives of a function on R^d."""

    def gradient(self, x: np.ndarray) -> np.ndarray:
        ...

    def hessian(self, x: np.ndarray) -> np.ndarray:
        ...


@dataclass(frozen=True)
class DomainGeometry:
    kind: GeometryKind
    dimension: int
    a: float = 0.0
    b: float = 1.0
    center: tuple[float, ...] = field(default=())
    radius: float = 1.0
    tol: float = DEFAULT_TOLERANCE

    def __post_init__(self):
        if self.dimension < 1:
            raise GeometryError(f'The dimension must be positive, got {self.dimension}')

        if self.kind == GeometryKind.INTERVAL:
            if self.dimension != 1:
                raise GeometryError('An interval lives in dimension 1')
            if not self.a < self.b:
                raise GeometryError(f'Invalid interval ({self.a}, {self.b}): a must be smaller than b')

        elif self.kind == GeometryKind.BALL:
            if self.dimension < 2:
                raise GeometryError('A ball needs dimension d >= 2, use an interval in dimension 1')
            if not self.radius > 0:
                raise GeometryError(f'The radius must be positive, got {self.radius}')
            if len(self.center) != self.dimension:
                raise GeometryError(f'The center has {len(self.center)} components but the dimension is {self.dimension}')

        if not self.tol > 0:
            raise GeometryError('The boundary tolerance must be positive')

    @classmethod
    def interval(cls, a: float = 0.0, b: float = 1.0, tol: float = DEFAULT_TOLERANCE) -> 'DomainGeometry':
        return cls(kind=GeometryKind.INTERVAL, dimension=1, a=float(a), b=float(b), tol=tol)

    @classmethod
    def ball(cls, center=(0.0, 0.0), radius: float = 1.0, tol: float = DEFAULT_TOLERANCE) -> 'DomainGeometry':
        center = tuple(float(c) for c in center)
        return cls(kind=GeometryKind.BALL, dimension=len(center), center=center, radius=float(radius), tol=tol)

    @property
    def is_ball(self) -> bool:
        return self.kind == GeometryKind.BALL

    @property
    def length_scale(self) -> float:
        return self.radius if self.is_ball else self.b - self.a

    def _points(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.dimension == 1 and x.ndim == 0:
            x = x.reshape(1)
        if x.shape[-1] != self.dimension:
            raise GeometryError(f'Expected points with {self.dimension} components, got shape {x.shape}')
        return x

    def _radial(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        offset = x - np.asarray(self.center)
        return offset, np.linalg.norm(offset, axis=-1)

    def _require_boundary(self, x: np.ndarray) -> None:
        distance = np.abs(self.signed_distance(x))
        if np.any(distance > self.tol):
            raise NotOnBoundary(f'Point is at distance {float(np.max(distance)):.3e} from the boundary (tolerance {self.tol:.1e})')

    def signed_distance(self, x) -> np.ndarray:
        """Negative inside, zero on the boundary, positive outside."""
        x = self._points(x)
        if self.is_ball:
            _, rho = self._radial(x)
            return rho - self.radius
        y = x[..., 0]
        return np.maximum(self.a - y, y - self.b)

    def contains(self, x) -> np.ndarray:
        return self.signed_distance(x) <= self.tol

    def on_boundary(self, x) -> np.ndarray:
        return np.abs(self.signed_distance(x)) <= self.tol

    def normal_field(self, x) -> np.ndarray:
        """Outward normal extended off the boundary (radially for a ball, towards the nearer endpoint for an interval)."""
        x = self._points(x)
        if self.is_ball:
            offset, rho = self._radial(x)
            if np.any(rho == 0.0):
                raise DegeneratePoint('The normal is not defined at the center of the ball')
            return offset / rho[..., None]
        y = x[..., 0]
        return np.where(y - self.a <= self.b - y, -1.0, 1.0)[..., None]

    def outward_normal(self, x) -> np.ndarray:
        x = self._points(x)
        self._require_boundary(x)
        return self.normal_field(x)

    def projection_field(self, x) -> np.ndarray:
        """``E - n n^t`` with the extended normal, defined in a neighbourhood of the boundary."""
        n = self.normal_field(x)
        return np.eye(self.dimension) - n[..., :, None] * n[..., None, :]

    def projection_matrix(self, x) -> np.ndarray:
        x = self._points(x)
        self._require_boundary(x)
        return self.projection_field(x)

    def projection_derivative(self, x) -> np.ndarray:
        """Analytic derivative ``D[..., k, a, b] = d P_ab / d x_k`` of the radially extended projection."""
        if not self.is_ball:
            raise UnsupportedGeometry('The projection field of an interval is constant zero, it has no curvature terms')
        x = self._points(x)
        offset, rho = self._radial(x)
        n = offset / rho[..., None]
        eye = np.eye(self.dimension)
        # dn_a/dx_k = (delta_ak - n_a n_k) / rho
        dn = (eye - n[..., :, None] * n[..., None, :]) / rho[..., None, None]
        return -(np.einsum('...ak,...b->...kab', dn, n) + np.einsum('...a,...bk->...kab', n, dn))

    def mean_curvature(self, x) -> np.ndarray:
        if not self.is_ball:
            raise UnsupportedGeometry('Mean curvature is not defined for the endpoints of an interval')
        x = self._points(x)
        self._require_boundary(x)
        return np.full(x.shape[:-1], (self.dimension - 1) / self.radius)

    def surface_gradient(self, x, grad_f) -> np.ndarray:
        P = self.projection_matrix(x)
        return np.einsum('...ab,...b->...a', P, np.asarray(grad_f, dtype=float))

    def surface_divergence(self, x, jacobian) -> np.ndarray:
        """``div_Gamma Phi = Tr(P grad Phi)`` where ``jacobian[..., a, k] = d Phi_a / d x_k``."""
        P = self.projection_matrix(x)
        return np.einsum('...jk,...jk->...', P, np.asarray(jacobian, dtype=float))

    def surface_laplacian_from(self, x, grad_f, hess_f) -> np.ndarray:
        """Laplace-Beltrami ``Tr(P grad(P grad f))`` from the full gradient and Hessian of ``f`` at ``x``."""
        if not self.is_ball:
            raise UnsupportedGeometry('The Laplace-Beltrami operator is not defined on the endpoints of an interval')
        x = self._points(x)
        self._require_boundary(x)
        P = self.projection_field(x)
        dP = self.projection_derivative(x)
        grad_f = np.asarray(grad_f, dtype=float)
        hess_f = np.asarray(hess_f, dtype=float)
        first_order = np.einsum('...jk,...kjb,...b->...', P, dP, grad_f)
        second_order = np.einsum('...jk,...jb,...kb->...', P, P, hess_f)
        return first_order + second_order

    def surface_laplacian(self, x, f: PointFunction) -> np.ndarray:
        return self.surface_laplacian_from(x, f.gradient(x), f.hessian(x))

    def curvature_drift_fd(self, x, h: float = 1e-5) -> np.ndarray:
        """The vector ``(P grad)^t P`` at ``x`` with ``grad P`` taken by central differences of :meth:`projection_field`.

        On a C^2 boundary it equals ``-kappa n``.
        """
        x = self._points(x)
        P = self.projection_field(x)
        dP = []
        for m in range(self.dimension):
            step = np.zeros(self.dimension)
            step[m] = h
            dP.append((self.projection_field(x + step) - self.projection_field(x - step)) / (2.0 * h))
        dP = np.stack(dP, axis=-3)
        return np.einsum('...jm,...mjk->...k', P, dP)

    def ito_correction(self, x) -> np.ndarray:
        """Drift ``1/2 (P grad)^t P = -1/2 kappa n`` of the Ito form of ``P o dB``."""
        return -0.5 * self.mean_curvature(x)[..., None] * self.outward_normal(x)

    def closest_boundary_point(self, x) -> np.ndarray:
        x = self._points(x)
        if self.is_ball:
            offset, rho = self._radial(x)
            if np.any(rho == 0.0):
                raise DegeneratePoint('The center of the ball has no unique closest boundary point')
            return np.asarray(self.center) + self.radius * offset / rho[..., None]
        y = x[..., 0]
        return np.where(y - self.a <= self.b - y, self.a, self.b)[..., None]

    def measures(self) -> tuple[float, float]:
        """Lebesgue measure of the domain and surface measure of its boundary."""
        if not self.is_ball:
            # the boundary of an interval is two unit point masses
            return self.b - self.a, 2.0
        d = self.dimension
        volume = math.pi ** (d / 2) / math.gamma(d / 2 + 1) * self.radius ** d
        return volume, d * volume / self.radius

    def uniform_interior(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if not self.is_ball:
            return self.a + (self.b - self.a) * rng.uniform(size=(size, 1))
        direction = rng.standard_normal((size, self.dimension))
        direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
        radius = self.radius * rng.uniform(size=(size, 1)) ** (1.0 / self.dimension)
        return np.asarray(self.center) + radius * direction

    def describe(self) -> dict:
        if self.is_ball:
            return {'kind': self.kind.value, 'center': list(self.center), 'radius': self.radius}
        return {'kind': self.kind.value, 'a': self.a, 'b': self.b}


def make_geometry(kind: str, dimension: Optional[int] = None, a: float = 0.0, b: float = 1.0, radius: float = 1.0, center: Optional[list[float]] = None, tol: float = DEFAULT_TOLERANCE) -> DomainGeometry:
    """Build a geometry from the flat run-config parameters."""
    kind = GeometryKind(kind)
    if kind == GeometryKind.INTERVAL:
        return DomainGeometry.interval(a, b, tol=tol)
    if center is None:
        center = [0.0] * (dimension or 2)
    elif dimension is not None and len(center) != dimension:
        raise GeometryError(f'The center has {len(center)} components but the dimension is {dimension}')
    logger.debug('Building ball of radius %s centered at %s', radius, center)
    return DomainGeometry.ball(center, radius, tol=tol)
