"""Runtime invariant checks used in debug mode and by the test-suite."""
import logging
from typing import Optional

import numpy as np

from engawa._utils import central_difference_gradient
from engawa.core import EngawaError
from engawa.geometry import DomainGeometry

logger = logging.getLogger('engawa.validation')


class InvariantViolation(EngawaError):
    pass


def check_state(g: DomainGeometry, positions, flags, layer_width: Optional[float] = None, time: Optional[float] = None,
                sojourn: bool = False) -> None:
    """Positions lie in the closed domain and flags agree with the boundary test.

    With ``layer_width`` the flag means "inside the sticky layer", otherwise
    "on the boundary within the geometry tolerance". With ``sojourn`` a flag
    only has to imply the boundary test, since a walk may touch the boundary
    without sticking there.
    """
    sd = g.signed_distance(positions)
    when = '' if time is None else f' at t={time:.6g}'
    if not np.all(np.isfinite(sd)):
        raise InvariantViolation(f'Non-finite position{when}')
    if np.any(sd > g.tol):
        raise InvariantViolation(f'A particle left the closed domain by {float(np.max(sd)):.3e}{when}')

    expected = -sd <= layer_width if layer_width is not None else np.abs(sd) <= g.tol
    flags = np.asarray(flags, dtype=bool)
    wrong = flags & ~expected if sojourn else flags != expected
    if np.any(wrong):
        raise InvariantViolation(f'{int(np.sum(wrong))} boundary flags disagree with the particle positions{when}')


def check_diffusion_matrix(A, atol: float = 1e-12, time: Optional[float] = None) -> None:
    """``A`` is a symmetric projection, blockwise the identity, ``P`` or zero."""
    A = np.asarray(A, dtype=float)
    when = '' if time is None else f' at t={time:.6g}'
    if not np.allclose(A, np.swapaxes(A, -1, -2), atol=atol, rtol=0.0):
        raise InvariantViolation(f'Diffusion matrix is not symmetric{when}')
    if not np.allclose(A @ A, A, atol=atol, rtol=0.0):
        raise InvariantViolation(f'Diffusion matrix is not idempotent{when}')


def check_observable(f, x, h: float = 1e-6, atol: float = 1e-5) -> None:
    """Spot-check an observable: symmetric Hessian and a gradient that matches its values."""
    x = np.asarray(x, dtype=float)
    hessian = np.asarray(f.hessian(x))
    if not np.allclose(hessian, hessian.T, atol=1e-10, rtol=0.0):
        raise InvariantViolation(f'Hessian of {f.name} is not symmetric')
    expected = central_difference_gradient(lambda y: float(f.value(y)), x, h=h).reshape(-1)
    gradient = np.asarray(f.gradient(x)).reshape(-1)
    if not np.allclose(gradient, expected, atol=atol, rtol=0.0):
        raise InvariantViolation(f'Gradient of {f.name} does not match its values')
