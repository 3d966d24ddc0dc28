"""Brute-force reference for a single sticky particle on an interval.

The reflected path is the triangle-wave fold of a free Gaussian walk, so the
reflection itself carries no discretisation error. Endpoint local time is
read off the fold (twice the mirror displacement of a step that crossed an
endpoint) and the sticky clock ``A = t + (beta / alpha) l`` is inverted
by cutting each step into ``dt`` of motion followed by the sojourn it earned.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from engawa._utils import fold_into_interval, fold_slope
from engawa.core import ConfigError
from engawa.geometry import DomainGeometry
from engawa.noise import BLOCK_SIZE, IncrementStream

logger = logging.getLogger('engawa.oracle1d')

CHUNK_STEPS = 64 * BLOCK_SIZE


@dataclass(frozen=True)
class OracleConfig:
    a: float = 0.0
    b: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    dt: float = 1e-4
    horizon: float = 500.0
    seed: int = 0
    replicas: int = 1
    start: Optional[float] = None
    escape_fraction: float = 0.1
    # replicas 2k and 2k+1 share their noise with opposite signs
    antithetic: bool = False

    def __post_init__(self):
        if not self.a < self.b:
            raise ConfigError(f'Invalid interval ({self.a}, {self.b})')
        if not (self.alpha > 0 and self.beta > 0):
            raise ConfigError('alpha and beta must be positive (use a small floor for the reflecting limit)')
        if not (self.dt > 0 and self.horizon > 0):
            raise ConfigError('dt and the horizon must be positive')
        if self.replicas < 1:
            raise ConfigError('At least one replica is needed')
        if self.start is not None and not self.a <= self.start <= self.b:
            raise ConfigError(f'The start point {self.start} is outside ({self.a}, {self.b})')
        if not 0 < self.escape_fraction < 0.5:
            raise ConfigError('escape_fraction must lie in (0, 0.5)')

    @property
    def start_point(self) -> float:
        return 0.5 * (self.a + self.b) if self.start is None else self.start


@dataclass
class OracleStats:
    boundary_fraction: float
    left_fraction: float
    right_fraction: float
    mean_escape_time: Optional[float]
    escape_count: int
    local_time: float
    fine_steps: int
    replica_fractions: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            'boundary_fraction': self.boundary_fraction,
            'left_fraction': self.left_fraction,
            'right_fraction': self.right_fraction,
            'mean_escape_time': self.mean_escape_time,
            'escape_count': self.escape_count,
            'local_time': self.local_time,
            'fine_steps': self.fine_steps,
            'replica_fractions': list(self.replica_fractions),
        }


class _EscapeClock:
    """Times from the first endpoint contact after an escape to the next escape.

    An escape is reaching distance ``h`` from both endpoints.
    """

    def __init__(self, escaped: bool):
        self.escaped = escaped
        self.opened: Optional[float] = None
        self.durations: list[float] = []

    def feed(self, far_entries: np.ndarray, far_clock: np.ndarray, contacts: np.ndarray, contact_clock: np.ndarray) -> None:
        # far entries sort before contacts of the same step
        events = sorted([(int(k), 0, float(c)) for k, c in zip(far_entries, far_clock)] + [(int(k), 1, float(c)) for k, c in zip(contacts, contact_clock)])
        for _, kind, clock in events:
            if kind == 0:
                if self.opened is not None:
                    self.durations.append(clock - self.opened)
                    self.opened = None
                self.escaped = True
            elif self.escaped and self.opened is None:
                self.opened = clock
                self.escaped = False


def _replica(cfg: OracleConfig, replica: int) -> dict:
    a, b, dt = cfg.a, cfg.b, cfg.dt
    ratio = cfg.beta / cfg.alpha
    h = cfg.escape_fraction * (b - a)
    root_dt = math.sqrt(dt)

    sign = 1.0
    stream_index = replica
    if cfg.antithetic:
        stream_index, odd = divmod(replica, 2)
        sign = -1.0 if odd else 1.0
    noise = IncrementStream(cfg.seed, [stream_index], (1, 1))
    w = cfg.start_point
    clock = 0.0
    step = 0
    left = right = local_time = 0.0

    y0 = fold_into_interval(w, a, b)
    was_far = bool(min(y0 - a, b - y0) >= h)
    escapes = _EscapeClock(escaped=was_far)

    while clock < cfg.horizon:
        dW = sign * root_dt * noise.normals_range(step, step + CHUNK_STEPS).reshape(-1)
        W = w + np.concatenate([[0.0], np.cumsum(dW)])
        Y = fold_into_interval(W, a, b)
        slope = fold_slope(W, a, b)

        crossed = slope[1:] != slope[:-1]
        displacement = np.abs(Y[1:] - (Y[:-1] + slope[:-1] * dW))
        dl = np.where(crossed, 2.0 * displacement, 0.0)
        sojourn = ratio * dl

        starts = clock + np.concatenate([[0.0], np.cumsum(dt + sojourn)])
        # boundary time inside [0, horizon]: the sojourn follows the dt of motion
        on_boundary = np.maximum(0.0, np.minimum(starts[1:], cfg.horizon) - (starts[:-1] + dt))
        at_left = Y[1:] - a <= b - Y[1:]
        left += float(np.sum(on_boundary[at_left]))
        right += float(np.sum(on_boundary[~at_left]))

        active = starts[:-1] < cfg.horizon
        local_time += float(np.sum(dl[active]))

        far = np.minimum(Y - a, b - Y) >= h
        previous = np.concatenate([[was_far], far[:-1]])
        entries = np.flatnonzero(far & ~previous & (starts < cfg.horizon))
        contacts = np.flatnonzero(crossed & active)
        escapes.feed(step + entries, starts[entries], step + contacts, starts[contacts] + dt)

        was_far = bool(far[-1])
        w = float(W[-1])
        clock = float(starts[-1])
        step += CHUNK_STEPS

    logger.debug('Oracle replica %d: %d fine steps, %d escapes', replica, step, len(escapes.durations))
    return {
        'left': left / cfg.horizon,
        'right': right / cfg.horizon,
        'local_time': local_time,
        'durations': escapes.durations,
        'steps': step,
    }


def sticky_interval_trajectory(cfg: OracleConfig) -> OracleStats:
    results = [_replica(cfg, r) for r in range(cfg.replicas)]
    fractions = [r['left'] + r['right'] for r in results]
    durations = [d for r in results for d in r['durations']]
    return OracleStats(
        boundary_fraction=float(np.mean(fractions)),
        left_fraction=float(np.mean([r['left'] for r in results])),
        right_fraction=float(np.mean([r['right'] for r in results])),
        mean_escape_time=float(np.mean(durations)) if durations else None,
        escape_count=len(durations),
        local_time=float(np.mean([r['local_time'] for r in results])),
        fine_steps=int(sum(r['steps'] for r in results)),
        replica_fractions=fractions,
    )


def boundary_fraction_analytic(g: DomainGeometry, alpha_const: float, beta_const: float) -> float:
    """Mass ``beta sigma(Gamma) / (alpha lambda(Omega) + beta sigma(Gamma))`` of the boundary under the invariant measure."""
    if not alpha_const > 0 or beta_const < 0:
        raise ConfigError('alpha must be positive and beta non-negative')
    volume, surface = g.measures()
    return beta_const * surface / (alpha_const * volume + beta_const * surface)


def invariant_average_radius2(g: DomainGeometry, alpha_const: float, beta_const: float) -> float:
    """Average of ``|x|^2`` under the invariant measure for constant densities."""
    volume, surface = g.measures()
    if g.is_ball:
        c2 = float(np.sum(np.square(g.center)))
        d, r = g.dimension, g.radius
        interior = (c2 + d / (d + 2) * r ** 2) * volume
        boundary = (c2 + r ** 2) * surface
    else:
        interior = (g.b ** 3 - g.a ** 3) / 3.0
        boundary = g.a ** 2 + g.b ** 2
    return (alpha_const * interior + beta_const * boundary) / (alpha_const * volume + beta_const * surface)
