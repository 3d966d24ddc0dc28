"""Time stepping for the interacting sticky diffusion.

Two engines are available:

* :func:`step_regularized` / :func:`simulate` replace the boundary indicator
  by a sticky layer of width ``epsilon``. Particles in the layer follow the
  boundary dynamics (inward escape drift, plus tangential Brownian motion on
  the boundary when ``delta=1``), everybody else takes an Euler-Maruyama
  step. A step that leaves the domain is projected back onto the boundary and
  the overshoot is kept as dwell the escape drift has to work off first.
  With ``delta=1`` a particle entering the layer is put on the boundary.
* :func:`time_change_reflected` builds the single particle process from a
  reflected Euler walk ``Y`` and the inverse of the clock
  ``A_t = t + int beta / alpha dl``.

All engines advance every path of an ensemble at once; arrays carry the path
index on their first axis.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from engawa import validation
from engawa._utils import mean_and_stderr
from engawa.core import ConfigError, NotApplicable, NumericError
from engawa.densities import DensitySuite, without_interaction
from engawa.geometry import DomainGeometry
from engawa.noise import BLOCK_SIZE, IncrementStream, layout_rng
from engawa.state import Ensemble, ParticleSystemState, Trajectory

logger = logging.getLogger('engawa.simulator')


class SimulationError(NumericError):
    def __init__(self, message: str, time: Optional[float] = None):
        self.failing_time = time
        if time is not None:
            message = f'{message} (t={time:.6g})'
        super().__init__(message)


class NonFinite(SimulationError):
    pass


class MissingIncrements(SimulationError):
    pass


class Scheme(Enum):
    REGULARIZED_EULER = 'regularized_euler'
    TIME_CHANGE = 'time_change'


class Girsanov(Enum):
    OFF = 'off'
    REWEIGHT = 'reweight'


class Layout(Enum):
    GRID = 'grid'
    UNIFORM_INTERIOR = 'uniform-interior'


@dataclass(frozen=True)
class SimConfig:
    geometry: DomainGeometry
    densities: DensitySuite
    horizon: float
    dt: float = 1e-3
    epsilon: float = 1e-2
    scheme: Scheme = Scheme.REGULARIZED_EULER
    seed: int = 0
    stride: int = 10
    girsanov: Girsanov = Girsanov.OFF
    paths: int = 1
    layout: Layout = Layout.GRID
    start: Optional[tuple] = None
    freeze_escape_drift: bool = False
    debug: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f'dt must be positive, got {self.dt}')
        if self.horizon < 0:
            raise ConfigError(f'The horizon must not be negative, got {self.horizon}')
        if self.horizon > 0 and self.dt > self.horizon:
            raise ConfigError(f'dt={self.dt} exceeds the horizon T={self.horizon}')
        if self.stride < 1 or self.paths < 1:
            raise ConfigError('stride and paths must be positive integers')
        if self.seed < 0:
            raise ConfigError('The seed must be a non-negative integer')
        if self.densities.delta == 1 and not self.geometry.is_ball:
            raise ConfigError('Tangential diffusion (delta=1) needs a ball in dimension d >= 2')
        if self.scheme == Scheme.REGULARIZED_EULER:
            limit = self.geometry.radius if self.geometry.is_ball else 0.5 * (self.geometry.b - self.geometry.a)
            if not 0 < self.epsilon < limit:
                raise ConfigError(f'epsilon must lie in (0, {limit}), got {self.epsilon}')

    @property
    def n_particles(self) -> int:
        return self.densities.n_particles

    @property
    def delta(self) -> int:
        return self.densities.delta

    @property
    def dynamics_suite(self) -> DensitySuite:
        """The densities that drive the paths, ``phi = 1`` when the interaction is put into the weights."""
        if self.girsanov == Girsanov.REWEIGHT:
            return without_interaction(self.densities)
        return self.densities

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.horizon / self.dt - 1e-9))

    def sample_steps(self) -> np.ndarray:
        """Indices of the stored time steps: every ``stride``-th step plus the last one.

        When ``stride`` does not divide the step count the final interval is
        shorter, so the last sample always sits at the horizon.
        """
        return np.unique(np.append(np.arange(0, self.n_steps, self.stride), self.n_steps))


def grid_layout(g: DomainGeometry, n_particles: int) -> np.ndarray:
    """Deterministic, well separated start positions."""
    if not g.is_ball:
        return (g.a + (g.b - g.a) * np.arange(1, n_particles + 1) / (n_particles + 1))[:, None]
    positions = np.tile(np.asarray(g.center), (n_particles, 1))
    if n_particles > 1:
        angles = 2.0 * np.pi * np.arange(n_particles) / n_particles
        positions[:, 0] += 0.5 * g.radius * np.cos(angles)
        positions[:, 1] += 0.5 * g.radius * np.sin(angles)
    return positions


def initial_positions(cfg: SimConfig, paths: Sequence[int]) -> np.ndarray:
    g, n = cfg.geometry, cfg.n_particles
    if cfg.start is not None:
        start = np.asarray(cfg.start, dtype=float).reshape(n, g.dimension)
        positions = np.broadcast_to(start, (len(paths), n, g.dimension)).copy()
    elif cfg.layout == Layout.GRID:
        positions = np.broadcast_to(grid_layout(g, n), (len(paths), n, g.dimension)).copy()
    else:
        positions = np.stack([g.uniform_interior(layout_rng(cfg.seed, p), n) for p in paths])

    if np.any(g.signed_distance(positions) > g.tol):
        raise ConfigError('The start configuration has particles outside the domain')
    return positions


def initial_state(cfg: SimConfig, paths: Sequence[int]) -> ParticleSystemState:
    positions = initial_positions(cfg, paths)
    sd = cfg.geometry.signed_distance(positions)
    if cfg.scheme == Scheme.REGULARIZED_EULER:
        flags = -sd <= cfg.epsilon
    else:
        flags = np.abs(sd) <= cfg.geometry.tol
    return ParticleSystemState(positions, flags, 0.0)


def step_regularized(state: ParticleSystemState, cfg: SimConfig, normals: np.ndarray, suite: Optional[DensitySuite] = None) -> ParticleSystemState:
    """Advance every path of ``state`` by one step of size ``cfg.dt``.

    ``normals`` are the standard normal draws of this step, one ``d``-vector
    per particle and path (same shape as ``state.positions``).
    """
    if cfg.scheme != Scheme.REGULARIZED_EULER:
        raise NotApplicable(f'step_regularized cannot advance the {cfg.scheme.value} scheme')

    g = cfg.geometry
    s = cfg.dynamics_suite if suite is None else suite
    dt = cfg.dt
    root_dt = math.sqrt(dt)
    n, d = state.n_particles, state.dimension
    batch = state.positions.shape[:-2]

    x = state.positions.reshape(-1, n, d)
    layer = state.flags.reshape(-1, n)
    dwell = state.dwell.reshape(-1, n)
    xi = np.asarray(normals, dtype=float).reshape(-1, n, d)

    new_x = x.copy()
    new_dwell = np.zeros_like(dwell)
    phi_grads = s.phi_log_grads(x)

    for i in range(n):
        inside = ~layer[:, i]
        if np.any(inside):
            xi_i = x[inside, i]
            drift = 0.5 * (s.alpha_log_grad(i, xi_i) + phi_grads[inside, i])
            moved = xi_i + root_dt * xi[inside, i] + drift * dt
            overshoot = g.signed_distance(moved)
            out = overshoot > 0
            if np.any(out):
                moved[out] = g.closest_boundary_point(moved[out])
                new_dwell[np.flatnonzero(inside)[out], i] = overshoot[out]
            new_x[inside, i] = moved

        if np.any(layer[:, i]):
            xl = x[layer[:, i], i]
            foot = g.closest_boundary_point(xl)
            # negative depth is unspent dwell of a particle parked on the boundary
            depth = -g.signed_distance(xl) - dwell[layer[:, i], i]
            if not cfg.freeze_escape_drift:
                depth = depth + 0.5 * s.stickiness_ratio(i, foot) * dt
            if s.delta == 1:
                P = g.projection_field(foot)
                tangential = 0.5 * (s.beta_log_surface_grad(i, foot, g) + np.einsum('...ab,...b->...a', P, phi_grads[layer[:, i], i]))
                noise = root_dt * np.einsum('...ab,...b->...a', P, xi[layer[:, i], i])
                foot = g.closest_boundary_point(foot + noise + (g.ito_correction(foot) + tangential) * dt)
            normal = g.outward_normal(foot)
            new_x[layer[:, i], i] = foot - np.maximum(depth, 0.0)[:, None] * normal
            new_dwell[layer[:, i], i] = np.maximum(-depth, 0.0)

    time = state.time + dt
    if not np.all(np.isfinite(new_x)):
        raise NonFinite('Non-finite position after an Euler step', state.time)

    new_flags = (-g.signed_distance(new_x) <= cfg.epsilon) | (new_dwell > 0)
    if s.delta == 1:
        # layer entry puts the particle on the boundary, depth only comes from the escape drift
        entering = new_flags & ~layer
        if np.any(entering):
            new_x[entering] = g.closest_boundary_point(new_x[entering])
    return ParticleSystemState(new_x.reshape(batch + (n, d)), new_flags.reshape(batch + (n,)), time, new_dwell.reshape(batch + (n,)))


def girsanov_integrand(s: DensitySuite, x, flags, g: Optional[DomainGeometry] = None) -> np.ndarray:
    """The drift ``1/2 A grad ln phi`` that the interaction adds, per particle.

    Interior particles see the full gradient. Boundary particles see nothing
    when ``delta=0`` and the tangential part when ``delta=1``.
    """
    x = np.asarray(x, dtype=float)
    flags = np.asarray(flags, dtype=bool)
    u = 0.5 * s.phi_log_grads(x)
    if not np.any(flags):
        return u
    if s.delta == 0:
        return np.where(flags[..., None], 0.0, u)
    if g is None:
        raise NotApplicable('The tangential interaction drift needs the domain geometry')
    foot = g.closest_boundary_point(x[flags])
    u[flags] = np.einsum('...ab,...b->...a', g.projection_field(foot), u[flags])
    return u


def exponential_weight(integrands, increments, dt: float) -> float:
    """``exp(sum v . dB - 1/2 sum |v|^2 dt)`` for left-point integrands ``v``."""
    v = np.asarray(integrands, dtype=float)
    dB = np.asarray(increments, dtype=float)
    return float(np.exp(np.sum(v * dB) - 0.5 * np.sum(v * v) * dt))


def girsanov_weight(traj: Trajectory, s: DensitySuite, g: Optional[DomainGeometry] = None) -> float:
    """Recompute ``Z_T`` of a reweighted trajectory from its stored increments."""
    if traj.increments is None or traj.fine_positions is None or traj.dt is None:
        raise MissingIncrements('The trajectory was recorded without Brownian increments', traj.horizon)
    u = girsanov_integrand(s, traj.fine_positions[:-1], traj.fine_flags[:-1], g)
    return exponential_weight(u, traj.increments, traj.dt)


def reweighted_mean(values, weights) -> tuple[float, float]:
    """Plain (not self-normalised) Monte Carlo mean of ``Z h`` with its standard error."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    return mean_and_stderr(values * weights)


def occupation_fractions(traj: Union[Trajectory, Ensemble]) -> np.ndarray:
    """Fraction of stored states each particle spends flagged."""
    flags = np.asarray(traj.flags)
    return flags.reshape(-1, flags.shape[-1]).mean(axis=0)


def _paths(cfg: SimConfig, paths: Optional[Sequence[int]]) -> list[int]:
    return list(range(cfg.paths)) if paths is None else list(paths)


def simulate_ensemble(cfg: SimConfig, paths: Optional[Sequence[int]] = None) -> Ensemble:
    if cfg.scheme == Scheme.TIME_CHANGE:
        return time_change_ensemble(cfg, paths)

    g = cfg.geometry
    paths = _paths(cfg, paths)
    state = initial_state(cfg, paths)
    n, d = state.n_particles, state.dimension
    n_steps = cfg.n_steps
    sample_steps = cfg.sample_steps()
    dynamics = cfg.dynamics_suite
    reweight = cfg.girsanov == Girsanov.REWEIGHT
    root_dt = math.sqrt(cfg.dt)

    positions = np.empty((len(paths), len(sample_steps), n, d))
    flags = np.empty((len(paths), len(sample_steps), n), dtype=bool)
    positions[:, 0] = state.positions
    flags[:, 0] = state.flags

    increments = fine_positions = fine_flags = log_weights = None
    if reweight:
        increments = np.empty((len(paths), n_steps, n, d))
        fine_positions = np.empty((len(paths), n_steps + 1, n, d))
        fine_flags = np.empty((len(paths), n_steps + 1, n), dtype=bool)
        fine_positions[:, 0] = state.positions
        fine_flags[:, 0] = state.flags
        log_weights = np.zeros(len(paths))

    logger.debug('Simulating %d paths of %d particles over %d steps', len(paths), n, n_steps)
    noise = IncrementStream(cfg.seed, paths, (n, d))
    sample = 1
    for k in range(n_steps):
        xi = noise.normals(k)
        try:
            if reweight:
                u = girsanov_integrand(cfg.densities, state.positions, state.flags, g)
                dB = root_dt * xi
                log_weights += np.sum(u * dB, axis=(-2, -1)) - 0.5 * np.sum(u * u, axis=(-2, -1)) * cfg.dt
                increments[:, k] = dB
            state = step_regularized(state, cfg, xi, dynamics)
        except NumericError as exc:
            exc.failing_time = k * cfg.dt
            logger.error('Simulation aborted at t=%.6g: %s', k * cfg.dt, exc)
            raise

        if cfg.debug:
            validation.check_state(g, state.positions, state.flags, layer_width=cfg.epsilon, time=state.time)
            validation.check_diffusion_matrix(dynamics.assemble_diffusion(g, state.positions, state.flags), time=state.time)
        if reweight:
            fine_positions[:, k + 1] = state.positions
            fine_flags[:, k + 1] = state.flags
        if sample < len(sample_steps) and k + 1 == sample_steps[sample]:
            positions[:, sample] = state.positions
            flags[:, sample] = state.flags
            sample += 1
        if (k + 1) % (BLOCK_SIZE * 16) == 0:
            logger.debug('Reached t=%.6g', state.time)

    return Ensemble(
        times=sample_steps * cfg.dt,
        positions=positions,
        flags=flags,
        path_indices=paths,
        dt=cfg.dt,
        increments=increments,
        fine_positions=fine_positions,
        fine_flags=fine_flags,
        weights=None if log_weights is None else np.exp(log_weights),
    )


def simulate(cfg: SimConfig, path: int = 0) -> Trajectory:
    return simulate_ensemble(cfg, [path]).trajectory(0)


def _reflected_step(g: DomainGeometry, s: DensitySuite, y: np.ndarray, xi: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Euler step of ``dY = dB + 1/2 grad ln alpha dt + 1/2 dL`` with projection onto the boundary.

    Returns the new positions and the local time increments. The projection
    realises ``1/2 dL``, so ``dl`` is twice the overshoot.
    """
    moved = y + math.sqrt(dt) * xi + 0.5 * s.alpha_log_grad(0, y) * dt
    overshoot = np.maximum(g.signed_distance(moved), 0.0)
    out = overshoot > 0
    if np.any(out):
        moved[out] = g.closest_boundary_point(moved[out])
    return moved, 2.0 * overshoot


def _segments(clock: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Index of the clock segment ``[clock[s], clock[s + 1]]`` each reading falls in; tied nodes resolve to the earliest."""
    return np.maximum(np.searchsorted(clock, queries, side='left') - 1, 0)


def _invert_clock(clock: np.ndarray, values: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Piecewise linear interpolation of ``values`` at clock readings; a reading on tied nodes picks the earliest."""
    m = np.searchsorted(clock, queries, side='left')
    lo = np.maximum(m - 1, 0)
    hi = np.minimum(m, len(clock) - 1)
    span = clock[hi] - clock[lo]
    w = np.where(span > 0, (queries - clock[lo]) / np.where(span > 0, span, 1.0), 1.0)
    w = w.reshape(w.shape + (1,) * (values.ndim - 1))
    return values[lo] + w * (values[hi] - values[lo])


def time_change_ensemble(cfg: SimConfig, paths: Optional[Sequence[int]] = None) -> Ensemble:
    s, g = cfg.densities, cfg.geometry
    if s.n_particles != 1:
        raise NotApplicable('The time change construction only covers a single particle')
    if s.delta != 0:
        raise NotApplicable('The time change construction has no tangential boundary diffusion (delta must be 0)')

    paths = _paths(cfg, paths)
    n_paths, d = len(paths), g.dimension
    dt = cfg.dt
    out_times = cfg.sample_steps() * dt

    y = initial_positions(cfg, paths)[:, 0, :]
    clock = np.zeros(n_paths)
    local_time = np.zeros(n_paths)

    out_positions = np.empty((n_paths, len(out_times), d))
    out_local_time = np.empty((n_paths, len(out_times)))
    out_positions[:, 0] = y
    out_local_time[:, 0] = 0.0
    out_flags = np.zeros((n_paths, len(out_times)), dtype=bool)
    out_flags[:, 0] = g.on_boundary(y)
    filled = np.ones(n_paths, dtype=int)

    noise = IncrementStream(cfg.seed, paths, (1, d))
    step = 0
    while np.any(filled < len(out_times)):
        xi = noise.normals_range(step, step + BLOCK_SIZE)[:, :, 0, :]
        ys = np.empty((n_paths, BLOCK_SIZE + 1, d))
        dls = np.empty((n_paths, BLOCK_SIZE))
        ys[:, 0] = y
        for c in range(BLOCK_SIZE):
            ys[:, c + 1], dls[:, c] = _reflected_step(g, s, ys[:, c], xi[:, c], dt)

        ratio = s.beta[0].value(ys[:, 1:]) / s.alpha[0].value(ys[:, 1:])
        # each step contributes dt of motion followed by (beta / alpha) dl of sojourn
        ticks = np.empty((n_paths, 2 * BLOCK_SIZE))
        ticks[:, 0::2] = dt
        ticks[:, 1::2] = ratio * dls
        nodes = np.concatenate([clock[:, None], clock[:, None] + np.cumsum(ticks, axis=1)], axis=1)

        node_positions = np.empty((n_paths, 2 * BLOCK_SIZE + 1, d))
        node_positions[:, 0::2] = ys
        node_positions[:, 1::2] = ys[:, 1:]
        cumulative = local_time[:, None] + np.concatenate([np.zeros((n_paths, 1)), np.cumsum(dls, axis=1)], axis=1)
        node_local_time = np.empty((n_paths, 2 * BLOCK_SIZE + 1))
        node_local_time[:, 0::2] = cumulative
        node_local_time[:, 1::2] = cumulative[:, 1:]

        for p in range(n_paths):
            reached = int(np.searchsorted(out_times, nodes[p, -1], side='right'))
            if reached > filled[p]:
                queries = out_times[filled[p]:reached]
                out_positions[p, filled[p]:reached] = _invert_clock(nodes[p], node_positions[p], queries)
                out_local_time[p, filled[p]:reached] = _invert_clock(nodes[p], node_local_time[p], queries)
                # odd segments are the sojourns on the boundary
                segment = _segments(nodes[p], queries)
                out_flags[p, filled[p]:reached] = (segment % 2 == 1) & (nodes[p, segment + 1] > nodes[p, segment])
                filled[p] = reached

        y = ys[:, -1]
        clock = nodes[:, -1]
        local_time = cumulative[:, -1]
        step += BLOCK_SIZE
        logger.debug('Time change: %d fine steps, slowest clock at %.6g', step, float(np.min(clock)))

        if not np.all(np.isfinite(clock)):
            raise NonFinite('Non-finite additive functional', float(step * dt))

    positions = out_positions[:, :, None, :]
    flags = out_flags[:, :, None]
    if cfg.debug:
        validation.check_state(g, positions, flags, sojourn=True)

    return Ensemble(
        times=out_times,
        positions=positions,
        flags=flags,
        path_indices=paths,
        dt=dt,
        local_time=out_local_time,
        metadata={'fine_steps': step},
    )


def time_change_reflected(cfg: SimConfig, path: int = 0) -> Trajectory:
    return time_change_ensemble(cfg, [path]).trajectory(0)
