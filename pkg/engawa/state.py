import logging
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

logger = logging.getLogger('engawa.state')


@dataclass
class ParticleSystemState:
    """Positions of ``N`` particles with their boundary flags.

    ``positions`` has shape ``(..., N, d)`` and ``flags`` shape ``(..., N)``;
    leading axes index independent paths of an ensemble. ``dwell`` is the
    per-particle sticky-layer bookkeeping of the regularized scheme (the
    unspent inward travel of a particle parked on the boundary when
    ``delta=0``, the depth below its foot point when ``delta=1``).
    """
    positions: np.ndarray
    flags: np.ndarray
    time: float = 0.0
    dwell: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.flags = np.asarray(self.flags, dtype=bool)
        if self.flags.shape != self.positions.shape[:-1]:
            raise ValueError(f'Flags of shape {self.flags.shape} do not match positions of shape {self.positions.shape}')
        if self.dwell is None:
            self.dwell = np.zeros(self.flags.shape)

    @property
    def n_particles(self) -> int:
        return self.positions.shape[-2]

    @property
    def dimension(self) -> int:
        return self.positions.shape[-1]


@dataclass
class Trajectory:
    """One sampled path.

    ``times`` are ``stride * dt`` apart except for the last interval, which
    ends at the horizon and may be shorter.

    ``increments`` and ``fine_positions`` / ``fine_flags`` hold every time
    step (not just the sampled ones) and are only kept when the run is
    reweighted.
    """
    times: np.ndarray
    positions: np.ndarray
    flags: np.ndarray
    path_index: int = 0
    dt: Optional[float] = None
    increments: Optional[np.ndarray] = None
    fine_positions: Optional[np.ndarray] = None
    fine_flags: Optional[np.ndarray] = None
    weight: Optional[float] = None
    local_time: Optional[np.ndarray] = None

    @property
    def n_samples(self) -> int:
        return len(self.times)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def state(self, k: int) -> ParticleSystemState:
        return ParticleSystemState(self.positions[k], self.flags[k], float(self.times[k]))


@dataclass
class Ensemble:
    """Stacked trajectories of independent paths sharing one time grid.

    Arrays carry the path index on their first axis.
    """
    times: np.ndarray
    positions: np.ndarray
    flags: np.ndarray
    path_indices: list[int]
    dt: Optional[float] = None
    increments: Optional[np.ndarray] = None
    fine_positions: Optional[np.ndarray] = None
    fine_flags: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    local_time: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.path_indices)

    def __iter__(self) -> Iterator[Trajectory]:
        for k in range(len(self)):
            yield self.trajectory(k)

    def trajectory(self, k: int) -> Trajectory:
        def pick(values):
            return None if values is None else values[k]

        weight = pick(self.weights)
        return Trajectory(
            times=self.times,
            positions=self.positions[k],
            flags=self.flags[k],
            path_index=self.path_indices[k],
            dt=self.dt,
            increments=pick(self.increments),
            fine_positions=pick(self.fine_positions),
            fine_flags=pick(self.fine_flags),
            weight=None if weight is None else float(weight),
            local_time=pick(self.local_time),
        )

    @classmethod
    def from_trajectories(cls, trajectories: list[Trajectory]) -> 'Ensemble':
        if not trajectories:
            raise ValueError('Cannot stack an empty collection of trajectories')

        def stack(name):
            values = [getattr(t, name) for t in trajectories]
            if any(v is None for v in values):
                return None
            return np.stack([np.asarray(v) for v in values])

        return cls(
            times=trajectories[0].times,
            positions=stack('positions'),
            flags=stack('flags'),
            path_indices=[t.path_index for t in trajectories],
            dt=trajectories[0].dt,
            increments=stack('increments'),
            fine_positions=stack('fine_positions'),
            fine_flags=stack('fine_flags'),
            weights=stack('weight'),
            local_time=stack('local_time'),
        )
