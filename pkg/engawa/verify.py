"""The acceptance suite behind ``engawa verify``.

Each criterion is a function of a :class:`Budget` and a seed that returns
whether it passed, a one line message and a dictionary of the numbers it
looked at. :class:`Verifier` runs them and collects a :class:`VerifyReport`.
"""
import filecmp
import logging
import os
import tempfile
import time
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Iterable, Optional

import numpy as np
from pydantic import BaseModel, Field, computed_field, field_validator
from scipy.stats import chisquare

from engawa._utils import mean_and_stderr
from engawa.config import RunConfig
from engawa.core import EngawaError
from engawa.densities import BelowCutoff, preset
from engawa.generator import martingale_residual, observable, pairdist2
from engawa.geometry import DomainGeometry
from engawa.noise import layout_rng
from engawa.oracle1d import OracleConfig, boundary_fraction_analytic, sticky_interval_trajectory
from engawa.output import serialize_json
from engawa.runner import run
from engawa.simulator import Girsanov, Scheme, SimConfig, occupation_fractions, reweighted_mean, simulate_ensemble

logger = logging.getLogger('engawa.verify')


@dataclass(frozen=True)
class Budget:
    """Run sizes and tolerances of the statistical criteria."""
    oracle_horizon: float = 500.0
    oracle_tolerance: float = 0.03
    ball_horizon: float = 200.0
    ball_paths: int = 20
    ball_tolerance: float = 0.05
    scheme_horizon: float = 500.0
    scheme_paths: int = 8
    scheme_sigmas: float = 2.0
    scheme_final_gap: float = 0.05
    oracle_agreement: float = 0.02
    martingale_paths: int = 10_000
    girsanov_paths: int = 2000
    circle_horizon: float = 200.0
    circle_paths: int = 8
    lj_horizon: float = 50.0
    lj_paths: int = 10


FULL = Budget()
FAST = Budget(
    oracle_horizon=100.0,
    oracle_tolerance=0.06,
    ball_horizon=20.0,
    ball_tolerance=0.1,
    scheme_horizon=40.0,
    scheme_paths=4,
    scheme_final_gap=0.08,
    oracle_agreement=0.1,
    martingale_paths=2000,
    girsanov_paths=500,
    circle_horizon=40.0,
    lj_horizon=5.0,
)

CriterionOutput = tuple[bool, str, dict]


class Outcome(Enum):
    PASS = 'pass'
    FAIL = 'fail'
    ERROR = 'error'


class CriterionResult(BaseModel):
    number: int
    name: str
    outcome: Outcome
    message: str
    details: dict[str, Any] = Field(default_factory=dict)
    elapsed: float = Field(default=0.0, description='Wall time in seconds')

    @field_validator('details', mode='before')
    @classmethod
    def plain_values(cls, value: Any) -> Any:
        return serialize_json(value)


class Summary(BaseModel):
    passed: int = Field(default=0)
    failed: int = Field(default=0)
    errors: int = Field(default=0)


class VerifyReport(BaseModel):
    fast: bool
    seed: int
    detail: list[CriterionResult]

    @computed_field
    @property
    def summary(self) -> Summary:
        counts = {outcome: 0 for outcome in Outcome}
        for result in self.detail:
            counts[result.outcome] += 1
        return Summary(passed=counts[Outcome.PASS], failed=counts[Outcome.FAIL], errors=counts[Outcome.ERROR])

    @property
    def ok(self) -> bool:
        return all(result.outcome == Outcome.PASS for result in self.detail)


def _unit_sphere_points(seed: int, count: int, dimension: int) -> np.ndarray:
    v = layout_rng(seed, dimension).standard_normal((count, dimension))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def geometry_identities(budget: Budget, seed: int) -> CriterionOutput:
    errors = {}
    for d in (2, 3):
        g = DomainGeometry.ball([0.0] * d, 1.0)
        x = _unit_sphere_points(seed, 1000, d)
        P = g.projection_matrix(x)
        n = g.outward_normal(x)
        errors[f'd{d}'] = {
            'symmetry': float(np.max(np.abs(P - np.swapaxes(P, -1, -2)))),
            'idempotence': float(np.max(np.abs(P @ P - P))),
            'normal': float(np.max(np.abs(np.einsum('...ab,...b->...a', P, n)))),
            'trace': float(np.max(np.abs(np.trace(P, axis1=-2, axis2=-1) - (d - 1)))),
        }
    worst = max(v for e in errors.values() for v in e.values())
    return worst <= 1e-12, f'largest deviation {worst:.2e}', errors


def curvature_identity(budget: Budget, seed: int) -> CriterionOutput:
    details = {}
    for d in (2, 3):
        g = DomainGeometry.ball([0.0] * d, 1.0)
        x = _unit_sphere_points(seed, 100, d)
        expected = -g.mean_curvature(x)[:, None] * g.outward_normal(x)
        details[f'd{d}'] = float(np.max(np.abs(g.curvature_drift_fd(x) - expected)))
    worst = max(details.values())
    return worst <= 1e-3, f'largest componentwise error {worst:.2e}', details


def invariant_occupation(budget: Budget, seed: int) -> CriterionOutput:
    oracle = sticky_interval_trajectory(OracleConfig(horizon=budget.oracle_horizon, dt=1e-4, seed=seed))
    interval_expected = boundary_fraction_analytic(DomainGeometry.interval(0.0, 1.0), 1.0, 1.0)
    oracle_error = abs(oracle.boundary_fraction - interval_expected)

    g = DomainGeometry.ball([0.0, 0.0], 1.0)
    sim = SimConfig(g, preset('uniform', 1), horizon=budget.ball_horizon, dt=1e-3, epsilon=1e-2, seed=seed, paths=budget.ball_paths)
    fraction = float(occupation_fractions(simulate_ensemble(sim))[0])
    ball_expected = boundary_fraction_analytic(g, 1.0, 1.0)
    ball_error = abs(fraction - ball_expected)

    passed = oracle_error <= budget.oracle_tolerance and ball_error <= budget.ball_tolerance
    message = f'oracle {oracle.boundary_fraction:.4f}, disk {fraction:.4f} (expected {interval_expected:.4f})'
    return passed, message, {
        'oracle': oracle.to_dict(),
        'oracle_expected': interval_expected,
        'disk_fraction': fraction,
        'disk_expected': ball_expected,
    }


def gaps_shrink(gaps: list[float], stderrs: list[float], sigmas: float) -> tuple[bool, list[float]]:
    """Whether each gap is at most the previous one plus ``sigmas`` combined standard errors.

    Returns the verdict and the allowed increase between neighbours.
    """
    allowed = [sigmas * float(np.hypot(e0, e1)) for e0, e1 in zip(stderrs, stderrs[1:])]
    return all(later <= earlier + slack for earlier, later, slack in zip(gaps, gaps[1:], allowed)), allowed


def _path_fractions(ensemble) -> np.ndarray:
    """Boundary occupation of the first particle, one value per path."""
    return ensemble.flags[..., 0].mean(axis=1)


def scheme_cross_validation(budget: Budget, seed: int) -> CriterionOutput:
    g = DomainGeometry.interval(0.0, 1.0)
    suite = preset('uniform', 1)
    horizon, paths = budget.scheme_horizon, budget.scheme_paths
    reference = SimConfig(g, suite, horizon=horizon, dt=1e-4, scheme=Scheme.TIME_CHANGE, seed=seed, paths=paths)
    target, target_err = mean_and_stderr(_path_fractions(simulate_ensemble(reference)))

    oracle = sticky_interval_trajectory(OracleConfig(horizon=horizon, dt=1e-4, seed=seed, replicas=paths))
    oracle_gap = abs(oracle.boundary_fraction - target)

    gaps, gap_errs, fractions = [], [], {}
    for epsilon in (0.04, 0.02, 0.01):
        sim = SimConfig(g, suite, horizon=horizon, dt=1e-3, epsilon=epsilon, seed=seed, paths=paths)
        fraction, err = mean_and_stderr(_path_fractions(simulate_ensemble(sim)))
        fractions[str(epsilon)] = {'mean': fraction, 'stderr': err}
        gaps.append(abs(fraction - target))
        gap_errs.append(float(np.hypot(err, target_err)))

    monotone, allowed = gaps_shrink(gaps, gap_errs, budget.scheme_sigmas)
    passed = monotone and gaps[-1] <= budget.scheme_final_gap and oracle_gap <= budget.oracle_agreement
    message = f'gaps {", ".join(f"{gap:.4f}" for gap in gaps)}, oracle gap {oracle_gap:.4f}'
    return passed, message, {
        'time_change': {'mean': target, 'stderr': target_err},
        'regularized': fractions,
        'gaps': gaps,
        'gap_stderrs': gap_errs,
        'allowed_increase': allowed,
        'monotone': monotone,
        'oracle': oracle.boundary_fraction,
        'oracle_gap': oracle_gap,
    }


def martingale_property(budget: Budget, seed: int) -> CriterionOutput:
    g = DomainGeometry.ball([0.0, 0.0], 1.0)
    suite = preset('uniform', 1)
    sim = SimConfig(g, suite, horizon=0.5, dt=1e-3, seed=seed, stride=5, paths=budget.martingale_paths)
    ensemble = simulate_ensemble(sim)

    details = {}
    passed = True
    for name in ('coord:1:1', 'radius2:1'):
        estimate, stderr = martingale_residual(ensemble, observable(name, 1, 2), suite, g, 0.5)
        details[name] = {'estimate': estimate, 'stderr': stderr}
        passed = passed and abs(estimate) <= 3.0 * stderr
    message = ', '.join(f'{name}: {v["estimate"]:.2e} +- {v["stderr"]:.1e}' for name, v in details.items())
    return passed, message, details


def girsanov_equivalence(budget: Budget, seed: int) -> CriterionOutput:
    g = DomainGeometry.ball([0.0, 0.0], 1.0)
    suite = preset('soft', 2)
    start = ((0.1, 0.0), (-0.1, 0.0))
    f = pairdist2(0, 1, 2, 2)

    common = dict(horizon=0.5, dt=1e-3, seed=seed, paths=budget.girsanov_paths, start=start)
    direct = simulate_ensemble(SimConfig(g, suite, **common))
    weighted = simulate_ensemble(SimConfig(g, suite, girsanov=Girsanov.REWEIGHT, **common))

    direct_mean, direct_err = mean_and_stderr(f.value(direct.positions[:, -1]))
    weighted_mean, weighted_err = reweighted_mean(f.value(weighted.positions[:, -1]), weighted.weights)
    z_mean, z_err = reweighted_mean(np.ones(len(weighted)), weighted.weights)

    combined = float(np.hypot(direct_err, weighted_err))
    passed = abs(direct_mean - weighted_mean) <= 3.0 * combined and abs(z_mean - 1.0) <= 3.0 * z_err
    message = f'direct {direct_mean:.4f}, reweighted {weighted_mean:.4f}, mean weight {z_mean:.4f}'
    return passed, message, {
        'direct': {'mean': direct_mean, 'stderr': direct_err},
        'reweighted': {'mean': weighted_mean, 'stderr': weighted_err},
        'weight': {'mean': z_mean, 'stderr': z_err},
    }


def boundary_diffusion(budget: Budget, seed: int) -> CriterionOutput:
    g = DomainGeometry.ball([0.0, 0.0], 1.0)
    dt, stride = 2e-3, 50
    sim = SimConfig(g, preset('uniform', 1, delta=1), horizon=budget.circle_horizon, dt=dt, seed=seed, stride=stride,
                    paths=budget.circle_paths, start=((1.0, 0.0),), freeze_escape_drift=True)
    ensemble = simulate_ensemble(sim)
    distance = float(np.max(np.abs(g.signed_distance(ensemble.positions))))

    # samples five time units apart, the start excluded
    thin = int(round(5.0 / (dt * stride)))
    points = ensemble.positions[:, thin::thin, 0, :].reshape(-1, 2)
    counts, _ = np.histogram(np.arctan2(points[:, 1], points[:, 0]), bins=np.linspace(-np.pi, np.pi, 5))
    p_value = float(chisquare(counts).pvalue)

    passed = distance <= 1e-9 and p_value > 0.01
    return passed, f'max distance to the circle {distance:.1e}, uniformity p={p_value:.3f}', {
        'steps': sim.n_steps,
        'max_distance': distance,
        'angle_counts': counts,
        'p_value': p_value,
    }


def lj_repulsion(budget: Budget, seed: int) -> CriterionOutput:
    g = DomainGeometry.ball([0.0, 0.0], 1.0)
    suite = preset('lj', 3, lj_epsilon=0.1, lj_c=0.1, r_min=0.005)
    sim = SimConfig(g, suite, horizon=budget.lj_horizon, dt=1e-4, seed=seed, paths=budget.lj_paths)
    try:
        ensemble = simulate_ensemble(sim)
    except BelowCutoff as e:
        return False, str(e), {'pair': e.pair, 'distance': e.distance, 'r_min': e.r_min}

    x = ensemble.positions
    separation = np.linalg.norm(x[..., :, None, :] - x[..., None, :, :], axis=-1)
    upper = np.triu_indices(3, k=1)
    closest = float(np.min(separation[..., upper[0], upper[1]]))
    return closest > 0.02, f'closest approach {closest:.4f}', {'min_distance': closest}


def determinism(budget: Budget, seed: int) -> CriterionOutput:
    cfg = RunConfig(geometry='ball', n_particles=2, density='soft', horizon=1.0, seed=seed, paths=2)
    with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
        files = [os.path.basename(path) for path in run(cfg, first).files if path.endswith('.csv')]
        run(cfg, second)
        different = [name for name in files if not filecmp.cmp(os.path.join(first, name), os.path.join(second, name), shallow=False)]
    return not different, 'identical outputs' if not different else f'differing files: {", ".join(different)}', {'compared': files, 'different': different}


CRITERIA: list[tuple[int, str, Callable[[Budget, int], CriterionOutput]]] = [
    (1, 'geometry identities', geometry_identities),
    (2, 'curvature identity', curvature_identity),
    (3, 'invariant-measure occupation', invariant_occupation),
    (4, 'scheme cross-validation', scheme_cross_validation),
    (5, 'martingale residual', martingale_property),
    (6, 'Girsanov equivalence', girsanov_equivalence),
    (7, 'boundary diffusion', boundary_diffusion),
    (8, 'Lennard-Jones repulsion', lj_repulsion),
    (9, 'determinism', determinism),
]


class Verifier:
    def __init__(self, budget: Budget = FULL, seed: int = 0):
        self.budget = budget
        self.seed = seed
        self.results: list[CriterionResult] = []

    def add_result(self, result: CriterionResult) -> 'Verifier':
        self.results.append(result)
        return self

    def check(self, number: int, name: str, criterion: Callable[[Budget, int], CriterionOutput]) -> 'Verifier':
        started = time.perf_counter()
        try:
            passed, message, details = criterion(self.budget, self.seed)
            outcome = Outcome.PASS if passed else Outcome.FAIL
        except EngawaError as e:
            logger.exception('Criterion %d (%s) raised', number, name)
            outcome, message, details = Outcome.ERROR, f'{type(e).__name__}: {e}', {}

        elapsed = time.perf_counter() - started
        logger.info('Criterion %d (%s): %s in %.1fs', number, name, outcome.value, elapsed)
        return self.add_result(CriterionResult(number=number, name=name, outcome=outcome, message=message, details=details, elapsed=elapsed))

    def get_report(self) -> VerifyReport:
        return VerifyReport(fast=self.budget != FULL, seed=self.seed, detail=self.results)


def run_acceptance(fast: bool = False, seed: int = 0, only: Optional[Iterable[int]] = None) -> VerifyReport:
    """Run the acceptance criteria (all of them unless ``only`` names some)."""
    selected = None if only is None else set(only)
    verifier = Verifier(FAST if fast else FULL, seed)
    for number, name, criterion in CRITERIA:
        if selected is None or number in selected:
            verifier.check(number, name, criterion)
    return verifier.get_report()
