import logging
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from engawa import __version__
from engawa._utils import mean_and_stderr
from engawa.config import RunConfig, resolve_output_dir, to_sim_config
from engawa.generator import martingale_residual, observable
from engawa.output import boundary_histogram, ensure_dir, write_histogram_csv, write_json, write_trajectory_csv
from engawa.simulator import Girsanov, SimConfig, occupation_fractions, reweighted_mean, simulate_ensemble
from engawa.state import Ensemble

logger = logging.getLogger('engawa.runner')


@dataclass
class RunResult:
    output_dir: str
    files: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def _observable_table(cfg: RunConfig, sim: SimConfig, ensemble: Ensemble) -> tuple[dict, list[dict]]:
    n, d = sim.n_particles, sim.geometry.dimension
    t = cfg.horizon if cfg.martingale_horizon is None else cfg.martingale_horizon
    reweight = sim.girsanov == Girsanov.REWEIGHT

    means = {}
    residuals = []
    for name in cfg.observables:
        f = observable(name, n, d)
        values = f.value(ensemble.positions)
        final, final_err = mean_and_stderr(values[:, -1])
        entry = {
            'final_mean': final,
            'final_stderr': final_err,
            'time_average': float(np.mean(values)),
        }
        if reweight:
            entry['reweighted_final_mean'], entry['reweighted_final_stderr'] = reweighted_mean(values[:, -1], ensemble.weights)
        means[name] = entry

        # reweighted paths follow the dynamics without interaction
        estimate, stderr = martingale_residual(ensemble, f, sim.dynamics_suite, sim.geometry, t)
        residuals.append({'observable': name, 't': t, 'estimate': estimate, 'stderr': stderr})
    return means, residuals


def _girsanov_diagnostics(sim: SimConfig, ensemble: Ensemble) -> dict:
    if sim.girsanov != Girsanov.REWEIGHT:
        return {'enabled': False}
    weights = np.asarray(ensemble.weights, dtype=float)
    mean, stderr = mean_and_stderr(weights)
    return {
        'enabled': True,
        'mean_weight': mean,
        'mean_weight_stderr': stderr,
        'min_weight': float(np.min(weights)),
        'max_weight': float(np.max(weights)),
        'effective_sample_size': float(np.sum(weights) ** 2 / np.sum(weights ** 2)),
    }


def run(cfg: RunConfig, output_dir: Optional[str] = None) -> RunResult:
    """Simulate the configured ensemble and write every artifact of the run.

    Writes ``trajectory_<k>.csv`` for each path ``k``, ``summary.json`` and
    ``hist_boundary.csv`` into the output directory (``ENGAWA_OUTPUT_DIR``
    wins over the configured one).
    """
    started = time.perf_counter()
    sim = to_sim_config(cfg)
    output_dir = ensure_dir(output_dir or resolve_output_dir(cfg))
    logger.info('Running %s scheme, %d paths of %d particles up to T=%s', sim.scheme.value, sim.paths, sim.n_particles, sim.horizon)

    ensemble = simulate_ensemble(sim)
    result = RunResult(output_dir=output_dir)

    for traj in ensemble:
        result.files.append(write_trajectory_csv(os.path.join(output_dir, f'trajectory_{traj.path_index}.csv'), traj))

    edges, counts = boundary_histogram(ensemble, sim.geometry, cfg.histogram_bins)
    result.files.append(write_histogram_csv(os.path.join(output_dir, 'hist_boundary.csv'), edges, counts))

    means, residuals = _observable_table(cfg, sim, ensemble)
    summary = {
        'engawa_version': __version__,
        'seed': cfg.seed,
        'scheme': sim.scheme.value,
        'paths': len(ensemble),
        'samples': len(ensemble.times),
        'horizon': sim.horizon,
        'geometry': sim.geometry.describe(),
        'densities': sim.densities.describe(),
        'occupation_fractions': occupation_fractions(ensemble),
        'observables': means,
        'martingale_residuals': residuals,
        'girsanov': _girsanov_diagnostics(sim, ensemble),
    }
    if ensemble.local_time is not None:
        summary['mean_local_time'] = float(np.mean(ensemble.local_time[:, -1]))
    if ensemble.metadata:
        summary['metadata'] = ensemble.metadata
    summary['config'] = cfg.model_dump(mode='json')
    summary['wall_time'] = time.perf_counter() - started

    result.files.append(write_json(os.path.join(output_dir, 'summary.json'), summary))
    result.summary = summary
    logger.info('Run finished in %.3fs, artifacts in %s', summary['wall_time'], output_dir)
    return result
