__version__ = '0.1.0'

from engawa.core import ConfigError, EngawaError, NotApplicable, NumericError
from engawa.densities import DensityField, DensitySuite, PairPotential, preset
from engawa.generator import (Observable, apply_generator, expanded_generator,
                              martingale_residual, observable,
                              wentzell_residual)
from engawa.geometry import DomainGeometry
from engawa.oracle1d import (OracleConfig, boundary_fraction_analytic,
                             sticky_interval_trajectory)
from engawa.simulator import (SimConfig, simulate, simulate_ensemble,
                              time_change_reflected)
from engawa.state import Ensemble, ParticleSystemState, Trajectory
