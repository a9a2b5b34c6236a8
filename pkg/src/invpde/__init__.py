"""Invariance-constrained discovery of PDEs from sparse, noisy field data."""

__version__ = "0.1.0"

from .terms import (Library, LibraryMode, Target, Term, build_library, galilean_filter, lorentz_filter,
                    pinned_terms_for, scalar_vars, velocity_vars)
from .data import FieldDataset, NoiseSpec, SampleSpec, add_noise, downsample, load_dataset, save_dataset
from .solvers import SolverConfig, solve, simulate_discovered
from .surrogate import MlpSpec, Surrogate, forward_jet, loss_and_grad
from .sparse import RegressionProblem, ridge, stridge, train_stridge
from .engine import DiscoveredPde, Schedule, Stage, discover, discover_baseline, preset_schedule
from .evaluation import BoostSpec, certify_invariance, coefficient_report, equation_residual, relative_error
