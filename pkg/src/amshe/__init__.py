"""Monte Carlo laboratory for the additive-multiplicative stochastic heat equation."""

from .cli_io import ExperimentConfig, SeedDerivation, derive_seed, load_config, parse_config, write_records
from .domain import DiscreteKernel, DomainSpec, KernelSpec, build_kernel, rescale_kernel, sample_noise_increment
from .errors import *  # noqa: F401,F403
from .experiments import ExperimentReport, run_experiment
from .martingale import MartingalePath, TimeChangedPath, qv_formula, qv_increments, time_change
from .solver import FieldState, MeasureSpec, SchemeParams, adjoint_martingale_run, amshe_step, mshe_step
from .stats import CauchyLaw, cauchy_report, ecf_fit, ks_distance

__version__ = "0.1.0"
