"""Quantile systems and quantile sensitivities for multivariate time series."""

__version__ = "0.1.0"

from .errors import (BootstrapReliabilityError, ConfigError, DataError, IllConditionedError,
                     NumericalError, QSError, RankDeficientError, SolverError)
from .ingest import AlignedPanel, LagDesign, RawSeries, align, build_design, parse_csv, to_yoy_growth
from .qr import FitGrid, QuantileFit, fit_grid, fit_many, fit_quantile, pinball_loss, predict
from .system import (PipelineConfig, QuantileSystem, SensitivityMatrix, estimate_system,
                     perturb_distribution, projection_matrix, quantile_sensitivity,
                     sensitivity_curve, stack_system, subperiod_systems, tau_level_lookup,
                     time_varying_qs)
from .bootstrap import BootstrapSpec, CurveBand, CurveQuery, bootstrap_curve, moving_block_resample
from .validation import LocationScaleDGP, analytic_qs, analytic_system, simulate
