"""
Moving-block bootstrap bands for sensitivity curves.

Replicate ``r`` draws its blocks from a generator seeded by
``SeedSequence(seed, spawn_key=(r,))``, so every replicate is fixed by the
master seed and its counter alone, independent of evaluation order.

Blocks are drawn over the rows of the lagged design: each row carries its
regressors together with its 1-step and h-step targets, so lag/lead
alignment inside a row is never split by a block boundary.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import BootstrapReliabilityError, DataError, NumericalError
from .ingest import AlignedPanel, LagDesign, build_design
from .system import estimate_from_design, projection_matrix, sensitivity_curve

MAX_FAILURE_RATE = 0.2


def default_block_length(T):
    """Smallest integer ``L`` with ``L**3 >= T``, i.e. ``ceil(T ** (1/3))``."""
    L = max(1, int(round(T ** (1.0 / 3.0))))
    while L ** 3 < T:
        L += 1
    while L > 1 and (L - 1) ** 3 >= T:
        L -= 1
    return L


@dataclass(frozen=True)
class BootstrapSpec:
    replicates: int = 1000
    block_length: int = None
    seed: int = 0
    coverage: float = 0.68

    def __post_init__(self):
        if self.replicates < 2:
            raise ValueError("at least two bootstrap replicates required")
        if not 0.0 < self.coverage < 1.0:
            raise ValueError("band coverage must lie in (0, 1)")
        if self.block_length is not None and self.block_length < 1:
            raise ValueError("block length must be positive")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def length_for(self, T):
        L = self.block_length or default_block_length(T)
        if L > T:
            raise DataError(f"block length {L} exceeds series length {T}")
        return L


@dataclass(frozen=True)
class CurveQuery:
    response: str
    impulse_tau: float
    impulse: str = None
    grid: tuple = None


@dataclass(frozen=True)
class CurveBand:
    grid: np.ndarray
    lower: np.ndarray
    center: np.ndarray
    upper: np.ndarray
    point: np.ndarray
    replicates_used: int
    failures: int
    block_length: int
    coverage: float
    curves: np.ndarray = field(repr=False, default=None)


def replicate_rng(seed, r):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(r),)))


def block_indices(T, L, rng):
    """Row indices of ``ceil(T/L)`` blocks of length ``L``, cut to ``T``."""
    if L > T or L < 1:
        raise DataError(f"block length {L} must lie in [1, {T}]")
    starts = rng.integers(0, T - L + 1, size=-(-T // L))
    return (starts[:, None] + np.arange(L)[None, :]).ravel()[:T]


def moving_block_resample(panel, L, rng):
    """Resample panel rows in blocks; all columns share the same blocks.

    The resampled values are labelled with the original dates.
    """
    idx = block_indices(panel.T, L, rng)
    return AlignedPanel(panel.dates.copy(), panel.names, panel.values[idx],
                        panel.impulse, panel.responses)


def resample_design(design, idx):
    return LagDesign(design.Z[idx], {k: v[idx] for k, v in design.targets.items()},
                     design.p, design.h, design.names, design.origin[idx], design.dates[idx])


def percentile_band(curves, coverage):
    """Pointwise (lower, mean, upper) of replicate curves (rows)."""
    alpha = (1.0 - coverage) / 2.0
    lower, upper = np.percentile(curves, [100 * alpha, 100 * (1 - alpha)], axis=0)
    return lower, curves.mean(axis=0), upper


def bootstrap_curve(panel, config, query, spec):
    """
    Bootstrap band for one sensitivity curve.

    Parameters
    ----------
    panel : AlignedPanel
    config : PipelineConfig
    query : CurveQuery
        Response variable, impulse level and optional response grid
        (defaults to the fitted grid) and impulse (defaults to the panel's).
    spec : BootstrapSpec

    Returns
    -------
    CurveBand
        ``center`` is the replicate mean; ``point`` the full-sample curve.
        Replicates failing rank or conditioning checks are dropped and
        counted; more than 20% failures raise BootstrapReliabilityError.
    """
    impulse = query.impulse or panel.impulse
    grid = np.asarray(query.grid if query.grid is not None else config.taus, dtype=float)
    design = build_design(panel, config.p, config.h)
    est = estimate_from_design(design, config)
    S = projection_matrix(est.system, config.cond_threshold)
    point = sensitivity_curve(S, query.response, grid, impulse, query.impulse_tau).values

    T = design.Z.shape[0]
    L = spec.length_for(T)
    curves, failures = [], 0
    for r in range(spec.replicates):
        idx = block_indices(T, L, replicate_rng(spec.seed, r))
        try:
            est_r = estimate_from_design(resample_design(design, idx), config)
            S_r = projection_matrix(est_r.system, config.cond_threshold)
        except NumericalError:
            failures += 1
            continue
        curves.append(sensitivity_curve(S_r, query.response, grid, impulse, query.impulse_tau).values)
    if failures > MAX_FAILURE_RATE * spec.replicates or len(curves) < 2:
        raise BootstrapReliabilityError("too many failed bootstrap replicates", failures, spec.replicates)
    curves = np.vstack(curves)
    lower, center, upper = percentile_band(curves, spec.coverage)
    return CurveBand(grid, lower, center, upper, point, len(curves), failures, L,
                     spec.coverage, curves)
