"""
Quantile systems and quantile sensitivities.

Per-level coefficient vectors of every variable are stacked into ``B1``
(1-step) and ``Bh`` (h-step), rows grouped by variable and ordered by level
within a variable.  Since ``Q1 = B1 z`` and ``Qh = Bh z``, eliminating ``z``
gives ``Qh = Bbar Q1`` with ``Bbar = Bh (B1'B1)^{-1} B1'``; entry
``[(i, tau), (j, tau')]`` of ``Bbar`` is the sensitivity of the h-step
``tau`` quantile of ``i`` to the 1-step ``tau'`` quantile of ``j``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DataError, IllConditionedError, RankDeficientError, SolverError
from .ingest import LagDesign, build_design, to_month
from .qr import FitGrid, fit_many

COND_THRESHOLD = 1e12
LEVEL_ATOL = 1e-9


def level_index(taus, tau):
    """Position of ``tau`` in ``taus``; levels must be exact grid points."""
    hit = np.flatnonzero(np.abs(np.asarray(taus) - float(tau)) <= LEVEL_ATOL)
    if hit.size == 0:
        raise KeyError(f"level {tau:g} is not on the fitted grid")
    return int(hit[0])


@dataclass(frozen=True)
class QuantileSystem:
    B1: np.ndarray
    Bh: np.ndarray
    variables: tuple
    taus: np.ndarray
    h: int
    status: dict = field(default_factory=dict)

    @property
    def k(self):
        return len(self.taus)

    @property
    def n(self):
        return len(self.variables)

    @property
    def d(self):
        return self.B1.shape[1]

    @property
    def index(self):
        """Row labels ``(variable, tau)`` in stacking order."""
        return [(v, float(t)) for v in self.variables for t in self.taus]

    def row(self, variable, tau):
        return _row(self.variables, self.taus, variable, tau)

    def block(self, variable, horizon=1):
        """k x d coefficient block of one variable."""
        i = self.variables.index(variable)
        B = self.B1 if horizon == 1 else self.Bh
        return B[i * self.k:(i + 1) * self.k]


@dataclass(frozen=True)
class SensitivityMatrix:
    Bbar: np.ndarray
    cond: float
    variables: tuple
    taus: np.ndarray
    h: int

    @property
    def index(self):
        return [(v, float(t)) for v in self.variables for t in self.taus]

    def row(self, variable, tau):
        return _row(self.variables, self.taus, variable, tau)


@dataclass(frozen=True)
class SensitivityCurve:
    response: str
    impulse: str
    impulse_tau: float
    grid: np.ndarray
    values: np.ndarray


@dataclass(frozen=True)
class PerturbedDistribution:
    response: str
    impulse: str
    impulse_tau: float
    delta: float
    grid: np.ndarray
    baseline: np.ndarray
    perturbed: np.ndarray
    sensitivity: np.ndarray


@dataclass(frozen=True)
class DatedCurve:
    date: object
    level: float
    clamped: bool
    curve: SensitivityCurve


def _row(variables, taus, variable, tau):
    try:
        i = variables.index(variable)
    except ValueError:
        raise KeyError(f"unknown variable {variable!r}") from None
    return i * len(taus) + level_index(taus, tau)


def stack_system(fits1, fitsh, h):
    """
    Assemble ``B1`` and ``Bh`` from per-variable fit grids.

    Parameters
    ----------
    fits1, fitsh : sequence of FitGrid
        1-step and h-step grids; ``fitsh`` is matched to ``fits1`` by
        variable name.  All grids must carry the same levels.
    h : int
        Horizon of ``fitsh``.
    """
    fits1, fitsh = list(fits1), list(fitsh)
    if not fits1:
        raise DataError("no fit grids supplied")
    variables = tuple(g.variable for g in fits1)
    byname = {g.variable: g for g in fitsh}
    if set(byname) != set(variables) or len(byname) != len(fitsh):
        raise DataError("1-step and h-step fits cover different variables")
    taus = np.asarray(fits1[0].taus, dtype=float)
    grids = fits1 + [byname[v] for v in variables]
    for g in grids:
        if len(g.taus) != len(taus) or np.any(np.abs(np.asarray(g.taus) - taus) > LEVEL_ATOL):
            raise DataError(f"level grid of {g.variable!r} (h={g.horizon}) differs from {variables[0]!r}")
    if len({g.d for g in grids}) != 1:
        raise DataError("fits do not share the design dimension")
    B1 = np.vstack([g.betas for g in fits1])
    Bh = np.vstack([byname[v].betas for v in variables])
    _rank_check(B1)
    status = {f"{g.variable}|h={g.horizon}|tau={f.tau:g}": f.status for g in grids for f in g.fits}
    return QuantileSystem(B1, Bh, variables, taus, int(h), status)


def _rank_check(B1):
    nk, d = B1.shape
    if nk < d:
        raise RankDeficientError(f"{nk} stacked quantiles cannot identify {d} regressors")
    sv = np.linalg.svd(B1, compute_uv=False)
    if sv[-1] <= sv[0] * max(nk, d) * np.finfo(float).eps:
        cond = (sv[0] / sv[-1]) ** 2 if sv[-1] > 0 else np.inf
        raise RankDeficientError("stacked 1-step coefficients are rank deficient", cond)
    return float((sv[0] / sv[-1]) ** 2)


def projection_matrix(system, cond_threshold=COND_THRESHOLD):
    """Bbar = Bh (B1'B1)^{-1} B1' via a thin QR factorisation of B1.

    ``cond`` is the 2-norm condition number of ``B1'B1``; above
    ``cond_threshold`` an IllConditionedError carrying it is raised.
    """
    B1, Bh = system.B1, system.Bh
    if B1.shape != Bh.shape:
        raise DataError(f"B1 is {B1.shape} but Bh is {Bh.shape}")
    cond = _rank_check(B1)
    if cond > cond_threshold:
        raise IllConditionedError("B1'B1 is too ill-conditioned for projection", cond)
    Q, R = np.linalg.qr(B1)
    Bbar = Bh @ solve_triangular(R, Q.T)
    return SensitivityMatrix(Bbar, cond, system.variables, system.taus, system.h)


def quantile_sensitivity(S, i, tau, j, tau_prime):
    return float(S.Bbar[S.row(i, tau), S.row(j, tau_prime)])


def sensitivity_curve(S, i, grid, j, tau_prime):
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("response grid must be strictly increasing")
    col = S.row(j, tau_prime)
    rows = [S.row(i, t) for t in grid]
    return SensitivityCurve(i, j, float(tau_prime), grid, S.Bbar[rows, col].copy())


def perturb_distribution(baseline, S, i, j, tau_prime, delta, grid=None):
    """First-order shift of the h-step quantiles of ``i`` when the 1-step
    ``tau_prime`` quantile of ``j`` moves by ``delta``."""
    grid = S.taus if grid is None else np.asarray(grid, dtype=float)
    baseline = np.asarray(baseline, dtype=float)
    if baseline.shape != grid.shape:
        raise ValueError("baseline must hold one quantile per grid level")
    curve = sensitivity_curve(S, i, grid, j, tau_prime)
    return PerturbedDistribution(i, j, float(tau_prime), float(delta), grid, baseline,
                                 baseline + curve.values * delta, curve.values)


def predicted_quantiles(betas, z, rearrange=True):
    q = np.asarray(betas, dtype=float) @ np.asarray(z, dtype=float)
    return np.sort(q) if rearrange else q


def _lookup(taus, q, y_obs):
    idx = int(np.searchsorted(q, y_obs, side="left"))
    clamped = idx == 0 and y_obs < q[0] or idx == len(q)
    return min(idx, len(q) - 1), clamped


def tau_level_lookup(fits, z, y_obs, rearrange=True):
    """Smallest grid level whose predicted quantile is >= ``y_obs``.

    Observations beyond the fitted quantiles are clamped to the grid ends.
    Without rearrangement the raw (possibly crossing) predictions are scanned
    in level order.
    """
    if len(fits.taus) == 0:
        raise ValueError("empty level grid")
    q = predicted_quantiles(fits.betas, z, rearrange)
    if not rearrange:
        above = np.flatnonzero(q >= y_obs)
        return float(fits.taus[above[0] if above.size else -1])
    idx, _ = _lookup(fits.taus, q, y_obs)
    return float(fits.taus[idx])


def time_varying_qs(S, fits_j, Z, y_j, i, grid, dates=None, rearrange=True):
    """Per-date sensitivity curves at the observed level of the impulse.

    ``Z[t]`` is the regressor row whose 1-step target is ``y_j[t]``.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    y_j = np.asarray(y_j, dtype=float)
    if len(Z) != len(y_j):
        raise DataError("regressor rows and impulse observations are not aligned")
    dates = list(range(len(y_j))) if dates is None else list(dates)
    Q = Z @ fits_j.betas.T
    if rearrange:
        Q = np.sort(Q, axis=1)
    out = []
    for t in range(len(y_j)):
        if rearrange:
            idx, clamped = _lookup(fits_j.taus, Q[t], y_j[t])
        else:
            above = np.flatnonzero(Q[t] >= y_j[t])
            idx, clamped = (int(above[0]), False) if above.size else (len(Q[t]) - 1, True)
        level = float(fits_j.taus[idx])
        out.append(DatedCurve(dates[t], level, bool(clamped),
                              sensitivity_curve(S, i, grid, fits_j.variable, level)))
    return out


@dataclass(frozen=True)
class PipelineConfig:
    p: int = 12
    h: int = 12
    taus: tuple = tuple(np.round(np.arange(1, 100) / 100, 2))
    rearrange: bool = True
    cond_threshold: float = COND_THRESHOLD

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        if taus.size < 2 or np.any(np.diff(taus) <= 0):
            raise ValueError("level grid must be strictly increasing with k > 1")
        if self.p < 1 or self.h < 1:
            raise ValueError("lag count and horizon must be positive")


@dataclass(frozen=True)
class SystemEstimate:
    system: QuantileSystem
    fits1: dict
    fitsh: dict
    design: LagDesign


def estimate_from_design(design, config):
    """Fit every (variable, horizon, level) problem on one shared design."""
    taus = np.asarray(config.taus, dtype=float)
    horizons = sorted({1, design.h})
    problems = [(v, s) for s in horizons for v in design.names]
    Y = np.vstack([np.repeat(design.target(v, s)[None, :], taus.size, axis=0) for v, s in problems])
    fits = fit_many(design.Z, Y, np.tile(taus, len(problems)))
    grids = {}
    for m, (v, s) in enumerate(problems):
        chunk = tuple(fits[m * taus.size:(m + 1) * taus.size])
        bad = [f for f in chunk if f.status == "max_iterations"]
        if bad:
            raise SolverError(f"fit for {v!r} (h={s}) failed", bad[0].tau)
        grids[(v, s)] = FitGrid(v, s, np.array([f.tau for f in chunk]), chunk)
    fits1 = {v: grids[(v, 1)] for v in design.names}
    fitsh = {v: grids[(v, design.h)] for v in design.names}
    system = stack_system(fits1.values(), fitsh.values(), design.h)
    return SystemEstimate(system, fits1, fitsh, design)


def estimate_system(panel, config):
    return estimate_from_design(build_design(panel, config.p, config.h), config)


def subperiod_systems(panel, breakpoints, config):
    """Independent estimation on ``[start, b1), [b1, b2), ..., [bm, end]``."""
    cuts = [to_month(b) for b in breakpoints]
    if any(b2 <= b1 for b1, b2 in zip(cuts, cuts[1:])):
        raise DataError("breakpoints must be strictly increasing")
    bounds = [None] + cuts + [None]
    out = []
    for lo, hi in zip(bounds, bounds[1:]):
        piece = panel.window(lo, hi)
        if piece.T == 0:
            raise DataError(f"empty sub-period before {hi}" if hi is not None else f"empty sub-period from {lo}")
        est = estimate_system(piece, config)
        out.append(projection_matrix(est.system, config.cond_threshold))
    return out
