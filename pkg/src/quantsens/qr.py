"""
Linear quantile regression by exact minimisation of the check loss.

Each fit solves the linear program

    min  tau * 1'u + (1 - tau) * 1'v   s.t.  y - Z b = u - v,  u, v >= 0

in two stages.  A Frisch-Newton interior-point method with Mehrotra
predictor-corrector steps works on the bounded dual

    max  y'a   s.t.  Z'a = (1 - tau) Z'1,  0 <= a <= 1

and is batched over every (response, tau) problem sharing one design.  Its
coefficients are then moved to a basic solution (``d`` rows fitted exactly)
and polished with simplex pivots along the edges of the polyhedral
objective until no edge descends.  The interior-point dual weights give a
lower bound on the optimum, which certifies the final vertex.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, RankDeficientError, SolverError

TAU_MIN, TAU_MAX = 0.005, 0.995
GAP_TOL = 1e-9
MAX_ITER = 100
_STEP = 0.99995


def _check_tau(tau):
    tau = float(tau)
    if not 0.0 < tau < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {tau}")
    return tau


def pinball_loss(x, tau):
    """Check loss ``x * (tau - 1{x <= 0})``; works elementwise on arrays."""
    tau = _check_tau(tau)
    x = np.asarray(x, dtype=float)
    out = np.where(x <= 0, x * (tau - 1.0), x * tau)
    return float(out) if out.ndim == 0 else out


def check_objective(Z, y, beta, tau):
    """Sum of check losses of the residuals ``y - Z beta``."""
    r = np.asarray(y, dtype=float) - np.asarray(Z, dtype=float) @ np.asarray(beta, dtype=float)
    return float(np.sum(pinball_loss(r, tau)))


@dataclass(frozen=True)
class QuantileFit:
    tau: float
    beta: np.ndarray
    objective: float
    status: str = "converged"
    iterations: int = 0
    pivots: int = 0

    @property
    def converged(self):
        return self.status == "converged"


@dataclass(frozen=True)
class FitGrid:
    variable: str
    horizon: int
    taus: np.ndarray
    fits: tuple

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        if taus.ndim != 1 or taus.size == 0:
            raise ValueError("a fit grid needs at least one level")
        if np.any(np.diff(taus) <= 0) or taus[0] <= 0 or taus[-1] >= 1:
            raise ValueError("grid levels must be strictly increasing inside (0, 1)")
        if len(self.fits) != taus.size:
            raise ValueError("one fit per grid level required")
        if len({f.beta.size for f in self.fits}) != 1:
            raise ValueError("fits in a grid must share the design dimension")

    @property
    def betas(self):
        """k x d coefficient matrix, one row per level."""
        return np.vstack([f.beta for f in self.fits])

    @property
    def d(self):
        return self.fits[0].beta.size


def predict(fit, z):
    z = np.asarray(z, dtype=float)
    if z.shape != fit.beta.shape:
        raise ValueError(f"regressor has dimension {z.size}, fit expects {fit.beta.size}")
    return float(z @ fit.beta)


def _prepare_levels(taus):
    taus = np.array([_check_tau(t) for t in np.atleast_1d(taus)], dtype=float)
    clipped = np.clip(taus, TAU_MIN, TAU_MAX)
    if np.any(clipped != taus):
        warnings.warn(f"quantile levels clamped to [{TAU_MIN}, {TAU_MAX}]", stacklevel=3)
    return clipped


def _check_design(Z, Y):
    Z = np.asarray(Z, dtype=float)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Z.ndim != 2:
        raise DataError("design must be a 2-d array")
    n, d = Z.shape
    if Y.shape[1] != n:
        raise DataError(f"design has {n} rows but targets have {Y.shape[1]}")
    if n < d:
        raise DataError(f"need at least {d} observations, got {n}")
    if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(Y))):
        raise DataError("non-finite values in design or targets")
    sv = np.linalg.svd(Z, compute_uv=False)
    if sv[-1] <= sv[0] * max(n, d) * np.finfo(float).eps:
        cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
        raise RankDeficientError("design matrix is rank deficient", cond)
    return Z, Y


def _max_step(v, dv):
    """Largest alpha with v + alpha dv >= 0, row-wise; inf when unbounded."""
    ratio = np.full(v.shape, np.inf)
    np.divide(v, -dv, out=ratio, where=dv < 0)
    return ratio.min(axis=1)


def _interior_point(Z, Y, taus, tol=GAP_TOL, max_iter=MAX_ITER):
    """Batched Frisch-Newton solve of the bounded dual.

    Returns coefficient estimates, primal-feasible dual weights ``a`` and
    the iteration count for each problem.
    """
    m, n = Y.shape
    A = Z.T
    c = -Y
    b = (1.0 - taus)[:, None] * Z.sum(axis=0)[None, :]
    x = np.repeat((1.0 - taus)[:, None], n, axis=1)
    s = 1.0 - x

    yv = np.linalg.solve(Z.T @ Z, Z.T @ c.T).T
    r = c - yv @ A
    pad = 1e-3 * (1.0 + np.abs(r).mean(axis=1, keepdims=True))
    z = np.maximum(r, 0.0) + pad
    w = np.maximum(-r, 0.0) + pad

    iters = np.zeros(m, dtype=int)
    active = np.ones(m, dtype=bool)
    for it in range(max_iter):
        gap = (z * x).sum(axis=1) + (w * s).sum(axis=1)
        lower = -(c * x).sum(axis=1) - (1.0 - taus) * Y.sum(axis=1)
        active = gap > tol * (1.0 + np.abs(lower))
        if not active.any():
            break
        ix = np.flatnonzero(active)
        xa, sa, za, wa = x[ix], s[ix], z[ix], w[ix]

        q = 1.0 / (za / xa + wa / sa)
        rr = za - wa
        M = (q[:, None, :] * A) @ Z

        def solve(rhs):
            try:
                return np.linalg.solve(M, rhs[..., None])[..., 0]
            except np.linalg.LinAlgError:
                return np.stack([np.linalg.lstsq(Mi, ri, rcond=None)[0] for Mi, ri in zip(M, rhs)])

        # predictor (affine scaling)
        dy = solve((q * rr) @ Z)
        dx = q * (dy @ A - rr)
        ds = -dx
        dz = -za * (dx / xa + 1.0)
        dw = -wa * (ds / sa + 1.0)
        fp = np.minimum(_STEP * np.minimum(_max_step(xa, dx), _max_step(sa, ds)), 1.0)
        fd = np.minimum(_STEP * np.minimum(_max_step(za, dz), _max_step(wa, dw)), 1.0)

        # corrector with adaptive centring
        mu = (za * xa).sum(axis=1) + (wa * sa).sum(axis=1)
        g = ((za + fd[:, None] * dz) * (xa + fp[:, None] * dx)).sum(axis=1) \
            + ((wa + fd[:, None] * dw) * (sa + fp[:, None] * ds)).sum(axis=1)
        mu = (mu * (g / mu) ** 3 / (2 * n))[:, None]
        dxdz = dx * dz / xa
        dsdw = ds * dw / sa
        xi = mu * (1.0 / xa - 1.0 / sa)
        dy = solve((q * (rr - xi + dxdz - dsdw)) @ Z)
        dx = q * (dy @ A + xi - rr - dxdz + dsdw)
        ds = -dx
        dz = mu / xa - za - dxdz - za * dx / xa
        dw = mu / sa - wa - dsdw - wa * ds / sa
        fp = np.minimum(_STEP * np.minimum(_max_step(xa, dx), _max_step(sa, ds)), 1.0)
        fd = np.minimum(_STEP * np.minimum(_max_step(za, dz), _max_step(wa, dw)), 1.0)

        x[ix] = xa + fp[:, None] * dx
        s[ix] = sa + fp[:, None] * ds
        yv[ix] += fd[:, None] * dy
        z[ix] = za + fd[:, None] * dz
        w[ix] = wa + fd[:, None] * dw
        iters[ix] += 1
    return -yv, x, iters


def _independent_rows(Z, order, d):
    """First ``d`` linearly independent rows of ``Z`` taken in ``order``."""
    basis, Q = [], np.zeros((0, Z.shape[1]))
    for i in order:
        v = Z[i] - Q.T @ (Q @ Z[i])
        nv = np.linalg.norm(v)
        if nv > 1e-9 * (1.0 + np.linalg.norm(Z[i])):
            basis.append(i)
            Q = np.vstack([Q, v / nv])
            if len(basis) == d:
                return np.array(basis)
    raise RankDeficientError("could not find an invertible basic subsystem")


def _simplex_polish(Z, y, tau, beta0, max_pivots):
    """Move ``beta0`` to a vertex and pivot along descending edges.

    Returns (beta, pivots, optimal, degenerate).
    """
    n, d = Z.shape
    yscale = 1.0 + np.abs(y).max()
    r0 = y - Z @ beta0
    basis = _independent_rows(Z, np.argsort(np.abs(r0), kind="stable"), d)
    zero_tol = 1e-11 * yscale
    descent_tol = 1e-11 * (1.0 + n)

    for pivot in range(max_pivots + 1):
        W = np.linalg.inv(Z[basis])
        beta = W @ y[basis]
        G = Z @ W
        r = y - Z @ beta
        nonbasic = np.ones(n, dtype=bool)
        nonbasic[basis] = False
        r[~nonbasic] = 0.0
        nz = nonbasic & (np.abs(r) > zero_tol)
        flat = nonbasic & ~nz
        psi = np.where(r[nz] > 0, tau, tau - 1.0)
        base = -(psi[:, None] * G[nz]).sum(axis=0)
        Gf = G[flat]
        up = (1.0 - tau) + base + np.where(-Gf <= 0, -Gf * (tau - 1), -Gf * tau).sum(axis=0)
        down = tau - base + np.where(Gf <= 0, Gf * (tau - 1), Gf * tau).sum(axis=0)
        slopes = np.concatenate([up, down])
        k = int(np.argmin(slopes))
        if slopes[k] >= -descent_tol:
            return beta, pivot, True, bool(flat.any())
        if pivot == max_pivots:
            break
        sign = 1.0 if k < d else -1.0
        k %= d
        g = sign * G[:, k]
        cand = np.flatnonzero(nz & (r * g > 0))
        if cand.size == 0:
            raise SolverError("unbounded edge in check-loss objective", tau)
        t = r[cand] / g[cand]
        order = np.lexsort((cand, t))
        slope = slopes[k if sign > 0 else k + d] + np.cumsum(np.abs(g[cand[order]]))
        stop = int(np.argmax(slope >= -descent_tol)) if np.any(slope >= -descent_tol) else len(order) - 1
        basis[k] = cand[order[stop]]
    return beta, max_pivots, False, bool(flat.any())


def fit_many(Z, Y, taus, tol=GAP_TOL, max_iter=MAX_ITER):
    """
    Fit several quantile regressions that share one design.

    Parameters
    ----------
    Z : (n, d) array
        Full-column-rank design.
    Y : (m, n) array
        One target vector per problem.
    taus : (m,) array
        Quantile level of each problem.

    Returns
    -------
    list of QuantileFit
    """
    Z, Y = _check_design(Z, Y)
    taus = _prepare_levels(taus)
    if taus.size != Y.shape[0]:
        raise ValueError("one quantile level per target vector required")
    n, d = Z.shape
    try:
        betas, weights, iters = _interior_point(Z, Y, taus, tol, max_iter)
    except np.linalg.LinAlgError:
        betas = np.linalg.lstsq(Z, Y.T, rcond=None)[0].T
        weights, iters = None, np.full(len(taus), max_iter)

    fits = []
    for m, tau in enumerate(taus):
        y = Y[m]
        beta, pivots, optimal, degenerate = _simplex_polish(Z, y, tau, betas[m], 50 + 5 * n)
        obj = check_objective(Z, y, beta, tau)
        if not optimal:
            status = "max_iterations"
        elif degenerate and weights is not None:
            lower = y @ weights[m] - (1.0 - tau) * y.sum()
            certified = obj - lower <= 1e-7 * (1.0 + abs(obj))
            status = "converged" if certified else "degenerate"
        else:
            status = "converged"
        fits.append(QuantileFit(float(tau), beta, obj, status, int(iters[m]), pivots))
    return fits


def fit_quantile(Z, y, tau, **kw):
    """Fit a single linear quantile regression of ``y`` on ``Z`` at ``tau``.

    Raises SolverError when no optimal vertex is reached within the pivot
    budget; approximate solutions are never returned as converged.
    """
    fit = fit_many(Z, np.asarray(y, dtype=float)[None, :], [tau], **kw)[0]
    if fit.status == "max_iterations":
        raise SolverError("quantile regression did not reach an optimum", fit.tau)
    return fit


def fit_grid(Z, y, taus, variable="y", horizon=1, **kw):
    """One independent fit per level; a failure names the offending level."""
    taus = np.asarray(taus, dtype=float)
    y = np.asarray(y, dtype=float)
    fits = fit_many(Z, np.repeat(y[None, :], taus.size, axis=0), taus, **kw)
    for f in fits:
        if f.status == "max_iterations":
            raise SolverError(f"fit for {variable!r} (h={horizon}) failed", f.tau)
    return FitGrid(variable, horizon, np.array([f.tau for f in fits]), tuple(fits))
