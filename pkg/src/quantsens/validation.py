"""
Synthetic location-scale processes with known conditional quantiles.

The process is a first-order vector autoregression

    y[t+1, i] = c_i + A_i' y[t] + (g_i' z[t]) * e[t+1, i],   z[t] = [1, y[t]]

with i.i.d. standard normal or uniform(-0.5, 0.5) innovations.  Its 1-step
conditional quantiles are ``z'(b + g F^{-1}(tau))``, linear in ``z``.  For
h > 1 they remain linear only when the scale does not depend on ``y``
(``g`` spans the intercept) and the innovations are Gaussian; then

    b_h = [sum_{s<h} A^s c,  A^h],   g_h = [sqrt(diag(sum_{s<h} A^s D A^s')), 0]

with ``D = diag(g_{i,0}^2)``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import DataError
from .ingest import MONTH, AlignedPanel, to_month
from .system import QuantileSystem, projection_matrix, quantile_sensitivity

INNOVATIONS = ("normal", "uniform")


@dataclass(frozen=True)
class LocationScaleDGP:
    intercept: tuple = (0.5, 1.0)
    ar: tuple = ((0.5, 0.2), (0.1, 0.6))
    scale: tuple = ((1.0, 0.0, 0.0), (0.8, 0.0, 0.0))
    innovation: str = "normal"
    names: tuple = ("y1", "y2")
    impulse: str = "y2"
    burn_in: int = 200

    def __post_init__(self):
        n = len(self.names)
        if np.shape(self.intercept) != (n,) or np.shape(self.ar) != (n, n):
            raise ValueError("intercept and autoregressive matrix must match the variables")
        if np.shape(self.scale) != (n, n + 1):
            raise ValueError("scale needs one (1 + n)-vector per variable")
        if self.innovation not in INNOVATIONS:
            raise ValueError(f"innovation must be one of {INNOVATIONS}")
        if self.impulse not in self.names:
            raise ValueError(f"impulse {self.impulse!r} is not a variable")

    @classmethod
    def from_dict(cls, cfg):
        kw = dict(cfg)
        for key in ("intercept", "names"):
            if key in kw:
                kw[key] = tuple(kw[key])
        for key in ("ar", "scale"):
            if key in kw:
                kw[key] = tuple(tuple(float(v) for v in row) for row in kw[key])
        return cls(**kw)

    def to_dict(self):
        return {
            "intercept": list(self.intercept),
            "ar": [list(r) for r in self.ar],
            "scale": [list(r) for r in self.scale],
            "innovation": self.innovation,
            "names": list(self.names),
            "impulse": self.impulse,
            "burn_in": self.burn_in,
        }

    @property
    def n(self):
        return len(self.names)

    @property
    def d(self):
        return self.n + 1

    @property
    def homoskedastic(self):
        return not np.any(np.asarray(self.scale)[:, 1:])

    def inverse_cdf(self, tau):
        tau = np.asarray(tau, dtype=float)
        if np.any((tau <= 0) | (tau >= 1)):
            raise ValueError("quantile levels must lie in (0, 1)")
        return norm.ppf(tau) if self.innovation == "normal" else tau - 0.5

    def coefficients(self, h):
        """Location and scale coefficient matrices (n x d) at horizon ``h``."""
        if h < 1:
            raise ValueError("horizon must be positive")
        c = np.asarray(self.intercept, dtype=float)
        A = np.asarray(self.ar, dtype=float)
        G = np.asarray(self.scale, dtype=float)
        if h == 1:
            return np.column_stack([c, A]), G.copy()
        if not (self.homoskedastic and self.innovation == "normal"):
            raise ValueError("h-step quantiles are linear in z only for homoskedastic Gaussian processes")
        D = np.diag(G[:, 0] ** 2)
        ch, Ah, cov = np.zeros(self.n), np.eye(self.n), np.zeros((self.n, self.n))
        for _ in range(h):
            ch += Ah @ c
            cov += Ah @ D @ Ah.T
            Ah = A @ Ah
        scale = np.zeros((self.n, self.d))
        scale[:, 0] = np.sqrt(np.diag(cov))
        return np.column_stack([ch, Ah]), scale

    def conditional_quantile(self, z, tau, h=1):
        """True h-step conditional quantiles (n-vector) given regressors ``z``."""
        b, g = self.coefficients(h)
        return (b + g * self.inverse_cdf(tau)) @ np.asarray(z, dtype=float)


def simulate(dgp, T, seed, start="2000-01"):
    """Panel of length ``T`` after discarding ``dgp.burn_in`` periods.

    Raises DataError if the conditional scale ``z'g`` is not positive at
    some period.
    """
    if T < 1:
        raise ValueError("T must be positive")
    rng = np.random.default_rng(seed)
    c = np.asarray(dgp.intercept, dtype=float)
    A = np.asarray(dgp.ar, dtype=float)
    G = np.asarray(dgp.scale, dtype=float)
    total = dgp.burn_in + T
    if dgp.innovation == "normal":
        eps = rng.standard_normal((total, dgp.n))
    else:
        eps = rng.uniform(-0.5, 0.5, size=(total, dgp.n))
    y = np.linalg.solve(np.eye(dgp.n) - A, c)
    out = np.empty((total, dgp.n))
    for t in range(total):
        s = G @ np.concatenate(([1.0], y))
        if np.any(s <= 0):
            raise DataError(f"non-positive conditional scale at period {t - dgp.burn_in}")
        y = c + A @ y + s * eps[t]
        out[t] = y
    first = to_month(start)
    dates = first + np.arange(T) * MONTH
    responses = tuple(v for v in dgp.names if v != dgp.impulse)
    return AlignedPanel(dates, tuple(dgp.names), out[dgp.burn_in:], dgp.impulse, responses)


def analytic_system(dgp, taus, h):
    """QuantileSystem holding the true coefficient rows ``b + g F^{-1}(tau)``."""
    taus = np.asarray(taus, dtype=float)
    q = dgp.inverse_cdf(taus)

    def stack(b, g):
        return np.vstack([b[i][None, :] + q[:, None] * g[i][None, :] for i in range(dgp.n)])

    B1 = stack(*dgp.coefficients(1))
    Bh = stack(*dgp.coefficients(h))
    return QuantileSystem(B1, Bh, tuple(dgp.names), taus, int(h))


def analytic_qs(dgp, taus, h, i, tau, j, tau_prime):
    S = projection_matrix(analytic_system(dgp, taus, h))
    return quantile_sensitivity(S, i, tau, j, tau_prime)
