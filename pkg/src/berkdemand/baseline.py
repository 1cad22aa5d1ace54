"""Log-log baselines: OLS and check-loss quantile regression.

These reproduce the usual constant-elasticity comparison models
(log quantity on a constant, log price, and log income).  The quantile
regression is solved as a linear program, which finds the global
minimizer of the piecewise-linear convex check loss directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import hstack as sp_hstack
from scipy.sparse import eye as sp_eye
from scipy.sparse import csc_matrix

from berkdemand.dataio import Dataset

__all__ = ["LogLogFit", "ols_loglog", "qr_loglog", "check_loss"]


@dataclass(frozen=True)
class LogLogFit:
    """Coefficients of log_q on (1, log_p, log_y); tau None means OLS."""

    intercept: float
    price_coef: float
    income_coef: float
    tau: float | None = None
    stderr: tuple[float, float, float] | None = None

    @property
    def coefs(self) -> np.ndarray:
        return np.array([self.intercept, self.price_coef, self.income_coef])


def _design(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    x = np.column_stack([np.ones(len(data)), data.log_p, data.log_y])
    return x, data.log_q


def ols_loglog(data: Dataset) -> LogLogFit:
    """Least squares with classical standard errors.

    Raises on rank deficiency (collinear design).
    """
    if len(data) < 3:
        raise ValueError("OLS needs at least 3 observations")
    x, y = _design(data)
    coef, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    if rank < 3:
        raise ValueError("design matrix is rank deficient")
    resid = y - x @ coef
    dof = len(y) - 3
    if dof > 0:
        sigma2 = float(resid @ resid) / dof
        cov = sigma2 * np.linalg.inv(x.T @ x)
        stderr = tuple(float(v) for v in np.sqrt(np.diag(cov)))
    else:
        stderr = None
    return LogLogFit(
        intercept=float(coef[0]),
        price_coef=float(coef[1]),
        income_coef=float(coef[2]),
        stderr=stderr,
    )


def check_loss(resid: np.ndarray, tau: float) -> float:
    """sum of rho_tau over residuals."""
    resid = np.asarray(resid, dtype=float)
    return float(np.sum(resid * (tau - (resid < 0))))


def qr_loglog(data: Dataset, tau: float) -> LogLogFit:
    """Check-loss minimizer via the standard LP split of the residuals.

    minimize tau * 1'u + (1 - tau) * 1'v  s.t.  X b + u - v = y, u, v >= 0.
    The HiGHS solution is a global optimum of the convex objective.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie strictly in (0, 1), got {tau}")
    x, y = _design(data)
    if np.linalg.matrix_rank(x) < 3:
        raise ValueError("design matrix is rank deficient")
    n = len(y)
    eye = sp_eye(n, format="csc")
    a_eq = sp_hstack([csc_matrix(x), eye, -eye], format="csc")
    cost = np.concatenate([np.zeros(3), np.full(n, tau), np.full(n, 1.0 - tau)])
    bounds = [(None, None)] * 3 + [(0, None)] * (2 * n)
    res = linprog(cost, A_eq=a_eq, b_eq=y, bounds=bounds, method="highs")
    if not res.success:
        raise RuntimeError(f"quantile regression LP failed: {res.message}")
    b = res.x[:3]
    return LogLogFit(
        intercept=float(b[0]),
        price_coef=float(b[1]),
        income_coef=float(b[2]),
        tau=tau,
    )
