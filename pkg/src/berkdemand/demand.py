"""Quantile demand functions from the fitted inverse: inversion in the
quantity argument, demand curves on price grids, and elasticities.

Inversion uses bisection on the quantity box, which the monotonicity
constraints make reliable: the fitted function is non-decreasing in
quantity, so the root is bracketed whenever the target rank lies in the
attained range; otherwise the boundary value is returned with a flag.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from berkdemand.basis import _cheb_all, _cheb_all_deriv, affine_map, basis_deriv
from berkdemand.dataio import HouseholdRecord

__all__ = [
    "QuantileDemandCurve",
    "invert_g",
    "invert_g_full",
    "demand_curve",
    "elasticities",
    "budget_share",
    "quantile_demand_log",
]

BISECT_TOL = 1e-9


@dataclass(frozen=True)
class QuantileDemandCurve:
    """One demand curve: log quantity against log price at fixed rank/income."""

    tau: float
    log_income: float
    log_prices: np.ndarray
    log_quantities: np.ndarray
    out_of_range: np.ndarray  # True where the rank was clamped to the box edge

    def rows(self) -> list[tuple[float, float, float, float]]:
        """(tau, log_income, log_price, log_quantity) rows for CSV export."""
        return [
            (self.tau, self.log_income, float(p), float(q))
            for p, q in zip(self.log_prices, self.log_quantities)
        ]


def _q_coeffs(model, p: float, y: float) -> np.ndarray:
    """Collapse theta to 1-d Chebyshev coefficients in the quantity map."""
    spec = model.basis
    tp = affine_map(p, spec.box.p_lo, spec.box.p_hi)
    ty = affine_map(y, spec.box.y_lo, spec.box.y_hi)
    theta3 = np.asarray(model.theta).reshape(spec.deg_p + 1, spec.deg_y + 1, spec.deg_q + 1)
    return np.einsum("a,b,abc->c", _cheb_all(spec.deg_p, tp), _cheb_all(spec.deg_y, ty), theta3)


def _eval_q(coeffs: np.ndarray, spec, q):
    tq = affine_map(q, spec.box.q_lo, spec.box.q_hi)
    return _cheb_all(len(coeffs) - 1, tq) @ coeffs


def invert_g_full(model, p: float, y: float, tau: float, tol: float = BISECT_TOL) -> tuple[float, bool]:
    """(log quantity, clamped flag) solving model rank = tau at (p, y)."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie strictly in (0, 1), got {tau}")
    spec = model.basis
    q_lo, q_hi = spec.box.q_lo, spec.box.q_hi
    coeffs = _q_coeffs(model, float(p), float(y))
    f_lo = float(_eval_q(coeffs, spec, q_lo)) - tau
    f_hi = float(_eval_q(coeffs, spec, q_hi)) - tau
    if f_lo >= 0.0:
        return q_lo, f_lo > 0.0
    if f_hi <= 0.0:
        return q_hi, f_hi < 0.0
    lo, hi = q_lo, q_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if float(_eval_q(coeffs, spec, mid)) - tau <= 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), False


def invert_g(model, p: float, y: float, tau: float, tol: float = BISECT_TOL) -> float:
    """Quantile demand in logs at (log price p, log income y, rank tau)."""
    return invert_g_full(model, p, y, tau, tol)[0]


def quantile_demand_log(model, log_p, log_y, tau: float):
    """Protocol dispatch: sieve models (theta + basis) are inverted
    numerically; anything else must expose demand_log directly."""
    if hasattr(model, "theta") and hasattr(model, "basis"):
        return invert_g(model, float(log_p), float(log_y), tau)
    return model.demand_log(log_p, log_y, tau)


def demand_curve(model, tau: float, y: float, p_grid) -> QuantileDemandCurve:
    """Invert the model at each grid price (log scale) for one income."""
    p_grid = np.asarray(p_grid, dtype=float)
    qs = np.empty_like(p_grid)
    flags = np.zeros(p_grid.shape, dtype=bool)
    for i, p in enumerate(p_grid):
        qs[i], flags[i] = invert_g_full(model, float(p), float(y), tau)
    return QuantileDemandCurve(
        tau=tau, log_income=float(y), log_prices=p_grid, log_quantities=qs, out_of_range=flags
    )


def elasticities(model, p: float, y: float, tau: float) -> tuple[float, float]:
    """(price, income) elasticities at (p, y, tau) by implicit differentiation.

    With everything in logs, dG/dp = -(dGinv/dp) / (dGinv/dq) is the
    price elasticity and the income analog likewise.
    """
    q, clamped = invert_g_full(model, p, y, tau)
    if clamped:
        warnings.warn(f"tau={tau} outside the attained range at ({p}, {y}); elasticity at box edge")
    theta = np.asarray(model.theta)
    dq = float(basis_deriv(model.basis, p, y, q, "q") @ theta)
    if dq <= 0.0:
        raise ValueError(f"degenerate point: quantity derivative {dq:.3e} at ({p}, {y}, {q})")
    dp = float(basis_deriv(model.basis, p, y, q, "p") @ theta)
    dy = float(basis_deriv(model.basis, p, y, q, "y") @ theta)
    return -dp / dq, -dy / dq


def budget_share(record: HouseholdRecord) -> float:
    """exp(log_p + log_q - log_y); warns above 1 (the empirical sample
    drops such rows)."""
    share = float(np.exp(record.log_p + record.log_q - record.log_y))
    if share > 1.0:
        warnings.warn(f"budget share {share:.3f} exceeds 1")
    return share
