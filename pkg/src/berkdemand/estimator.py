"""Constrained sieve maximum likelihood for the inverse demand function.

The model density of log quantity for household i is

    d_i(theta) = sum_j theta_j * E_eps[ dPsi_j/dq (P_i + eps, Y_i, Q_i) ],

so the log likelihood ``sum_i log d_i(theta)`` is a sum of logs of
linear functions of theta: concave.  The shape constraints
(non-decreasing in quantity with a small positive floor, values in
[0, 1] on a box grid, optional Slutsky rows) are linear in theta, so
fitting is a convex program over a polyhedron.

The solver is a primal log-barrier Newton path-follower written for
exactly this structure: the barrier terms have the same
log-of-affine form as the objective, each Newton step is a small
least-squares solve, and the central path is unique, which makes the
returned optimum independent of the starting point.  The expectation
over the price error uses each household's regional quadrature rule;
with the defaults the rule is exact for the polynomial integrands, so
the only approximations in the whole fit are floating point and the
barrier gap.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from berkdemand.basis import BasisSpec, DomainBox, basis_deriv, basis_eval
from berkdemand.berkson import BerksonSpec, make_rule
from berkdemand.dataio import Dataset
from berkdemand.seeding import derive_rng

__all__ = [
    "ConstraintSet",
    "SlutskyRegion",
    "FitOptions",
    "FittedModel",
    "BootstrapResult",
    "InfeasibleError",
    "g_inv",
    "default_basis",
    "log_likelihood",
    "log_likelihood_grad",
    "build_constraints",
    "default_start",
    "fit",
    "bootstrap",
    "save_model",
    "load_model",
]

logger = logging.getLogger(__name__)

DEFAULT_GRID = (9, 5, 17)
DELTA_FLOOR = 1e-6


class InfeasibleError(ValueError):
    """Theta violates the feasibility needed to evaluate or start the fit."""


# ---------------------------------------------------------------------------
# model surface
# ---------------------------------------------------------------------------


def g_inv(theta: np.ndarray, basis: BasisSpec, p, y, q):
    """Sieve value sum_j theta_j Psi_j(p, y, q)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (basis.size,):
        raise ValueError(f"theta must have length {basis.size}, got {theta.shape}")
    return basis_eval(basis, p, y, q) @ theta


def default_basis(data: Dataset, berkson: BerksonSpec, deg_p: int = 3, deg_y: int = 3, deg_q: int = 7) -> BasisSpec:
    """Default sieve: data-range box padded by 4 max Berkson sd in price."""
    box = DomainBox.from_data(
        data.log_p, data.log_y, data.log_q, price_pad=4.0 * berkson.max_sigma
    )
    return BasisSpec(box=box, deg_p=deg_p, deg_y=deg_y, deg_q=deg_q)


# ---------------------------------------------------------------------------
# likelihood pieces
# ---------------------------------------------------------------------------


def _quadrature_points(data: Dataset, berkson: BerksonSpec):
    """Flattened quadrature-shifted evaluation points, record order preserved.

    Returns (points (sumK, 3), weights (sumK,), offsets (n,)) where
    offsets index the start of each household's segment.
    """
    rules = {r: make_rule(berkson, r) for r in sorted(set(data.regions))}
    nodes = [rules[r].nodes for r in data.regions]
    weights = [rules[r].weights for r in data.regions]
    counts = np.array([len(v) for v in nodes])
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    p = np.repeat(data.log_p, counts) + np.concatenate(nodes)
    y = np.repeat(data.log_y, counts)
    q = np.repeat(data.log_q, counts)
    return np.column_stack([p, y, q]), np.concatenate(weights), offsets


def _design_matrix(data: Dataset, basis: BasisSpec, berkson: BerksonSpec):
    """(A, quad_points): A[i, j] = E_eps[dPsi_j/dq] at household i."""
    points, w, offsets = _quadrature_points(data, berkson)
    rows = basis_deriv(basis, points[:, 0], points[:, 1], points[:, 2], "q")
    a = np.add.reduceat(rows * w[:, None], offsets, axis=0)
    return a, points


def log_likelihood(theta: np.ndarray, data: Dataset, basis: BasisSpec, berkson: BerksonSpec) -> float:
    """Sum over households of log of the model density at the data.

    Raises InfeasibleError naming the first household whose implied
    density is not positive.
    """
    a, _ = _design_matrix(data, basis, berkson)
    return _loglik_from_design(np.asarray(theta, dtype=float), a)


def log_likelihood_grad(theta: np.ndarray, data: Dataset, basis: BasisSpec, berkson: BerksonSpec) -> np.ndarray:
    """Analytic gradient: A' (1 / d); the design matrix A is theta-free."""
    a, _ = _design_matrix(data, basis, berkson)
    d = a @ np.asarray(theta, dtype=float)
    _check_density(d)
    return a.T @ (1.0 / d)


def _loglik_from_design(theta: np.ndarray, a: np.ndarray) -> float:
    d = a @ theta
    _check_density(d)
    return float(np.sum(np.log(d)))


def _check_density(d: np.ndarray) -> None:
    if np.any(d <= 0.0):
        i = int(np.argmin(d))
        raise InfeasibleError(
            f"implied density non-positive at household {i} (value {d[i]:.3e}); "
            "theta violates the monotonicity floor"
        )


# ---------------------------------------------------------------------------
# constraints
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlutskyRegion:
    """Selection box for Slutsky rows; defaults follow the empirical setup:
    log price in [0.2, 0.36], income 20k-90k USD, quantity between the
    10th and 90th percentile of the unconditional demand data."""

    price_lo: float = 0.2
    price_hi: float = 0.36
    income_lo_usd: float = 20_000.0
    income_hi_usd: float = 90_000.0
    q_pct_lo: float = 0.10
    q_pct_hi: float = 0.90

    def select(self, data: Dataset) -> np.ndarray:
        q = data.log_q
        q_lo, q_hi = np.quantile(q, [self.q_pct_lo, self.q_pct_hi])
        return (
            (data.log_p >= self.price_lo)
            & (data.log_p <= self.price_hi)
            & (data.log_y >= math.log(self.income_lo_usd))
            & (data.log_y <= math.log(self.income_hi_usd))
            & (q >= q_lo)
            & (q <= q_hi)
        )


@dataclass(frozen=True)
class ConstraintSet:
    """Linear inequality rows of the fit, stored as evaluation points.

    mono_points cover every data-quadrature point (so the log arguments
    of the likelihood stay positive) plus a regular box grid;
    bound_points carry both 0 <= value and value <= 1 rows.
    """

    mono_points: np.ndarray = field(repr=False)
    bound_points: np.ndarray = field(repr=False)
    slutsky_points: np.ndarray = field(repr=False)
    slutsky_shares: np.ndarray = field(repr=False)
    delta_floor: float = DELTA_FLOOR
    regime: str = "unconstrained-shape"

    @property
    def n_rows(self) -> int:
        return len(self.mono_points) + 2 * len(self.bound_points) + len(self.slutsky_points)

    def summary(self) -> dict:
        return {
            "regime": self.regime,
            "delta_floor": self.delta_floor,
            "n_mono": int(len(self.mono_points)),
            "n_bound": int(len(self.bound_points)),
            "n_slutsky": int(len(self.slutsky_points)),
        }


def _box_grid(box: DomainBox, grid: tuple[int, int, int]) -> np.ndarray:
    axes = [
        np.linspace(box.p_lo, box.p_hi, grid[0]),
        np.linspace(box.y_lo, box.y_hi, grid[1]),
        np.linspace(box.q_lo, box.q_hi, grid[2]),
    ]
    pg, yg, qg = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([pg.ravel(), yg.ravel(), qg.ravel()])


def budget_shares(data: Dataset) -> np.ndarray:
    """exp(log_p + log_q - log_y) per record."""
    return np.exp(data.log_p + data.log_q - data.log_y)


def build_constraints(
    data: Dataset,
    basis: BasisSpec,
    berkson: BerksonSpec,
    regime: str = "unconstrained-shape",
    grid: tuple[int, int, int] = DEFAULT_GRID,
    delta_floor: float = DELTA_FLOOR,
    slutsky_region: SlutskyRegion | None = None,
) -> ConstraintSet:
    """Assemble the constraint rows for a fit on this data.

    regime "unconstrained-shape" carries monotonicity and bound rows
    only; "slutsky" adds one row per household selected by the region
    box.  An empty Slutsky selection is a warning, not an error.
    """
    if regime not in ("unconstrained-shape", "slutsky"):
        raise ValueError(f"unknown regime {regime!r}")
    quad_points, _, _ = _quadrature_points(data, berkson)
    grid_points = _box_grid(basis.box, grid)
    mono_points = np.vstack([quad_points, grid_points])
    if regime == "slutsky":
        mask = (slutsky_region or SlutskyRegion()).select(data)
        if not np.any(mask):
            warnings.warn("slutsky regime selected but no household falls in the region box")
        slutsky_points = np.column_stack([data.log_p[mask], data.log_y[mask], data.log_q[mask]])
        slutsky_shares = budget_shares(data)[mask]
    else:
        slutsky_points = np.empty((0, 3))
        slutsky_shares = np.empty(0)
    return ConstraintSet(
        mono_points=mono_points,
        bound_points=grid_points,
        slutsky_points=slutsky_points,
        slutsky_shares=slutsky_shares,
        delta_floor=delta_floor,
        regime=regime,
    )


def constraint_matrices(cs: ConstraintSet, basis: BasisSpec) -> tuple[np.ndarray, np.ndarray]:
    """Rows (G, h) with every constraint in the form G theta >= h.

    Row order: monotonicity, lower bounds, upper bounds (negated),
    Slutsky.
    """
    mono = basis_deriv(basis, cs.mono_points[:, 0], cs.mono_points[:, 1], cs.mono_points[:, 2], "q")
    vals = basis_eval(basis, cs.bound_points[:, 0], cs.bound_points[:, 1], cs.bound_points[:, 2])
    blocks = [mono, vals, -vals]
    rhs = [
        np.full(len(mono), cs.delta_floor),
        np.zeros(len(vals)),
        np.full(len(vals), -1.0),
    ]
    if len(cs.slutsky_points):
        sp = cs.slutsky_points
        rows = basis_deriv(basis, sp[:, 0], sp[:, 1], sp[:, 2], "p") + cs.slutsky_shares[
            :, None
        ] * basis_deriv(basis, sp[:, 0], sp[:, 1], sp[:, 2], "y")
        blocks.append(rows)
        rhs.append(np.zeros(len(rows)))
    return np.vstack(blocks), np.concatenate(rhs)


def constraint_report(theta: np.ndarray, cs: ConstraintSet, basis: BasisSpec) -> dict:
    """Worst slacks of each constraint family at theta (>= 0 means satisfied)."""
    g, h = constraint_matrices(cs, basis)
    s = g @ np.asarray(theta, dtype=float) - h
    n_mono = len(cs.mono_points)
    n_bound = len(cs.bound_points)
    out = {
        "min_mono_slack": float(np.min(s[:n_mono])),
        "min_lower_bound_slack": float(np.min(s[n_mono : n_mono + n_bound])),
        "min_upper_bound_slack": float(np.min(s[n_mono + n_bound : n_mono + 2 * n_bound])),
    }
    if len(cs.slutsky_points):
        out["min_slutsky_slack"] = float(np.min(s[n_mono + 2 * n_bound :]))
    return out


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitOptions:
    """Solver controls.  The barrier phase follows the central path to a
    duality gap of gap_tol (in log-likelihood units) and identifies the
    active rows; the polish phase then solves the equality-constrained
    problem on that set to full precision, so the convergence flag
    certifies stationarity below kkt_tol in the sup norm with
    constraint violation within 1e-8."""

    theta0: np.ndarray | None = None
    barrier_t0: float = 1.0
    barrier_mu: float = 20.0
    gap_tol: float = 1e-4
    newton_tol: float = 1e-10
    max_newton: int = 80
    kkt_tol: float = 1e-6
    max_stages: int = 40
    polish: bool = True
    active_tol: float = 1e-6


@dataclass
class FittedModel:
    """Estimated coefficients plus everything needed to evaluate the model."""

    theta: np.ndarray
    basis: BasisSpec
    berkson: BerksonSpec
    constraints: ConstraintSet | None
    loglik: float
    converged: bool
    diagnostics: dict = field(default_factory=dict)

    def g_inv(self, p, y, q):
        return g_inv(self.theta, self.basis, p, y, q)

    def demand_log(self, log_p, log_y, tau: float):
        from berkdemand import demand  # local import avoids a cycle

        return demand.invert_g(self, log_p, log_y, tau)


def default_start(basis: BasisSpec, level: float = 0.02, p_slope: float = 0.005) -> np.ndarray:
    """Strictly feasible start: nearly affine in quantity, within (0, 1).

    The value runs from ``level`` to ``1 - level`` across the quantity
    box (constant positive q-derivative), plus a small positive price
    slope so Slutsky rows start strictly inside the feasible region.
    """
    theta = np.zeros(basis.size)
    slope = 1.0 - 2.0 * level
    theta[basis.index_of(0, 0, 0)] = level + slope / 2.0
    theta[basis.index_of(0, 0, 1)] = slope / 2.0
    if basis.deg_p >= 1:
        theta[basis.index_of(1, 0, 0)] = p_slope * (basis.box.p_hi - basis.box.p_lo) / 2.0
    return theta


def fit(
    data: Dataset,
    basis: BasisSpec,
    berkson: BerksonSpec,
    constraints: ConstraintSet | None = None,
    options: FitOptions | None = None,
) -> FittedModel:
    """Maximize the constrained log likelihood.

    The barrier parameter schedule is fixed (not adapted to the start),
    so two fits from different strictly feasible starting points follow
    the same central path and return the same coefficients up to the
    Newton tolerance.
    """
    options = options or FitOptions()
    if constraints is None:
        constraints = build_constraints(data, basis, berkson)
    a, _ = _design_matrix(data, basis, berkson)
    g, h = constraint_matrices(constraints, basis)
    m = len(h)
    theta = np.asarray(options.theta0, dtype=float) if options.theta0 is not None else default_start(basis)
    slack = g @ theta - h
    if np.min(slack) <= 0.0:
        raise InfeasibleError(
            f"starting point violates {int(np.sum(slack <= 0))} constraint rows "
            f"(worst slack {np.min(slack):.3e}); provide a strictly feasible theta0"
        )

    t = options.barrier_t0
    total_newton = 0
    for _ in range(options.max_stages):
        theta, iters = _newton_center(a, g, h, theta, t, options)
        total_newton += iters
        if m / t <= options.gap_tol:
            break
        t *= options.barrier_mu

    if options.polish:
        theta, kkt, n_active = _polish(a, g, h, theta, options)
    else:
        slack = g @ theta - h
        lam = 1.0 / (t * slack)
        kkt = float(np.max(np.abs(a.T @ (1.0 / (a @ theta)) + g.T @ lam)))
        n_active = int(np.sum(slack < options.active_tol))
    d = a @ theta
    loglik = float(np.sum(np.log(d)))
    slack = g @ theta - h
    violation = max(0.0, -float(np.min(slack)))
    gap = m / t
    converged = kkt < options.kkt_tol and violation <= 1e-8
    logger.info(
        "fit: logL=%.6f gap=%.2e kkt=%.2e active=%d newton_iters=%d converged=%s",
        loglik, gap, kkt, n_active, total_newton, converged,
    )
    return FittedModel(
        theta=theta,
        basis=basis,
        berkson=berkson,
        constraints=constraints,
        loglik=loglik,
        converged=bool(converged),
        diagnostics={
            "kkt_residual": kkt,
            "dual_gap": gap,
            "barrier_t": t,
            "newton_iterations": total_newton,
            "n_active": n_active,
            "max_violation": violation,
            "regime": constraints.regime,
        },
    )


def _newton_step(a_scaled, g_scaled, t, grad):
    """Solve (t As'As + Gs'Gs) v = grad; Cholesky with Jacobi scaling,
    least squares on the stacked system as the ill-conditioned fallback."""
    hess = t * (a_scaled.T @ a_scaled) + g_scaled.T @ g_scaled
    scale = 1.0 / np.sqrt(np.maximum(np.diag(hess), 1e-300))
    hs = hess * scale[:, None] * scale[None, :]
    try:
        cho = scipy.linalg.cho_factor(hs, lower=True, check_finite=False)
        return scale * scipy.linalg.cho_solve(cho, scale * grad, check_finite=False)
    except scipy.linalg.LinAlgError:
        stacked = np.vstack([math.sqrt(t) * a_scaled, g_scaled])
        rhs = np.concatenate(
            [np.full(a_scaled.shape[0], math.sqrt(t)), np.ones(g_scaled.shape[0])]
        )
        return scipy.linalg.lstsq(stacked, rhs, lapack_driver="gelsy")[0]


def _newton_center(a, g, h, theta, t, options: FitOptions):
    """Damped Newton for F_t = t * sum log(A theta) + sum log(G theta - h)."""
    for it in range(options.max_newton):
        d = a @ theta
        s = g @ theta - h
        inv_d = 1.0 / d
        inv_s = 1.0 / s
        grad = t * (a.T @ inv_d) + g.T @ inv_s
        v = _newton_step(inv_d[:, None] * a, inv_s[:, None] * g, t, grad)
        decrement = float(grad @ v)
        if decrement <= 2.0 * options.newton_tol:
            return theta, it
        av = a @ v
        gv = g @ v
        alpha = 1.0
        neg = gv < 0
        if np.any(neg):
            alpha = min(alpha, 0.99 * float(np.min(-s[neg] / gv[neg])))
        negd = av < 0
        if np.any(negd):
            alpha = min(alpha, 0.99 * float(np.min(-d[negd] / av[negd])))
        # Backtracking on the exact increment, computed via log1p so the
        # Armijo test keeps full precision even when t is huge.
        target = 0.25 * decrement
        for _ in range(60):
            ratio_d = alpha * av * inv_d
            ratio_s = alpha * gv * inv_s
            if np.min(ratio_d) > -1.0 and np.min(ratio_s) > -1.0:
                gain = t * float(np.sum(np.log1p(ratio_d))) + float(np.sum(np.log1p(ratio_s)))
                if gain >= alpha * target:
                    break
            alpha *= 0.5
        theta = theta + alpha * v
    return theta, options.max_newton


def _polish(a, g, h, theta, options: FitOptions):
    """Active-set refinement after the barrier phase.

    Alternates two kinds of rounds until the KKT residual certifies
    optimality: pin every near-binding row as an equality and maximize
    the log likelihood on that subspace, then fit nonnegative
    multipliers by NNLS; rows the multiplier fit does not need are
    released for one round so the iterate can move off them.  The
    active sets here are heavily rank-deficient (whole grid edges bind
    at once), which is why multipliers come from NNLS rather than a
    sign heuristic.  Returns (theta, kkt residual, active row count).
    """
    from scipy.optimize import nnls

    best = (math.inf, theta, 0)
    keep = None
    last_ll = -math.inf
    stalled = 0
    for _ in range(24):
        slack = g @ theta - h
        active = slack < options.active_tol
        if keep is not None:
            active &= keep
            keep = None
        g_act, h_act = g[active], h[active]
        if g_act.shape[0]:
            resid = h_act - g_act @ theta
            theta = theta + g_act.T @ np.linalg.lstsq(g_act @ g_act.T, resid, rcond=None)[0]
            z = scipy.linalg.null_space(g_act)
        else:
            z = np.eye(g.shape[1])
        if z.shape[1]:
            theta = _reduced_newton(a, g, h, theta, z, active, options)
        d = a @ theta
        grad = a.T @ (1.0 / d)
        if g_act.shape[0]:
            lam, _ = nnls(g_act.T, -grad)
            resid_kkt = grad + g_act.T @ lam
        else:
            lam = np.zeros(0)
            resid_kkt = grad
        kkt = float(np.max(np.abs(resid_kkt)))
        if kkt < best[0]:
            best = (kkt, theta, int(np.sum(active)))
        if kkt < options.kkt_tol * 0.5:
            return theta, kkt, int(np.sum(active))
        if g_act.shape[0]:
            keep_rows = np.zeros(g.shape[0], dtype=bool)
            keep_rows[np.flatnonzero(active)[lam > 1e-12]] = True
            keep = keep_rows
        loglik = float(np.sum(np.log(d)))
        stalled = stalled + 1 if loglik <= last_ll + 1e-12 * (1.0 + abs(loglik)) else 0
        if stalled >= 3:
            break
        last_ll = max(last_ll, loglik)
    return best[1], best[0], best[2]


def _reduced_newton(a, g, h, theta, z, active, options: FitOptions):
    """Newton on logL restricted to theta + span(z), keeping the
    inactive inequalities and the densities strictly positive."""
    az = a @ z
    g_in, h_in = g[~active], h[~active]
    gz_in = g_in @ z
    for _ in range(60):
        d = a @ theta
        inv_d = 1.0 / d
        grad_w = az.T @ inv_d
        if float(np.max(np.abs(grad_w), initial=0.0)) <= 0.02 * options.kkt_tol:
            break
        hw = (az * inv_d[:, None] ** 2).T @ az
        step = np.linalg.lstsq(hw, grad_w, rcond=None)[0]
        decrement = float(grad_w @ step)
        if not np.isfinite(decrement) or decrement <= 0.0:
            break
        av = az @ step
        sv = gz_in @ step
        s_in = g_in @ theta - h_in
        alpha = 1.0
        neg = av < 0
        if np.any(neg):
            alpha = min(alpha, 0.99 * float(np.min(-d[neg] / av[neg])))
        neg = sv < 0
        if np.any(neg):
            alpha = min(alpha, 0.99 * float(np.min(-s_in[neg] / sv[neg])))
        target = 0.25 * decrement
        for _ in range(60):
            ratio = alpha * av * inv_d
            if np.min(ratio, initial=0.0) > -1.0 and float(np.sum(np.log1p(ratio))) >= alpha * target:
                break
            alpha *= 0.5
        theta = theta + alpha * (z @ step)
    return theta


# ---------------------------------------------------------------------------
# bootstrap
# ---------------------------------------------------------------------------


@dataclass
class BootstrapResult:
    """Per-replicate statistics (or models) plus recorded failures."""

    replicates: list
    failures: list[tuple[int, str]]
    n_reps: int
    seed: int

    def percentile_interval(self, level: float = 0.90) -> tuple[float, float]:
        values = np.asarray([r for r in self.replicates if r is not None], dtype=float)
        if values.size == 0:
            raise ValueError("no successful replicates")
        alpha = (1.0 - level) / 2.0
        lo, hi = np.quantile(values, [alpha, 1.0 - alpha])
        return float(lo), float(hi)


def _bootstrap_indices(n: int, seed: int, rep: int) -> np.ndarray:
    rng = derive_rng(seed, "estimator", "bootstrap", rep)
    return rng.integers(0, n, size=n)


def bootstrap(
    data: Dataset,
    basis: BasisSpec,
    berkson: BerksonSpec,
    n_reps: int,
    seed: int,
    regime: str = "unconstrained-shape",
    grid: tuple[int, int, int] = DEFAULT_GRID,
    delta_floor: float = DELTA_FLOOR,
    slutsky_region: SlutskyRegion | None = None,
    options: FitOptions | None = None,
    statistic=None,
    workers: int = 1,
) -> BootstrapResult:
    """Nonparametric bootstrap: resample households, refit, collect stats.

    Replicate r resamples n households with replacement using a seed
    derived deterministically from (seed, r), then refits with the same
    configuration.  ``statistic`` maps a FittedModel to the stored
    value (default: the model itself).  Fit failures are recorded per
    replicate instead of aborting the run.
    """
    if n_reps < 1:
        raise ValueError(f"n_reps must be >= 1, got {n_reps}")
    n = len(data)
    jobs = [
        (data, basis, berkson, regime, grid, delta_floor, slutsky_region, options,
         _bootstrap_indices(n, seed, r))
        for r in range(n_reps)
    ]
    if workers > 1:
        import concurrent.futures

        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_bootstrap_one, jobs))
    else:
        raw = [_bootstrap_one(job) for job in jobs]
    replicates: list = []
    failures: list[tuple[int, str]] = []
    for r, (model, err) in enumerate(raw):
        if err is not None:
            failures.append((r, err))
            replicates.append(None)
        else:
            replicates.append(statistic(model) if statistic is not None else model)
    return BootstrapResult(replicates=replicates, failures=failures, n_reps=n_reps, seed=seed)


def _bootstrap_one(job):
    data, basis, berkson, regime, grid, delta_floor, slutsky_region, options, idx = job
    sample = Dataset(records=tuple(data.records[i] for i in idx))
    try:
        cs = build_constraints(
            sample, basis, berkson, regime=regime, grid=grid,
            delta_floor=delta_floor, slutsky_region=slutsky_region,
        )
        model = fit(sample, basis, berkson, cs, options)
        return model, None
    except Exception as exc:  # recorded, not fatal
        return None, f"{type(exc).__name__}: {exc}"


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def save_model(model: FittedModel, path) -> None:
    """Write the fitted model as JSON (constraints kept as a summary)."""
    payload = {
        "theta": [float(x) for x in model.theta],
        "basis": model.basis.to_dict(),
        "berkson": model.berkson.to_dict(),
        "constraints_summary": model.constraints.summary() if model.constraints else None,
        "loglik": model.loglik,
        "converged": model.converged,
        "diagnostics": model.diagnostics,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> FittedModel:
    with open(path) as fh:
        payload = json.load(fh)
    diagnostics = dict(payload.get("diagnostics", {}))
    if payload.get("constraints_summary"):
        diagnostics["constraints_summary"] = payload["constraints_summary"]
    return FittedModel(
        theta=np.asarray(payload["theta"], dtype=float),
        basis=BasisSpec.from_dict(payload["basis"]),
        berkson=BerksonSpec.from_dict(payload["berkson"]),
        constraints=None,
        loglik=float(payload["loglik"]),
        converged=bool(payload["converged"]),
        diagnostics=diagnostics,
    )
