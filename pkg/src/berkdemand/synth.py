"""Synthetic demand data with known ground truth.

The generators draw from nonseparable models whose inverse demand
function is polynomial in price, so every downstream quantity (ranks,
conditional CDFs under price noise, elasticities, expenditure paths for
the log-log case) has a closed form.  These closed forms are the
oracles against which the sieve estimator is verified; the rest of the
package never sees them.

Families
--------
linear           log q = b0 + h(u) + b1 * (p + e) + b2 * y
quadratic-price  adds g * (p + e)^2, the canonical case where ignoring
                 the price noise biases the fit by roughly g * sigma^2
custom           free coefficients (b0, b1, b2, g)

The unobserved rank u is Uniform(0, 1); h maps it into the quantity
noise.  With the default ``noise="normal"`` h(u) = s * Phi^(-1)(u), so
the rank function is the smooth sigmoid Phi((q - b0 - b1 p - b2 y -
g p^2) / s) and log demand is log-log linear with constant elasticities
(b1, b2) at every quantile, the same model class as the parametric
baselines.  With ``noise="uniform"`` h(u) = u and the rank function is
the ramp q - b0 - b1 p - b2 y - g p^2 clipped to [0, 1]; oracle
comparisons then restrict to points where no clipping occurs.

The optional instrument is w = p - xi + nu with nu independent noise;
endogeneity (really: instrument invalidity, which is what the
exogeneity statistic tests) mixes the rank with the xi component at
weight rho, so rho = 0 is the null hypothesis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import norm

from berkdemand.basis import BasisSpec, basis_eval
from berkdemand.dataio import Dataset, HouseholdRecord

__all__ = [
    "DgpSpec",
    "DgpTruth",
    "LevelsLinearDemand",
    "OracleReport",
    "simulate",
    "oracle_check",
    "empirical_cdf_agreement",
]

_FAMILIES = ("linear", "quadratic-price", "custom")


@dataclass(frozen=True)
class DgpSpec:
    """Parameters of one synthetic draw.

    ``sigma_by_region`` plays the same role as in estimation: records
    get region tags uniformly at random and their price noise uses the
    region's scale.  ``rho`` in [-1, 1] controls the violation of the
    instrument condition; 0 means the null holds.
    """

    n: int
    seed: int
    family: str = "linear"
    beta0: float = 4.0
    beta1: float = -0.8
    beta2: float = 0.3
    gamma: float = 0.0
    noise: str = "normal"
    noise_scale: float = 0.14
    sigma_by_region: dict[str, float] = field(default_factory=lambda: {"all": 0.05})
    price_range: tuple[float, float] = (0.0, 0.7)
    income_range: tuple[float, float] = (10.5, 11.2)
    rho: float = 0.0
    with_instrument: bool = True
    xi_sd: float = 0.05
    nu_sd: float = 0.02

    def __post_init__(self) -> None:
        if self.family not in _FAMILIES:
            raise ValueError(f"family must be one of {_FAMILIES}, got {self.family!r}")
        if self.family == "linear" and self.gamma != 0.0:
            raise ValueError("linear family requires gamma = 0")
        if self.family == "quadratic-price" and self.gamma == 0.0:
            raise ValueError("quadratic-price family requires gamma != 0")
        if self.noise not in ("normal", "uniform"):
            raise ValueError(f"noise must be 'normal' or 'uniform', got {self.noise!r}")
        if self.noise == "normal" and self.noise_scale <= 0:
            raise ValueError(f"normal noise requires noise_scale > 0, got {self.noise_scale}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [-1, 1], got {self.rho}")
        if self.rho != 0.0 and (not self.with_instrument or self.xi_sd <= 0):
            raise ValueError("rho != 0 requires an instrument with xi_sd > 0")
        for name, (lo, hi) in (("price_range", self.price_range), ("income_range", self.income_range)):
            if not lo < hi:
                raise ValueError(f"{name} must satisfy lo < hi, got {(lo, hi)}")
        if not self.sigma_by_region or any(s < 0 for s in self.sigma_by_region.values()):
            raise ValueError("sigma_by_region must be nonempty with nonnegative scales")


def _clip01(x):
    return np.minimum(1.0, np.maximum(0.0, x))


def _normal_partial_moments(a, b, sigma: float):
    """(M0, M1, M2): integrals of (1, e, e^2) * N(0, sigma^2) density on [a, b]."""
    za, zb = a / sigma, b / sigma
    m0 = norm.cdf(zb) - norm.cdf(za)
    # At infinite endpoints the pdf terms vanish.
    fa, fb = np.isfinite(a), np.isfinite(b)
    pa = norm.pdf(np.where(fa, za, 0.0)) / sigma * fa
    pb = norm.pdf(np.where(fb, zb, 0.0)) / sigma * fb
    ta = np.where(fa, a, 0.0) * pa
    tb = np.where(fb, b, 0.0) * pb
    m1 = sigma**2 * (pa - pb)
    m2 = sigma**2 * m0 + sigma**2 * (ta - tb)
    return m0, m1, m2


def _clipped_linear_mean(c, b1, sigma) -> np.ndarray:
    """Vectorized E over e ~ N(0, sigma^2) of clip01(c + b1 e)."""
    c = np.asarray(c, dtype=float)
    s = np.abs(np.asarray(b1, dtype=float)) * np.asarray(sigma, dtype=float)
    degenerate = s == 0.0
    s_safe = np.where(degenerate, 1.0, s)
    alpha = (0.0 - c) / s_safe
    beta = (1.0 - c) / s_safe
    inside = c * (norm.cdf(beta) - norm.cdf(alpha)) + s_safe * (norm.pdf(alpha) - norm.pdf(beta))
    smooth = inside + 1.0 - norm.cdf(beta)
    return np.where(degenerate, _clip01(c), smooth)


def _clipped_quadratic_mean(c: float, b1: float, b2: float, sigma: float) -> float:
    """E over e ~ N(0, sigma^2) of clip01(c + b1 e + b2 e^2)."""
    if sigma == 0.0:
        return float(_clip01(c))
    roots: list[float] = []
    for level in (0.0, 1.0):
        # c + b1 e + b2 e^2 = level
        if b2 != 0.0:
            disc = b1 * b1 - 4.0 * b2 * (c - level)
            if disc > 0:
                r = math.sqrt(disc)
                roots.extend([(-b1 - r) / (2 * b2), (-b1 + r) / (2 * b2)])
        elif b1 != 0.0:
            roots.append((level - c) / b1)
    cuts = [-math.inf] + sorted(roots) + [math.inf]
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi <= lo:
            continue
        mid = _segment_midpoint(lo, hi)
        v = c + b1 * mid + b2 * mid * mid
        if v >= 1.0:
            m0, _, _ = _normal_partial_moments(lo, hi, sigma)
            total += float(m0)
        elif v > 0.0:
            m0, m1, m2 = _normal_partial_moments(lo, hi, sigma)
            total += float(c * m0 + b1 * m1 + b2 * m2)
    return min(1.0, max(0.0, total))


def _segment_midpoint(lo: float, hi: float) -> float:
    if math.isinf(lo) and math.isinf(hi):
        return 0.0
    if math.isinf(lo):
        return hi - 1.0
    if math.isinf(hi):
        return lo + 1.0
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class DgpTruth:
    """Ground-truth handle returned alongside a simulated dataset.

    ``draws`` holds the realized latent variables (rank u, price noise,
    instrument components) when the handle came from ``simulate``; they
    exist for diagnostics and tests only.
    """

    spec: DgpSpec
    draws: dict | None = field(default=None, repr=False, compare=False)

    # -- structural functions ------------------------------------------------

    def _location(self, p, y):
        s = self.spec
        return s.beta0 + s.beta1 * np.asarray(p, dtype=float) \
            + s.beta2 * np.asarray(y, dtype=float) + s.gamma * np.asarray(p, dtype=float) ** 2

    def _noise_quantile(self, u):
        u = np.asarray(u, dtype=float)
        if self.spec.noise == "uniform":
            return u
        return self.spec.noise_scale * norm.ppf(u)

    def g(self, p, y, u):
        """True log demand at rank u (price and income in logs)."""
        return self._location(p, y) + self._noise_quantile(u)

    def g_inv(self, p, y, q):
        """True rank function.  For uniform noise this is the unclipped
        ramp (a CDF only where it lies in [0, 1]); for normal noise it
        is the sigmoid, a CDF everywhere."""
        v = np.asarray(q, dtype=float) - self._location(p, y)
        if self.spec.noise == "uniform":
            return v
        return norm.cdf(v / self.spec.noise_scale)

    def g_inv_clipped(self, p, y, q):
        return _clip01(self.g_inv(p, y, q))

    def inv_valid(self, p, y, q, margin: float = 0.0):
        """True where the rank function is a valid CDF value (the oracle
        comparison set).  Everywhere for normal noise; the no-clipping
        band for uniform noise."""
        v = self.g_inv(p, y, q)
        if self.spec.noise == "normal":
            return np.ones(np.shape(v), dtype=bool)
        return (v >= margin) & (v <= 1.0 - margin)

    def demand_log(self, log_p, log_y, tau: float):
        """Quantile demand in logs; same protocol as a fitted model."""
        return self.g(log_p, log_y, tau)

    def elasticities(self, log_p) -> tuple[np.ndarray, float]:
        """(price, income) elasticities of the log-log demand at log price p."""
        s = self.spec
        return s.beta1 + 2.0 * s.gamma * np.asarray(log_p, dtype=float), s.beta2

    # -- Berkson-mixed conditional CDF ----------------------------------------

    def sigma_of(self, regions) -> np.ndarray:
        table = self.spec.sigma_by_region
        return np.array([table[r] for r in regions])

    def cdf_berkson(self, p, y, q, sigma) -> np.ndarray:
        """E over the price noise of the rank: P(Q <= q | p, y).

        Elementwise over broadcast inputs; ``sigma`` may be scalar or
        per-point.  Exact closed forms except the quadratic family with
        normal noise, which uses a dense Gauss-Hermite rule on a smooth
        bounded integrand.
        """
        s = self.spec
        p, y, q, sig = np.broadcast_arrays(
            np.asarray(p, dtype=float),
            np.asarray(y, dtype=float),
            np.asarray(q, dtype=float),
            np.asarray(sigma, dtype=float),
        )
        c = np.asarray(q, dtype=float) - self._location(p, y)
        b1 = -(s.beta1 + 2.0 * s.gamma * p)
        if s.noise == "normal":
            if s.gamma == 0.0:
                # normal location shift: convolution stays normal
                total = np.sqrt(s.noise_scale**2 + (b1 * sig) ** 2)
                out = norm.cdf(c / total)
            else:
                t, w = np.polynomial.hermite.hermgauss(101)
                w = w / np.sum(w)
                eps = np.sqrt(2.0) * sig[..., None] * t
                vals = norm.cdf(
                    (c[..., None] + b1[..., None] * eps - s.gamma * eps**2) / s.noise_scale
                )
                out = vals @ w
        elif s.gamma == 0.0:
            out = _clipped_linear_mean(c, b1, sig)
        else:
            out = np.empty(c.shape)
            flat = zip(c.ravel(), b1.ravel(), sig.ravel())
            out_flat = out.ravel()
            for i, (ci, b1i, si) in enumerate(flat):
                out_flat[i] = _clipped_quadratic_mean(float(ci), float(b1i), -s.gamma, float(si))
        return out if out.shape else float(out)

    # -- closed-form welfare for the log-log (gamma = 0) family ---------------

    def expenditure(self, p0: float, p1: float, y0: float, tau: float) -> float:
        """Exact e(p1) along the compensated path for the gamma = 0 family.

        Solves de/dp = C p^b1 e^b2 with e(p0) = y0 in closed form
        (prices in levels).  Raises for the quadratic family.
        """
        s = self.spec
        if s.gamma != 0.0:
            raise ValueError("closed-form expenditure exists only for gamma = 0")
        if y0 <= 0 or p0 <= 0 or p1 <= 0:
            raise ValueError("prices and initial expenditure must be positive")
        coef = math.exp(s.beta0 + float(self._noise_quantile(tau)))
        if s.beta1 == -1.0:
            price_term = math.log(p1 / p0)
        else:
            k = 1.0 + s.beta1
            price_term = (p1**k - p0**k) / k
        if s.beta2 == 1.0:
            return y0 * math.exp(coef * price_term)
        m = 1.0 - s.beta2
        inner = y0**m + m * coef * price_term
        if inner <= 0:
            raise ValueError("expenditure path left the positive domain")
        return inner ** (1.0 / m)

    def analytic_dwl(self, p0: float, p1: float, y0: float, tau: float) -> float:
        """Exact deadweight loss e(p1) - y0 - (p1 - p0) H(p1, e(p1))."""
        e1 = self.expenditure(p0, p1, y0, tau)
        h1 = math.exp(float(self.demand_log(math.log(p1), math.log(e1), tau)))
        return e1 - y0 - (p1 - p0) * h1

    # -- exact sieve representation -------------------------------------------

    def inject_theta(self, spec: BasisSpec) -> np.ndarray:
        """Coefficients reproducing the unclipped rank function exactly.

        Only the uniform-noise families are polynomial; requires
        deg_q >= 1, deg_p >= deg of the price polynomial, deg_y >= 1.
        Used to test zero-discrepancy oracle checks.
        """
        s = self.spec
        if s.noise != "uniform":
            raise ValueError("only the uniform-noise rank function is a polynomial")
        need_p = 2 if s.gamma != 0.0 else 1
        if spec.deg_q < 1 or spec.deg_y < 1 or spec.deg_p < need_p:
            raise ValueError("basis too small to represent the true rank function")
        box = spec.box
        # Power-basis coefficients in the mapped coordinate t of each dim.
        mid_p, half_p = 0.5 * (box.p_lo + box.p_hi), 0.5 * (box.p_hi - box.p_lo)
        mid_y, half_y = 0.5 * (box.y_lo + box.y_hi), 0.5 * (box.y_hi - box.y_lo)
        mid_q, half_q = 0.5 * (box.q_lo + box.q_hi), 0.5 * (box.q_hi - box.q_lo)
        # -b1*p - g*p^2 as a polynomial in t_p:
        p_poly = np.polynomial.polynomial.polymul(
            [mid_p, half_p], [1.0]
        )  # p(t) = mid + half * t
        contrib_p = -s.beta1 * np.array([mid_p, half_p])
        if s.gamma != 0.0:
            contrib_p = np.polynomial.polynomial.polyadd(
                contrib_p, -s.gamma * np.polynomial.polynomial.polymul(p_poly, p_poly)
            )
        cheb_p = np.polynomial.chebyshev.poly2cheb(contrib_p)
        cheb_y = np.polynomial.chebyshev.poly2cheb(-s.beta2 * np.array([mid_y, half_y]))
        cheb_q = np.polynomial.chebyshev.poly2cheb(np.array([mid_q, half_q]))
        theta = np.zeros(spec.size)
        theta[spec.index_of(0, 0, 0)] = (
            cheb_p[0] + cheb_y[0] + cheb_q[0] - s.beta0
        )
        for a in range(1, len(cheb_p)):
            theta[spec.index_of(a, 0, 0)] = cheb_p[a]
        theta[spec.index_of(0, 1, 0)] = cheb_y[1]
        theta[spec.index_of(0, 0, 1)] = cheb_q[1]
        return theta


@dataclass(frozen=True)
class LevelsLinearDemand:
    """Income-effect-free levels demand H(p) = a - b p, as a model-like object.

    Implements the quantile-demand protocol (``demand_log``) so the
    welfare routines accept it directly; the Harberger triangle
    b (p1 - p0)^2 / 2 is its exact deadweight loss.
    """

    a: float
    b: float

    def demand_log(self, log_p, log_y, tau: float):
        h = self.a - self.b * np.exp(np.asarray(log_p, dtype=float))
        if np.any(h <= 0):
            raise ValueError("levels demand must stay positive on the path")
        return np.log(h)

    def harberger_dwl(self, p0: float, p1: float) -> float:
        return 0.5 * self.b * (p1 - p0) ** 2


def simulate(spec: DgpSpec) -> tuple[Dataset, DgpTruth]:
    """Draw one dataset; records carry observed prices only.

    Deterministic for a fixed spec (single generator, fixed draw order).
    """
    _check_monotone(DgpTruth(spec=spec))
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    p = rng.uniform(*spec.price_range, size=n)
    y = rng.uniform(*spec.income_range, size=n)
    region_names = sorted(spec.sigma_by_region)
    region_idx = rng.integers(0, len(region_names), size=n)
    sigma = np.array([spec.sigma_by_region[region_names[k]] for k in region_idx])
    eps = rng.standard_normal(n) * sigma
    xi = rng.standard_normal(n) * spec.xi_sd
    nu = rng.standard_normal(n) * spec.nu_sd
    z_u = rng.standard_normal(n)
    if spec.rho != 0.0:
        z_mix = spec.rho * (xi / spec.xi_sd) + math.sqrt(1.0 - spec.rho**2) * z_u
    else:
        z_mix = z_u
    u = norm.cdf(z_mix)
    truth = DgpTruth(spec=spec, draws={"u": u, "eps": eps, "xi": xi, "nu": nu})
    q = np.asarray(truth.g(p + eps, y, u))
    w = p - xi + nu if spec.with_instrument else None
    records = tuple(
        HouseholdRecord(
            log_q=float(q[i]),
            log_p=float(p[i]),
            log_y=float(y[i]),
            instrument=None if w is None else float(w[i]),
            region=region_names[region_idx[i]],
        )
        for i in range(n)
    )
    return Dataset(records=records), truth


def _check_monotone(truth: DgpTruth, n_u: int = 101, n_py: int = 5) -> None:
    s = truth.spec
    ps = np.linspace(*s.price_range, n_py)
    ys = np.linspace(*s.income_range, n_py)
    us = np.linspace(0.001, 0.999, n_u)
    for p in ps:
        for y in ys:
            vals = truth.g(p, y, us)
            if np.any(np.diff(vals) <= 0):
                raise ValueError("spec rejected: true demand not increasing in the rank")


@dataclass(frozen=True)
class OracleReport:
    """Discrepancy metrics between a fitted model and the truth."""

    max_abs: float
    rms: float
    n_points: int
    price_elasticity_error: float
    income_elasticity_error: float


def oracle_check(
    truth: DgpTruth,
    model,
    n_grid: tuple[int, int, int] = (9, 5, 17),
    interior: float = 0.8,
    tau: float = 0.5,
) -> OracleReport:
    """Compare a fitted rank function against the truth on a box grid.

    The grid covers the central ``interior`` fraction of the model's
    box in every dimension and keeps only points where the true rank
    function is unclipped.  Elasticity errors are measured at the box
    center through the model's implied quantile demand.
    """
    from berkdemand import demand as demand_mod

    spec = model.basis
    box = spec.box
    lo = np.array([box.p_lo, box.y_lo, box.q_lo])
    hi = np.array([box.p_hi, box.y_hi, box.q_hi])
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * interior
    axes = [np.linspace(mid[d] - half[d], mid[d] + half[d], n_grid[d]) for d in range(3)]
    pg, yg, qg = np.meshgrid(*axes, indexing="ij")
    mask = truth.inv_valid(pg, yg, qg)
    if not np.any(mask):
        raise ValueError("no unclipped grid points; domain boxes are incompatible")
    fitted_vals = basis_eval(spec, pg[mask], yg[mask], qg[mask]) @ np.asarray(model.theta)
    true_vals = truth.g_inv(pg[mask], yg[mask], qg[mask])
    diff = fitted_vals - true_vals
    p_mid, y_mid = mid[0], mid[1]
    e_p, e_y = demand_mod.elasticities(model, p_mid, y_mid, tau)
    te_p, te_y = truth.elasticities(p_mid)
    return OracleReport(
        max_abs=float(np.max(np.abs(diff))),
        rms=float(np.sqrt(np.mean(diff**2))),
        n_points=int(mask.sum()),
        price_elasticity_error=float(e_p - te_p),
        income_elasticity_error=float(e_y - te_y),
    )


def empirical_cdf_agreement(
    truth: DgpTruth,
    dataset: Dataset,
    n_p_bins: int = 4,
    n_y_bins: int = 4,
    z_probs: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
    band: float = 2.0,
) -> dict:
    """Check the mixture identity P(Q <= z | p, y) = E over noise of the rank.

    Households are split into price-by-income quantile bins; within each
    bin and for each z, the empirical frequency of Q <= z is compared
    with the average exact conditional probability.  A cell passes when
    the gap is within ``band`` binomial standard errors.
    """
    p, y, q = dataset.log_p, dataset.log_y, dataset.log_q
    sig = truth.sigma_of(dataset.regions)
    z_values = np.quantile(q, z_probs)
    p_edges = np.quantile(p, np.linspace(0, 1, n_p_bins + 1))
    y_edges = np.quantile(y, np.linspace(0, 1, n_y_bins + 1))
    p_bin = np.clip(np.searchsorted(p_edges, p, side="right") - 1, 0, n_p_bins - 1)
    y_bin = np.clip(np.searchsorted(y_edges, y, side="right") - 1, 0, n_y_bins - 1)
    n_pass = 0
    n_cells = 0
    worst = 0.0
    for bp in range(n_p_bins):
        for by in range(n_y_bins):
            sel = (p_bin == bp) & (y_bin == by)
            m = int(sel.sum())
            if m == 0:
                continue
            probs = truth.cdf_berkson(p[sel], y[sel], z_values[:, None], sig[sel])
            expected = probs.mean(axis=1)
            se = np.sqrt(np.sum(probs * (1.0 - probs), axis=1)) / m
            observed = (q[sel][None, :] <= z_values[:, None]).mean(axis=1)
            gap = np.abs(observed - expected)
            ok = gap <= band * se + 1e-12
            n_pass += int(ok.sum())
            n_cells += len(z_values)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(se > 0, gap / se, np.where(gap > 0, np.inf, 0.0))
            worst = max(worst, float(np.max(ratio)))
    return {
        "n_cells": n_cells,
        "n_within_band": n_pass,
        "fraction_within_band": n_pass / n_cells if n_cells else float("nan"),
        "worst_se_ratio": worst,
    }
