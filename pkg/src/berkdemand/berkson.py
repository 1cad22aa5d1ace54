"""Berkson error distributions and the quadrature expectation operator.

The observed price is a market average; the transaction price adds a
normal disturbance whose scale varies by region.  Expectations over that
disturbance are taken with a Gauss-Hermite rule transformed to the
probabilist convention (weights sum to one), which makes the likelihood
integral exact for the polynomial integrands generated by the Chebyshev
sieve whenever ``2 * n_nodes - 1`` is at least the price degree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["BerksonSpec", "QuadratureRule", "make_rule", "expect_eps", "gauss_hermite_rule"]


@dataclass(frozen=True)
class BerksonSpec:
    """Per-region error scales plus the size of the expectation rule.

    ``sigma_by_region`` maps region tags to standard deviations of the
    within-market log-price dispersion; a value of 0 means no Berkson
    error for that region (the degenerate single-node rule).
    ``global_factor`` rescales every sigma, which is how sensitivity
    sweeps (0.8x / 1.2x) are expressed.
    """

    sigma_by_region: dict[str, float]
    n_nodes: int = 21
    family: str = "normal"
    global_factor: float = 1.0

    def __post_init__(self) -> None:
        if self.family != "normal":
            raise ValueError(f"unsupported error family {self.family!r}")
        if not self.sigma_by_region:
            raise ValueError("sigma_by_region must contain at least one region")
        for region, sigma in self.sigma_by_region.items():
            if not np.isfinite(sigma) or sigma < 0:
                raise ValueError(f"sigma for region {region!r} must be >= 0, got {sigma}")
        if self.n_nodes < 1 or self.n_nodes % 2 == 0:
            raise ValueError(f"n_nodes must be an odd integer >= 1, got {self.n_nodes}")
        if not np.isfinite(self.global_factor) or self.global_factor < 0:
            raise ValueError(f"global_factor must be >= 0, got {self.global_factor}")

    def sigma(self, region: str) -> float:
        if region not in self.sigma_by_region:
            raise KeyError(f"unknown region {region!r}; known: {sorted(self.sigma_by_region)}")
        return self.sigma_by_region[region] * self.global_factor

    @property
    def regions(self) -> tuple[str, ...]:
        return tuple(sorted(self.sigma_by_region))

    @property
    def max_sigma(self) -> float:
        return max(self.sigma_by_region.values()) * self.global_factor

    def zeroed(self) -> "BerksonSpec":
        """Exact-zero copy: the no-Berkson estimator uses this spec."""
        return BerksonSpec(
            sigma_by_region={r: 0.0 for r in self.sigma_by_region},
            n_nodes=self.n_nodes,
            family=self.family,
            global_factor=1.0,
        )

    def scaled(self, factor: float) -> "BerksonSpec":
        return BerksonSpec(
            sigma_by_region=dict(self.sigma_by_region),
            n_nodes=self.n_nodes,
            family=self.family,
            global_factor=self.global_factor * factor,
        )

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "sigma_by_region": dict(sorted(self.sigma_by_region.items())),
            "n_nodes": self.n_nodes,
            "global_factor": self.global_factor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BerksonSpec":
        return cls(
            sigma_by_region={str(k): float(v) for k, v in d["sigma_by_region"].items()},
            n_nodes=int(d.get("n_nodes", 21)),
            family=str(d.get("family", "normal")),
            global_factor=float(d.get("global_factor", 1.0)),
        )


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and probabilist weights discretizing the error expectation."""

    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.shape != weights.shape or nodes.ndim != 1:
            raise ValueError("nodes and weights must be 1-d arrays of equal length")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)


def gauss_hermite_rule(sigma: float, n_nodes: int) -> QuadratureRule:
    """Rule for E over N(0, sigma^2): eps = sigma * sqrt(2) * t, w / sqrt(pi).

    sigma = 0 returns the degenerate single-node rule {0} with weight 1.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if n_nodes < 1 or n_nodes % 2 == 0:
        raise ValueError(f"n_nodes must be an odd integer >= 1, got {n_nodes}")
    if sigma == 0.0:
        return QuadratureRule(nodes=np.array([0.0]), weights=np.array([1.0]))
    t, w = np.polynomial.hermite.hermgauss(n_nodes)
    nodes = sigma * np.sqrt(2.0) * t
    weights = w / np.sum(w)  # exact normalization instead of 1/sqrt(pi)
    return QuadratureRule(nodes=nodes, weights=weights)


def make_rule(spec: BerksonSpec, region: str) -> QuadratureRule:
    """Expectation rule for one region (degenerate when its sigma is 0)."""
    return gauss_hermite_rule(spec.sigma(region), spec.n_nodes)


def expect_eps(rule: QuadratureRule, g) -> float:
    """Apply the rule to a function of the error: sum of w_i * g(node_i)."""
    vals = np.asarray(g(rule.nodes), dtype=float)
    if vals.shape != rule.nodes.shape:
        vals = np.broadcast_to(vals, rule.nodes.shape)
    if not np.all(np.isfinite(vals)):
        bad = rule.nodes[~np.isfinite(vals)]
        raise ValueError(
            f"integrand not finite at nodes {bad[:3]}...; check the domain box configuration"
        )
    return float(np.dot(rule.weights, vals))
