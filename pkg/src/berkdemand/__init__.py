"""Quantile demand estimation with Berkson price errors.

A numpy/scipy library for estimating nonseparable quantile demand
functions when the price covariate carries Berkson measurement error
(the observed price is a market average; the transaction price is the
average plus independent noise).  The estimator is a constrained sieve
maximum likelihood on a tensor Chebyshev basis, with monotonicity,
bound, and optional Slutsky shape constraints.  On top of the fitted
model the package computes quantile demand curves, elasticities,
deadweight-loss welfare measures, and a kernel-based exogeneity test
with simulated weighted-chi-square critical values.

Subpackages
-----------
dataio     delimited-file ingestion, quantity trimming, summary stats
basis      tensor Chebyshev sieve and its exact partial derivatives
berkson    per-region error scales and the Gauss-Hermite expectation
estimator  constrained sieve MLE, constraints, bootstrap
demand     numerical inversion to demand curves and elasticities
welfare    expenditure-function ODE and deadweight loss
exogtest   kernel exogeneity statistic, eigenvalues, critical values
synth      synthetic data generators with known ground truth
baseline   log-log OLS and check-loss quantile regression
cli        batch pipeline driven by a JSON config
"""

from berkdemand import (
    baseline,
    basis,
    berkson,
    dataio,
    demand,
    estimator,
    exogtest,
    synth,
    welfare,
)

__all__ = [
    "baseline",
    "basis",
    "berkson",
    "dataio",
    "demand",
    "estimator",
    "exogtest",
    "synth",
    "welfare",
]

__version__ = "0.1.0"
