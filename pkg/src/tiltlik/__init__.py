"""Tilted-likelihood estimation for conditional moment restriction models.

The package distorts a parametric conditional base density by exponential
tilting so that it satisfies conditional moment restrictions exactly, then
estimates parameters by maximizing the resulting tilted likelihood.  It
ships the inner projection solver, the outer estimator with common random
numbers, benchmark estimators (CU-GMM, ETEL), asymptotic covariance blocks,
counterfactual analysis under the tilted measure, and a reproducible Monte
Carlo harness, all behind a command line interface.
"""

__version__ = "0.1.0"
