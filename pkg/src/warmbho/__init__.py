"""Warm-started Bayesian hyperparameter optimization with learned dataset meta-features."""

__version__ = "0.1.0"
