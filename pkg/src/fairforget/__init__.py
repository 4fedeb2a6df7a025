"""Fairness-targeted selective-forgetting attacks on small tabular classifiers."""

__version__ = "0.1.0"
