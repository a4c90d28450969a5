"""Uncertainty-aware stacked neural networks.

A base classifier reports predictive entropy from MC dropout, a deep
ensemble, or both; a meta-model learns to flag each base prediction as
trustworthy or not; the trust-informed confusion matrix scores the pair.
"""

__version__ = "0.1.0"
