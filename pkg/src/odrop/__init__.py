"""Selective prediction for tabular data under dataset shift.

Two-stage pipeline: score test records with out-of-distribution detectors,
reject records above a threshold, and evaluate the retained predictions with
rejection curves, rank correlation, shift statistics, and SHAP clustering.
"""

__version__ = "0.1.0"
