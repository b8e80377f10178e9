"""Amputation-based evaluation of multiple imputation and IPW strategies."""

__version__ = "0.1.0"
