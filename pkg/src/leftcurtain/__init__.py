"""Shadows, left-curtain couplings and curtain-driven peacock processes on the line."""

from .measures import (
    DomainError,
    Measure,
    atomize_dyadic,
    cdf,
    combine,
    moments,
    potential,
    quantile,
    restrict_quantile,
    rightmost_submeasure,
    leftmost_submeasure,
    top_down,
    wasserstein,
)

__version__ = "0.1.0"
