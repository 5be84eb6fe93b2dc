"""Learning-to-rank models for cross-sectional momentum portfolios."""

__version__ = "0.1.0"
