"""Hidden-unit selection for one-hidden-layer MLP regression by penalized least squares."""

__version__ = "0.1.0"
