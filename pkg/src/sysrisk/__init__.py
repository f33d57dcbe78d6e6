"""Systemic risk in interbank networks: clearing, Monte Carlo costs and allocation search."""

__version__ = "0.1.0"
