"""Chance-constrained polynomial feedback synthesis along flow tubes via moment relaxations."""

__version__ = "0.1.0"
