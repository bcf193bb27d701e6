"""Simulation lab for random circle maps f = alpha*xi(x+omega) + a (mod 1)."""

__version__ = "0.1.0"
