"""Bayesian population pharmacokinetics for the one-compartment oral model."""

__version__ = "0.1.0"
