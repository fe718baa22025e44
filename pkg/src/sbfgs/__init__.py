"""Stochastic BFGS preconditioners for SGD, with an experiment harness."""

__version__ = "0.1.0"
