"""Quasi-ML estimation and expected-Hessian LM inference for the panel AR(1) model."""
__version__ = "0.1.0"
