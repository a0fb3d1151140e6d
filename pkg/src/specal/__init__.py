"""Emulator-based Bayesian calibration of plasma emission spectra."""

__version__ = "0.1.0"
