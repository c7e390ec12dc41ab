"""Mono-static MIMO-OTFS radar simulation and parameter estimation."""

__version__ = "0.1.0"
