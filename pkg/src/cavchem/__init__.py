"""Finite-dimensional cavity-QED chemistry simulator with state-space reduction."""

__version__ = "0.1.0"
