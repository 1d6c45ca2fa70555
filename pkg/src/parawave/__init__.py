"""Multiscale CEM/POD solver for the parabolic wave approximation in layered media."""

__version__ = "0.1.0"
