"""Coupled HDG and boundary-integral solver for time-harmonic EM scattering."""

__version__ = "0.1.0"
