"""Powershift control and simulation for a hydrostatic dual-clutch drivetrain."""

__version__ = "0.1.0"
