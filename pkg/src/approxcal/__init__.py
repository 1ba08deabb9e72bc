"""Bit-accurate simulation of approximate StEFCal calibration.

Submodules
----------
fixedpoint
    Signed fixed-point arithmetic with explicit formats.
datagen
    Synthetic calibration problems and problem files.
stefcal
    The calibration loop, its metrics and the double-precision backend.
errormodel
    Statistical error injection at kernel outputs.
resilience
    Parameter sweeps, acceptance frontiers and kernel load shares.
accel
    Fixed-point datapath backends, two-core scheduling, energy and DSE.
cli
    Command-line entry point.
"""

__version__ = "0.1.0"
