"""Neural system identification with factorized what/where readouts."""

__version__ = "0.1.0"
