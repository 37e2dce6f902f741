"""Voltage phasor / voltage magnitude control on radial feeders."""

__version__ = "0.1.0"
