"""Event-camera structured light: simulation, depth, spectral recovery and evaluation."""

__version__ = "0.1.0"
