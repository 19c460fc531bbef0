"""Step-timing emulation, frame-tag traces and optimal aperiodic sampling."""

__version__ = "0.1.0"
