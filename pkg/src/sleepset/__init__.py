"""Multi-modal sleep stage classification from variable sets of signals."""

__version__ = "0.1.0"
