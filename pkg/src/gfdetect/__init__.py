"""Grant-free activity detection over time/frequency-varying channels."""

__version__ = "0.1.0"
