"""tabforge: build and benchmark transferable generative models for tables."""

__version__ = "0.1.0"
