"""Character-level data-to-text generation with a copy mechanism and switching GRUs."""

__version__ = "0.1.0"
