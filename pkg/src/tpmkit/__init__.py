"""Neural and classical temporal point processes for event streams in tracking data."""

__version__ = "0.1.0"
