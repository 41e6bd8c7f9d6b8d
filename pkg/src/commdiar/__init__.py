"""Speaker-segment clustering as graph community detection."""

__version__ = "0.1.0"
