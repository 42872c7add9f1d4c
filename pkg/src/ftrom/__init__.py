"""Feature-tracking projection-based reduced-order models for space-time Burgers."""

__version__ = "0.1.0"
