"""Parking-space occupancy classification at very low image resolutions."""

__version__ = "0.1.0"
