"""Channel-statistics prediction with uncalibrated ray-traced digital twins."""

__version__ = "0.1.0"
