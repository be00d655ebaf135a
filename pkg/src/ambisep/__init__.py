"""Direction-conditioned source separation in the spherical-harmonic domain."""

__version__ = "0.1.0"
