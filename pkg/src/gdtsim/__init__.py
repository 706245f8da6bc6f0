"""Digital-twin closed-loop management simulator for multicast short video."""

__version__ = "0.1.0"
