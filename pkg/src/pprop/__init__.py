"""Personalized propagation of neural predictions (PPNP / APPNP) for node classification."""

__version__ = "0.1.0"
