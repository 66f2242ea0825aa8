"""Deterministic federated-learning simulator with layerwise robust aggregation."""

__version__ = "0.1.0"
