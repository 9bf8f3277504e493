"""Deterministic virtual-time simulator and benchmark harness for
verifier-steered, plan-conditioned policies on a symbolic manipulation
world."""

__version__ = "0.1.0"
