"""Measure LLM inference time and GPU energy, and estimate API-side energy from time per token."""

__version__ = "0.1.0"
