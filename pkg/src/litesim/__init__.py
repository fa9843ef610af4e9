"""Roofline simulator for LLM inference on clusters of full-size and split ("lite") GPUs."""

__version__ = "0.1.0"
