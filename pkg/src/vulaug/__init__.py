"""Augments C vulnerability-detection corpora with retrieval-guided LLM generation."""

__version__ = "0.1.0"
