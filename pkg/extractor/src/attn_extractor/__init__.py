"""Attention bundle extraction from locally served vision-language models."""

__version__ = "0.1.0"
