"""Benchmark construction, human review, and dual-view evaluation."""
