"""Frequency-aware detection of sequential facial edits, plus its desk-scale harness."""

__version__ = "0.1.0"
