"""Desk-scale benchmark harness for self-supervised class-incremental learning."""

__version__ = "0.1.0"
