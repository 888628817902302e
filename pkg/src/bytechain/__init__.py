"""Byte-level transformer embeddings for binary analysis, trained as a
progressive teacher-student chain over a task tree, with a synthetic
toy-ISA corpus providing exact ground truth for every task."""

__version__ = "0.1.0"
