"""Presentation layer for seqbench results: markdown tables and sweep figures.

This package is a read-only consumer of the results CSV contract; it never
recomputes a metric, only selects, marks, and draws what the file contains.
"""

__version__ = "0.1.0"
