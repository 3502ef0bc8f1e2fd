"""seqbench: a reproducible desk-scale benchmark for sequential recommenders."""

__version__ = "0.1.0"
