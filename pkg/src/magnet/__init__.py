"""Multi-level attention graph network for high-resolution spatial transcriptomics."""

__version__ = "0.1.0"
