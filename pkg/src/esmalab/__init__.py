"""Easy-sample matching attacks and local-density diagnostics on toy data."""

__version__ = "0.1.0"
