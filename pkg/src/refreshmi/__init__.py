"""Multiple imputation for two-wave categorical panels with a refreshment sample."""

__version__ = "0.1.0"
