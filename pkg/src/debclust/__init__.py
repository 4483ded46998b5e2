"""Joint debiased contrastive representation learning and deep clustering."""

__version__ = "0.1.0"
