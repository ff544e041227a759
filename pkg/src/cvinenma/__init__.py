"""1-truncated C-vine copula mixed models for network meta-analysis of diagnostic tests."""
__version__ = "0.1.0"
