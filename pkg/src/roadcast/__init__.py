"""Multi-scale road traffic forecasting and suggestion toolkit."""

__version__ = "0.1.0"
