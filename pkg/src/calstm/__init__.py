"""Context-aware LSTM trajectory forecasting."""

__version__ = "0.1.0"
