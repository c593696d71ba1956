"""Multi-horizon probabilistic forecasting of weekly store sales with a Temporal Fusion Transformer."""

__version__ = "0.1.0"
