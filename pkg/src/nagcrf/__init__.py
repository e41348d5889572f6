"""Non-autoregressive generation with a transformer encoder and a low-rank CRF head."""

__version__ = "0.1.0"
