"""Learned multi-layer garment simulation with patch particles and rotation-equivalent attention."""

__version__ = "0.1.0"
