"""Audio-visual emotion recognition with safe cross-attention and gated fusion."""

__version__ = "0.1.0"
