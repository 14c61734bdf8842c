"""Emotion transfer for speech through a vector-quantised emotion codebook."""

__version__ = "0.1.0"
