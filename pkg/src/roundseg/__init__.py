"""roundseg: multi-round referential segmentation on synthetic scenes."""

__version__ = "0.1.0"
