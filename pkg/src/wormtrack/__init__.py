"""wormtrack: seam-cell untwisting and gated assignment tracking for embryo nuclei."""

__version__ = "0.1.0"
