"""Quality control for volumetric segmentation outputs."""

__version__ = "0.1.0"
