"""Two-stage conditional-GAN framework for crack segmentation."""

__version__ = "0.1.0"
