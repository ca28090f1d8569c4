"""Feed-forward super-resolution of Gaussian splatting scenes."""

__version__ = "0.1.0"
