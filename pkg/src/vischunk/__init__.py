"""Instance chunk proposals from superpixels: growth, list prediction and evaluation."""

__version__ = "0.1.0"
