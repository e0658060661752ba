"""Berezin Lab - Berezin-Toeplitz quantization and balanced metrics on CP^1"""

__version__ = "0.1.0"
