"""Dual-branch RWKV/convolution super-resolution with wavelet-domain losses."""

__version__ = "0.1.0"
