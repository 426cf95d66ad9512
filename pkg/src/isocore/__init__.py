"""Learned spectral operators whose eigenbasis makes observed symmetries act as isometries."""

__version__ = "0.1.0"
