"""Upscaled electrokinetic transport in charged porous media with MSA corrections."""

__version__ = "0.1.0"
