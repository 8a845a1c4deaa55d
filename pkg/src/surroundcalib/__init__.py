"""Photometric extrinsic refinement for four-camera surround-view rigs."""

__version__ = "0.1.0"
