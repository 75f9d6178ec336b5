"""Adversarial threat-model lab for a JPEG-compression ensemble defense."""

__version__ = "0.1.0"
