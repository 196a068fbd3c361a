"""Compression and adversarial robustness toolkit for I/Q modulation classifiers."""

__version__ = "0.1.0"
