"""Unsupervised intrusion detection toolkit for CAN bus signal streams."""

__version__ = "0.1.0"
