"""Secure strong coordination over a multiple-access wiretap channel."""

__version__ = "0.1.0"
