"""Handwritten-numeral CNN with two-phase transfer learning across scripts."""

__version__ = "0.1.0"
