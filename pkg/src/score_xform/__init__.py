"""Score transport across bijections, transformed reverse SDEs and sliced score matching."""

__version__ = "0.1.0"
