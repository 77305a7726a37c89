"""Curiosity-weighted serendipitous recommendation."""
