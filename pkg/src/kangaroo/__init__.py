"""Kangaroo-inspired robot: musculoskeletal leg, elastic tail and jump simulations."""

__version__ = "0.1.0"
