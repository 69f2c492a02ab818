"""Movable-element IRS assisted integrated sensing and communication."""

__version__ = "0.1.0"
