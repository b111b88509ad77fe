"""Desk-scale numerics for the dilute Bose gas lower bound."""
__version__ = "0.1.0"
