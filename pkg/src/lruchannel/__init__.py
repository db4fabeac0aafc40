"""Cache replacement-state timing channel simulator."""
__version__ = "0.1.0"
