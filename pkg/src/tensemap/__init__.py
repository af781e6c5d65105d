"""Behavioral repertoire discovery for a vibrating tensegrity robot."""
__version__ = "0.1.0"
