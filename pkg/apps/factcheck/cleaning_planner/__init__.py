"""Cleaning Planner application.

This module provides budgeted planning of which uncertain data values to clean before a
claim is checked against them.
"""

__version__ = "0.1.0"
