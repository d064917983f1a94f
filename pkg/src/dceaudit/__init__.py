"""Discrete choice experiment audits of decision-making agents."""

__version__ = "0.1.0"
