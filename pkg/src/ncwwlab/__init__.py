"""Numerical laboratory for noncommutative weighted ergodic averages on
finite-dimensional tracial algebras."""
__version__ = "0.1.0"
