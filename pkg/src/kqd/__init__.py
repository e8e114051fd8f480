"""Classical laboratory for Krylov quantum diagonalization of Heisenberg models."""

__version__ = "0.1.0"
