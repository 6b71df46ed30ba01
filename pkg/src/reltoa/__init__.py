"""Arrival-time densities for relativistic single-particle states."""
