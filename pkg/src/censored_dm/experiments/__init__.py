"""Simulation, scoring and convergence diagnostics."""
