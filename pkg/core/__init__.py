"""Numerical core: choice functions, closed-loop dynamics, design, bounds and learning."""
