"""Incremental aggregated proximal and augmented Lagrangian methods."""
