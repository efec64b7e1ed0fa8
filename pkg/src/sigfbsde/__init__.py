"""Path-signature solvers for path-dependent forward-backward SDEs."""

__version__ = "0.1.0"
