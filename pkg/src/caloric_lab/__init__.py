"""Numerical laboratory for wave maps into hyperbolic space and their caloric gauge."""
import os

# The bundled TBB is too old for numba; OpenMP gives the same per-row scheduling.
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

__version__ = "0.1.0"
