"""Independent scalar references for data on a single geodesic.

For phi = exp(base, u e1) every solver in the package reduces to the scalar
problem for u. The references below solve the semi-discrete scalar problems
(five-point Laplacian, zero values outside the active region) exactly in
time by a type-I sine transform of the active block.
"""
import numpy as np
from scipy.fft import dstn, idstn

from .grid_fields import GridSpec


def _eigen(grid: GridSpec) -> np.ndarray:
    N = grid.hi - grid.lo
    k = np.arange(1, N + 1)
    lam1 = (2.0 - 2.0 * np.cos(np.pi * k / (N + 1))) / grid.h ** 2
    return lam1[:, None] + lam1[None, :]


def _fwd(u, grid):
    lo, hi = grid.lo, grid.hi
    return dstn(np.asarray(u, dtype=float)[lo:hi, lo:hi], type=1, norm="ortho")


def _inv(a, grid):
    out = np.zeros((grid.n, grid.n))
    out[grid.lo:grid.hi, grid.lo:grid.hi] = idstn(a, type=1, norm="ortho")
    return out


def heat(u0, grid: GridSpec, s: float) -> np.ndarray:
    """e^{s Lap} u0 for the five-point Dirichlet Laplacian."""
    return _inv(_fwd(u0, grid) * np.exp(-_eigen(grid) * s), grid)


def wave(u0, u1, grid: GridSpec, t: float):
    """(u, u_t) at time t for u_tt = Lap u with data (u0, u1)."""
    lam = _eigen(grid)
    w = np.sqrt(lam)
    a0, a1 = _fwd(u0, grid), _fwd(u1, grid)
    c, s = np.cos(w * t), np.sin(w * t)
    return _inv(a0 * c + a1 * s / w, grid), _inv(-a0 * w * s + a1 * c, grid)


def esd(u0, u1, grid: GridSpec, s) -> np.ndarray:
    """||Lap e^{s Lap} u0||^2 + ||grad e^{s Lap} u1||^2 (L2 with weight h^2)."""
    lam = _eigen(grid)
    a0, a1 = _fwd(u0, grid), _fwd(u1, grid)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    h2 = grid.h ** 2
    return np.array([h2 * np.sum(lam ** 2 * np.exp(-2.0 * lam * x) * a0 ** 2 + lam * np.exp(-2.0 * lam * x) * a1 ** 2)
                     for x in s])


def energy(u0, u1, grid: GridSpec) -> float:
    lam = _eigen(grid)
    a0, a1 = _fwd(u0, grid), _fwd(u1, grid)
    return 0.5 * grid.h ** 2 * float(np.sum(lam * a0 ** 2 + a1 ** 2))


def sup_heat(u0, grid: GridSpec, s: float) -> float:
    return float(np.abs(heat(u0, grid, s)).max())
