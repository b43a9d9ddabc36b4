"""Hyperboloid model of H^m inside R^{1+m}.

Points satisfy <p,p> = -1 with p^0 >= 1, where <a,b> = -a^0 b^0 + sum_i a^i b^i.
All functions broadcast over leading axes; the last axis holds the m+1
embedding coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SHEET_TOL = 1e-12
TANGENT_TOL = 1e-9
SMALL_VECTOR = 1e-14


def minkowski_inner(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return -a[..., 0] * b[..., 0] + np.sum(a[..., 1:] * b[..., 1:], axis=-1)


def minkowski_norm(v):
    """Induced norm of a tangent vector (clamped at zero against roundoff)."""
    return np.sqrt(np.maximum(minkowski_inner(v, v), 0.0))


def eta(m: int) -> np.ndarray:
    g = np.eye(m + 1)
    g[0, 0] = -1.0
    return g


def basepoint(m: int) -> np.ndarray:
    p = np.zeros(m + 1)
    p[0] = 1.0
    return p


def normalize_point(p):
    """Rescale onto the upper sheet; p must be timelike."""
    p = np.asarray(p, dtype=float)
    q = -minkowski_inner(p, p)
    if np.any(q <= 0.0):
        raise ValueError("cannot normalize a non-timelike vector onto the hyperboloid")
    out = p / np.sqrt(q)[..., None]
    return np.where(out[..., :1] < 0.0, -out, out)


def project_to_tangent(p, w):
    p = np.asarray(p, dtype=float)
    w = np.asarray(w, dtype=float)
    return w + minkowski_inner(w, p)[..., None] * p


def _check_tangent(p, v):
    scale = 1.0 + np.abs(v).max() * np.abs(p).max() if np.size(v) else 1.0
    err = np.abs(minkowski_inner(p, v)).max() if np.size(v) else 0.0
    if err > TANGENT_TOL * scale:
        raise ValueError(f"vector is not tangent to the hyperboloid (|<p,v>| = {err:.3e})")


def exp_map(p, v, check: bool = True):
    """cosh|v| p + sinh|v| v/|v|, renormalized onto the sheet."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    if check:
        _check_tangent(p, v)
    r = minkowski_norm(v)
    small = r < SMALL_VECTOR
    rs = np.where(small, 1.0, r)
    coef = np.where(small, 1.0, np.sinh(rs) / rs)
    out = np.cosh(r)[..., None] * p + coef[..., None] * v
    return normalize_point(out)


def log_map(p, q):
    """Inverse of exp_map; its length is the geodesic distance arccosh(-<p,q>)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    w = q + minkowski_inner(p, q)[..., None] * p
    nw = minkowski_norm(w)
    small = nw < SMALL_VECTOR
    nws = np.where(small, 1.0, nw)
    coef = np.where(small, 1.0, np.arcsinh(nws) / nws)
    return coef[..., None] * w


def distance(p, q):
    """Geodesic distance, evaluated as 2 asinh(|p-q|/2) for accuracy at short range."""
    d = np.asarray(p, dtype=float) - np.asarray(q, dtype=float)
    return 2.0 * np.arcsinh(0.5 * minkowski_norm(d))


def parallel_transport(p, q, v):
    """Transport v from T_p H to T_q H along the geodesic joining p and q."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    c = minkowski_inner(q, v) / (1.0 - minkowski_inner(p, q))
    return v + c[..., None] * (p + q)


def gram_schmidt(p, seed):
    """Orthonormalize the rows of seed in T_p H; returns an (m, m+1) array.

    The last axis is flipped if needed so that det[p; e_1; ...; e_m] > 0.
    """
    p = np.asarray(p, dtype=float)
    seed = np.asarray(seed, dtype=float)
    m = p.shape[-1] - 1
    if seed.shape != (m, m + 1):
        raise ValueError(f"seed must have shape {(m, m + 1)}, got {seed.shape}")
    axes = []
    for a in range(m):
        w = project_to_tangent(p, seed[a])
        ref = max(np.linalg.norm(seed[a]), 1.0)
        for e in axes:
            w = w - minkowski_inner(w, e) * e
        nw = minkowski_norm(w)
        if nw < 1e-10 * ref * max(np.abs(p).max(), 1.0):
            raise ValueError(f"seed row {a} is linearly dependent on the earlier rows once projected to T_pH")
        axes.append(w / nw)
    axes = np.array(axes)
    if np.linalg.det(np.vstack([p[None, :], axes])) < 0.0:
        axes[-1] = -axes[-1]
    return axes


@dataclass(frozen=True)
class HyperbolicPoint:
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        if c.ndim != 1 or c.size < 2:
            raise ValueError("a point needs a 1-d coordinate vector of length m+1 >= 2")
        if abs(minkowski_inner(c, c) + 1.0) > 1e-9 * max(1.0, c[0] ** 2) or c[0] < 1.0 - 1e-12:
            raise ValueError("coordinates are not on the upper sheet")
        object.__setattr__(self, "coords", c)

    @classmethod
    def from_coords(cls, coords) -> "HyperbolicPoint":
        return cls(normalize_point(coords))

    @classmethod
    def base(cls, m: int = 2) -> "HyperbolicPoint":
        return cls(basepoint(m))

    @property
    def m(self) -> int:
        return self.coords.size - 1


@dataclass(frozen=True)
class TangentVector:
    base: HyperbolicPoint
    vec: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vec, dtype=float)
        if v.shape != self.base.coords.shape:
            raise ValueError("tangent vector and base point have different dimensions")
        _check_tangent(self.base.coords, v)
        object.__setattr__(self, "vec", v)

    @property
    def norm(self) -> float:
        return float(minkowski_norm(self.vec))


@dataclass(frozen=True)
class OrthonormalFrame:
    base: HyperbolicPoint
    axes: np.ndarray

    def __post_init__(self):
        ax = np.asarray(self.axes, dtype=float)
        m = self.base.m
        if ax.shape != (m, m + 1):
            raise ValueError(f"frame axes must have shape {(m, m + 1)}")
        gram = ax @ eta(m) @ ax.T
        if np.abs(gram - np.eye(m)).max() > 1e-9:
            raise ValueError("frame axes are not orthonormal")
        if np.abs(ax @ eta(m) @ self.base.coords).max() > 1e-9:
            raise ValueError("frame axes are not tangent at the base point")
        if np.linalg.det(np.vstack([self.base.coords[None, :], ax])) <= 0.0:
            raise ValueError("frame is negatively oriented")
        object.__setattr__(self, "axes", ax)


def frame_at(p, seed) -> OrthonormalFrame:
    pt = p if isinstance(p, HyperbolicPoint) else HyperbolicPoint(np.asarray(p, dtype=float))
    return OrthonormalFrame(pt, gram_schmidt(pt.coords, seed))


def standard_frame(m: int = 2) -> OrthonormalFrame:
    """Frame at the basepoint whose axes are the spatial coordinate directions."""
    return OrthonormalFrame(HyperbolicPoint.base(m), np.eye(m + 1)[1:])


@dataclass(frozen=True)
class LorentzRotation:
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        u = np.asarray(self.matrix, dtype=float)
        if u.ndim != 2 or u.shape[0] != u.shape[1]:
            raise ValueError("a Lorentz rotation is a square matrix")
        g = eta(u.shape[0] - 1)
        if np.abs(u.T @ g @ u - g).max() > 1e-10 * max(1.0, np.abs(u).max() ** 2):
            raise ValueError("matrix does not preserve the Minkowski form")
        if u[0, 0] < 1.0 - 1e-12:
            raise ValueError("matrix does not preserve the upper sheet")
        if np.linalg.det(u) < 0.0:
            raise ValueError("matrix has determinant -1")
        object.__setattr__(self, "matrix", u)

    @property
    def m(self) -> int:
        return self.matrix.shape[0] - 1

    def __matmul__(self, other: "LorentzRotation") -> "LorentzRotation":
        return LorentzRotation(self.matrix @ other.matrix)

    def inverse(self) -> "LorentzRotation":
        g = eta(self.m)
        return LorentzRotation(g @ self.matrix.T @ g)

    @classmethod
    def identity(cls, m: int = 2) -> "LorentzRotation":
        return cls(np.eye(m + 1))

    @classmethod
    def spatial(cls, m: int, i: int, j: int, angle: float) -> "LorentzRotation":
        """Rotation by angle in the (i, j) spatial plane, 1 <= i, j <= m."""
        u = np.eye(m + 1)
        c, s = np.cos(angle), np.sin(angle)
        u[i, i], u[i, j], u[j, i], u[j, j] = c, -s, s, c
        return cls(u)

    @classmethod
    def boost(cls, m: int, axis: int, rapidity: float) -> "LorentzRotation":
        u = np.eye(m + 1)
        c, s = np.cosh(rapidity), np.sinh(rapidity)
        u[0, 0], u[0, axis], u[axis, 0], u[axis, axis] = c, s, s, c
        return cls(u)

    @classmethod
    def from_frame(cls, frame: OrthonormalFrame) -> "LorentzRotation":
        """The element carrying the standard frame at the basepoint to the given frame."""
        return cls(np.column_stack([frame.base.coords, frame.axes.T]))


def apply_rotation(u: LorentzRotation, x):
    """Act linearly on points, tangent vectors, frames or raw coordinate arrays."""
    mat = u.matrix
    if isinstance(x, HyperbolicPoint):
        return HyperbolicPoint(normalize_point(mat @ x.coords))
    if isinstance(x, TangentVector):
        base = apply_rotation(u, x.base)
        return TangentVector(base, project_to_tangent(base.coords, mat @ x.vec))
    if isinstance(x, OrthonormalFrame):
        return OrthonormalFrame(apply_rotation(u, x.base), x.axes @ mat.T)
    return np.asarray(x, dtype=float) @ mat.T


def random_point(rng: np.random.Generator, m: int = 2, radius: float = 3.0) -> np.ndarray:
    """Point at geodesic distance uniform in [0, radius] from the basepoint."""
    d = rng.normal(size=m)
    d /= np.linalg.norm(d)
    r = rng.uniform(0.0, radius)
    return np.concatenate([[np.cosh(r)], np.sinh(r) * d])


def random_tangent(rng: np.random.Generator, p, scale: float = 1.0) -> np.ndarray:
    return project_to_tangent(p, scale * rng.normal(size=np.shape(p)))
