"""Discrete data (phi0, phi1) on a square grid, energy densities, symmetries and generators."""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates

from . import _stencils as K
from .hyperbolic import (
    LorentzRotation,
    basepoint,
    exp_map,
    log_map,
    minkowski_inner,
    normalize_point,
    parallel_transport,
    project_to_tangent,
)

SNAPSHOT_MAGIC = b"CGWM"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class GridSpec:
    n: int
    h: float
    margin: int = 2

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 16:
            raise ValueError(f"grid needs n >= 16 cells per side, got {self.n}")
        if not self.h > 0.0:
            raise ValueError(f"grid spacing must be positive, got {self.h}")
        if int(self.margin) != self.margin or self.margin < 2 or 2 * self.margin >= self.n:
            raise ValueError(f"margin must be an integer in [2, n/2), got {self.margin}")

    @property
    def half_width(self) -> float:
        return self.n * self.h / 2.0

    @property
    def lo(self) -> int:
        return self.margin

    @property
    def hi(self) -> int:
        return self.n - self.margin

    @property
    def axis(self) -> np.ndarray:
        """Cell-centre coordinates along one axis; the origin is the node n/2."""
        return (np.arange(self.n) - self.n // 2) * self.h

    def mesh(self):
        return np.meshgrid(self.axis, self.axis, indexing="ij")

    def margin_mask(self) -> np.ndarray:
        mask = np.ones((self.n, self.n), dtype=bool)
        mask[self.lo:self.hi, self.lo:self.hi] = False
        return mask

    def index_of(self, x) -> np.ndarray:
        """Fractional cell index of a physical point."""
        return np.asarray(x, dtype=float) / self.h + self.n // 2

    def active_extent(self) -> tuple[float, float]:
        return self.axis[self.lo], self.axis[self.hi - 1]


def _check_sheet(values, where="map"):
    q = minkowski_inner(values, values)
    err = np.abs(q + 1.0).max()
    if err > 1e-9 or np.any(values[..., 0] < 1.0 - 1e-12):
        raise ValueError(f"{where} has values off the upper sheet (max |<p,p>+1| = {err:.2e})")


@dataclass(frozen=True)
class MapField:
    grid: GridSpec
    values: np.ndarray = field(repr=False)
    base: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        n = self.grid.n
        if v.ndim != 3 or v.shape[:2] != (n, n):
            raise ValueError(f"map values must have shape ({n}, {n}, m+1)")
        b = np.asarray(self.base, dtype=float)
        if b.shape != (v.shape[2],):
            raise ValueError("base point dimension does not match the map")
        _check_sheet(v)
        _check_sheet(b, "base point")
        ring = v[self.grid.margin_mask()]
        if ring.size and np.abs(ring - b).max() > 1e-12:
            raise ValueError("map differs from its base point on the margin ring")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "base", b)

    @property
    def m(self) -> int:
        return self.values.shape[2] - 1


@dataclass(frozen=True)
class DataPair:
    phi0: MapField
    phi1: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.phi1, dtype=float)
        if v.shape != self.phi0.values.shape:
            raise ValueError("phi1 must have the same shape as phi0")
        tang = np.abs(minkowski_inner(self.phi0.values, v)).max()
        if tang > 1e-9 * max(1.0, np.abs(v).max() * np.abs(self.phi0.values).max()):
            raise ValueError(f"phi1 is not tangent to phi0 (max |<phi0, phi1>| = {tang:.2e})")
        if np.any(v[self.grid.margin_mask()] != 0.0):
            raise ValueError("phi1 must vanish on the margin ring")
        object.__setattr__(self, "phi1", v)

    @property
    def grid(self) -> GridSpec:
        return self.phi0.grid

    @property
    def m(self) -> int:
        return self.phi0.m

    @property
    def base(self) -> np.ndarray:
        return self.phi0.base


@dataclass(frozen=True)
class EnergyDensityField:
    grid: GridSpec
    t00: np.ndarray = field(repr=False)

    def __post_init__(self):
        if np.any(self.t00 < 0.0):
            raise ValueError("energy density must be nonnegative")

    def total(self) -> float:
        return float(self.grid.h ** 2 * self.t00.sum())


def edge_distances(values: np.ndarray):
    """Geodesic length of every axis-0 and axis-1 edge of a map, plus the log-map coefficients."""
    n = values.shape[0]
    arrs = [np.zeros((n, n)) for _ in range(6)]
    K.edge_geometry(np.ascontiguousarray(values), *arrs)
    F0, I0, D0, F1, I1, D1 = arrs
    return D0, D1, (F0, I0, F1, I1)


def gradient_density(values: np.ndarray, h: float) -> np.ndarray:
    """|grad phi|^2 per cell from the edge lengths of its four incident edges.

    Each axis contributes the average of the squared forward and backward
    intrinsic differences, so h^2 sum(|grad phi|^2)/2 is exactly the discrete
    Dirichlet energy whose gradient is the five-point log-map tension.
    """
    D0, D1, _ = edge_distances(values)
    q0 = D0 ** 2
    q1 = D1 ** 2
    q0[-1, :] = 0.0
    q1[:, -1] = 0.0
    fwd = q0 + q1
    bwd = np.zeros_like(fwd)
    bwd[1:, :] += q0[:-1, :]
    bwd[:, 1:] += q1[:, :-1]
    return 0.5 * (fwd + bwd) / h ** 2


def energy_density(d: DataPair) -> EnergyDensityField:
    kin = minkowski_inner(d.phi1, d.phi1)
    t00 = 0.5 * np.maximum(kin, 0.0) + 0.5 * gradient_density(d.phi0.values, d.grid.h)
    return EnergyDensityField(d.grid, t00)


def total_energy(d: DataPair) -> float:
    return energy_density(d).total()


def local_energy(e: EnergyDensityField, x0, r: float) -> float:
    X, Y = e.grid.mesh()
    x0 = np.asarray(x0, dtype=float)
    inside = (X - x0[0]) ** 2 + (Y - x0[1]) ** 2 <= r * r
    return float(e.grid.h ** 2 * e.t00[inside].sum())


# ---------------------------------------------------------------- generators

def constant_data(grid: GridSpec, m: int = 2, base=None) -> DataPair:
    b = basepoint(m) if base is None else normalize_point(base)
    vals = np.broadcast_to(b, (grid.n, grid.n, m + 1)).copy()
    return DataPair(MapField(grid, vals, b), np.zeros_like(vals))


def smooth_cutoff(r: np.ndarray, r_in: float, r_out: float) -> np.ndarray:
    """C-infinity step: 1 for r <= r_in, 0 for r >= r_out."""
    t = np.clip((np.asarray(r, dtype=float) - r_in) / (r_out - r_in), 0.0, 1.0)

    def f(x):
        return np.where(x > 0.0, np.exp(-1.0 / np.where(x > 0.0, x, 1.0)), 0.0)

    a = f(1.0 - t)
    b = f(t)
    return a / (a + b)


def gaussian_profile(grid: GridSpec, amplitude: float, sigma: float, center=(0.0, 0.0),
                     taper: float | None = None) -> np.ndarray:
    """A exp(-|x-c|^2 / 2 sigma^2), smoothly cut off before the margin ring.

    taper is the cutoff radius; by default the distance from the centre to the
    edge of the active region, so the profile is exactly zero on the margin.
    """
    X, Y = grid.mesh()
    c = np.asarray(center, dtype=float)
    r = np.hypot(X - c[0], Y - c[1])
    lo, hi = grid.active_extent()
    reach = min(c[0] - lo, hi - c[0], c[1] - lo, hi - c[1]) - grid.h
    if taper is None:
        taper = reach
    if taper <= 0.0:
        raise ValueError("bump centre lies outside the active region")
    prof = amplitude * np.exp(-0.5 * (r / sigma) ** 2) * smooth_cutoff(r, 0.7 * taper, taper)
    prof[grid.margin_mask()] = 0.0
    return prof


def _require_support(grid: GridSpec, *profiles):
    for p in profiles:
        if np.any(p[grid.margin_mask()] != 0.0):
            raise ValueError(f"profile is not supported inside the non-margin region (margin = {grid.margin} cells)")


def make_geodesic_data(grid: GridSpec, u0, u1=None, direction=None, m: int = 2, base=None) -> DataPair:
    """phi0 = exp(base, u0 e1), phi1 = u1 times e1 transported to phi0."""
    u0 = np.asarray(u0, dtype=float)
    u1 = np.zeros_like(u0) if u1 is None else np.asarray(u1, dtype=float)
    _require_support(grid, u0, u1)
    b = basepoint(m) if base is None else normalize_point(base)
    if direction is None:
        direction = np.eye(m + 1)[1]
    e1 = project_to_tangent(b, np.asarray(direction, dtype=float))
    e1 = e1 / np.sqrt(minkowski_inner(e1, e1))
    phi0 = exp_map(b, u0[..., None] * e1, check=False)
    phi0[grid.margin_mask()] = b
    t = parallel_transport(b, phi0, np.broadcast_to(e1, phi0.shape))
    phi1 = u1[..., None] * t
    phi1[grid.margin_mask()] = 0.0
    return DataPair(MapField(grid, phi0, b), phi1)


@dataclass(frozen=True)
class Bump:
    center: tuple
    scale: float
    direction: tuple
    amplitude: float
    velocity: float = 0.0


def make_multibump_data(grid: GridSpec, bumps, m: int = 2, base=None, overlap_tol: float = 1e-3) -> DataPair:
    """Superpose geodesic bumps by iterated exponential maps.

    Bump k displaces the current map along its direction (given in T_base and
    transported to the current point) by its Gaussian profile. Overlap of the
    profiles above overlap_tol (relative) is reported through warnings.
    """
    b = basepoint(m) if base is None else normalize_point(base)
    vals = np.broadcast_to(b, (grid.n, grid.n, m + 1)).copy()
    profiles = []
    dirs = []
    for bump in bumps:
        u = gaussian_profile(grid, bump.amplitude, bump.scale, bump.center)
        dvec = np.concatenate([[0.0], np.asarray(bump.direction, dtype=float)])
        dvec = project_to_tangent(b, dvec)
        dvec = dvec / np.sqrt(minkowski_inner(dvec, dvec))
        step = u[..., None] * parallel_transport(b, vals, np.broadcast_to(dvec, vals.shape))
        vals = exp_map(vals, step, check=False)
        profiles.append(u)
        dirs.append(dvec)
    for i in range(len(profiles)):
        for j in range(i + 1, len(profiles)):
            a, c = np.abs(profiles[i]), np.abs(profiles[j])
            ov = (a * c).max() / max(a.max() * c.max(), 1e-300)
            if ov > overlap_tol:
                warnings.warn(f"bumps {i} and {j} overlap (relative product {ov:.2e})", stacklevel=2)
    vals[grid.margin_mask()] = b
    phi1 = np.zeros_like(vals)
    for bump, dvec in zip(bumps, dirs):
        if bump.velocity != 0.0:
            u1 = gaussian_profile(grid, bump.velocity, bump.scale, bump.center)
            phi1 += u1[..., None] * parallel_transport(b, vals, np.broadcast_to(dvec, vals.shape))
    phi1 = project_to_tangent(vals, phi1)
    phi1[grid.margin_mask()] = 0.0
    return DataPair(MapField(grid, vals, b), phi1)


def random_smooth_data(grid: GridSpec, seed: int = 0, amplitude: float = 0.5, scale: float = 1.0,
                       count: int = 6, spread: float = 1.5, velocity: float = 0.3, m: int = 2,
                       taper: float | None = None) -> DataPair:
    """Generic (non-geodesic) data: random Gaussian bumps in T_base log-coordinates.

    Centres are drawn within `spread` of the origin, directions uniformly in
    T_base; the log-coordinate field is exponentiated at the base point. The sum
    is cut off smoothly at radius `taper` (default 3/4 of the half width), which
    does not depend on h, so refinements of one box sample the same continuum data.
    """
    rng = np.random.default_rng(seed)
    b = basepoint(m)
    if taper is None:
        taper = 0.75 * grid.half_width
    reach = _taper_radius(grid, (0.0, 0.0))
    if taper > reach + 1e-12:
        raise ValueError(f"taper radius {taper:.4g} exceeds the active region reach {reach:.4g}")
    X, Y = grid.mesh()
    cut = smooth_cutoff(np.hypot(X, Y), 0.7 * taper, taper)
    L = np.zeros((grid.n, grid.n, m + 1))
    V = np.zeros_like(L)
    for _ in range(count):
        c = rng.uniform(-spread, spread, size=2)
        s = scale * rng.uniform(0.7, 1.3)
        d = rng.normal(size=m)
        d /= np.linalg.norm(d)
        w = rng.normal(size=m)
        w /= np.linalg.norm(w)
        a = amplitude * rng.uniform(0.5, 1.0)
        v = velocity * rng.uniform(-1.0, 1.0)
        prof = np.exp(-0.5 * ((X - c[0]) ** 2 + (Y - c[1]) ** 2) / s ** 2) * cut
        L[..., 1:] += a * prof[..., None] * d
        V[..., 1:] += v * prof[..., None] * w
    return data_from_log_coordinates(grid, L, V, b)


def _taper_radius(grid: GridSpec, c) -> float:
    lo, hi = grid.active_extent()
    return min(c[0] - lo, hi - c[0], c[1] - lo, hi - c[1]) - grid.h


# ---------------------------------------------------------------- log coordinates

def log_coordinates(d: DataPair):
    """(L, V): L = log_base phi0 and V = phi1 transported back to T_base."""
    b = d.base
    vals = d.phi0.values
    L = log_map(np.broadcast_to(b, vals.shape), vals)
    V = parallel_transport(vals, np.broadcast_to(b, vals.shape), d.phi1)
    return L, V


def data_from_log_coordinates(grid: GridSpec, L, V, base) -> DataPair:
    b = np.asarray(base, dtype=float)
    L = np.array(L, dtype=float)
    V = np.array(V, dtype=float)
    mask = grid.margin_mask()
    L[mask] = 0.0
    V[mask] = 0.0
    bb = np.broadcast_to(b, L.shape)
    L = project_to_tangent(bb, L)
    V = project_to_tangent(bb, V)
    vals = exp_map(bb, L, check=False)
    vals[mask] = b
    phi1 = parallel_transport(bb, vals, V)
    phi1 = project_to_tangent(vals, phi1)
    phi1[mask] = 0.0
    return DataPair(MapField(grid, vals, b), phi1)


# ---------------------------------------------------------------- symmetries

def _support_check(grid: GridSpec, L, V, image_index):
    """Reject if any nonzero source cell is mapped outside the active region."""
    live = (np.abs(L).max(axis=-1) > 0.0) | (np.abs(V).max(axis=-1) > 0.0)
    if not live.any():
        return
    ii, jj = image_index
    ii, jj = ii[live], jj[live]
    lo, hi = grid.lo, grid.hi - 1
    if ii.min() < lo or jj.min() < lo or ii.max() > hi or jj.max() > hi:
        over = max(lo - ii.min(), lo - jj.min(), ii.max() - hi, jj.max() - hi)
        need = grid.n + 2 * int(np.ceil(over))
        raise ValueError(
            f"symmetry moves the support into the margin ring; a grid of n >= {need} cells "
            f"(margin {grid.margin}) is required")


def sym_translate(d: DataPair, x0) -> DataPair:
    g = d.grid
    x0 = np.asarray(x0, dtype=float)
    shift = x0 / g.h
    I, J = np.meshgrid(np.arange(g.n), np.arange(g.n), indexing="ij")
    L, V = log_coordinates(d)
    _support_check(g, L, V, (I + shift[0], J + shift[1]))
    if np.allclose(shift, np.round(shift), rtol=0.0, atol=1e-9):
        si, sj = int(round(shift[0])), int(round(shift[1]))
        phi0 = np.broadcast_to(d.base, d.phi0.values.shape).copy()
        phi1 = np.zeros_like(d.phi1)
        src = (slice(max(0, -si), g.n - max(0, si)), slice(max(0, -sj), g.n - max(0, sj)))
        dst = (slice(max(0, si), g.n - max(0, -si)), slice(max(0, sj), g.n - max(0, -sj)))
        phi0[dst] = d.phi0.values[src]
        phi1[dst] = d.phi1[src]
        return DataPair(MapField(g, phi0, d.base), phi1)
    coords = np.array([I - shift[0], J - shift[1]])
    return _resample(d, L, V, coords, 1.0)


def sym_time_reverse(d: DataPair) -> DataPair:
    return DataPair(d.phi0, -d.phi1)


def sym_rotate(d: DataPair, U: LorentzRotation) -> DataPair:
    mat = U.matrix
    vals = normalize_point(d.phi0.values @ mat.T)
    base = normalize_point(mat @ d.base)
    vals[d.grid.margin_mask()] = base
    phi1 = project_to_tangent(vals, d.phi1 @ mat.T)
    phi1[d.grid.margin_mask()] = 0.0
    return DataPair(MapField(d.grid, vals, base), phi1)


def sym_dilate(d: DataPair, lam: float, order: int = 3) -> DataPair:
    """(phi0(x), phi1(x)) -> (phi0(x/lam), phi1(x/lam)/lam) by spline resampling of log coordinates.

    order is the spline order (1 = bilinear).
    """
    if not lam > 0.0:
        raise ValueError("dilation factor must be positive")
    g = d.grid
    c = g.n // 2
    I, J = np.meshgrid(np.arange(g.n), np.arange(g.n), indexing="ij")
    L, V = log_coordinates(d)
    _support_check(g, L, V, (c + lam * (I - c), c + lam * (J - c)))
    coords = np.array([c + (I - c) / lam, c + (J - c) / lam])
    return _resample(d, L, V, coords, 1.0 / lam, order)


def _resample(d: DataPair, L, V, coords, vscale: float, order: int = 1) -> DataPair:
    comp = []
    for arr in (L, V):
        out = np.empty_like(arr)
        for k in range(arr.shape[-1]):
            out[..., k] = map_coordinates(arr[..., k], coords, order=order, mode="constant", cval=0.0)
        comp.append(out)
    return data_from_log_coordinates(d.grid, comp[0], vscale * comp[1], d.base)


# ---------------------------------------------------------------- snapshots

def write_snapshot(path, grid: GridSpec, m: int, blocks: dict) -> None:
    """CGWM container: header then named little-endian float64 blocks in row-major order."""
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<IIII", SNAPSHOT_VERSION, m, grid.n, grid.margin))
        fh.write(struct.pack("<d", grid.h))
        fh.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks.items():
            a = np.ascontiguousarray(arr, dtype="<f8")
            key = name.encode("utf-8")
            fh.write(struct.pack("<I", len(key)))
            fh.write(key)
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(a.tobytes(order="C"))


def read_snapshot(path):
    """Returns (grid, m, blocks); validates sheet and tangency invariants of map blocks."""
    raw = Path(path).read_bytes()
    if raw[:4] != SNAPSHOT_MAGIC:
        raise ValueError("not a CGWM snapshot (bad magic)")
    version, m, n, margin = struct.unpack_from("<IIII", raw, 4)
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    (h,) = struct.unpack_from("<d", raw, 20)
    (nb,) = struct.unpack_from("<I", raw, 28)
    pos = 32
    blocks = {}
    for _ in range(nb):
        (kl,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        name = raw[pos:pos + kl].decode("utf-8")
        pos += kl
        (nd,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        shape = struct.unpack_from(f"<{nd}I", raw, pos)
        pos += 4 * nd
        count = int(np.prod(shape)) if nd else 1
        if pos + 8 * count > len(raw):
            raise ValueError(f"snapshot block {name!r} is truncated")
        blocks[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape).astype(float)
        pos += 8 * count
    if pos != len(raw):
        raise ValueError("trailing bytes after the last snapshot block")
    grid = GridSpec(n, h, margin)
    for name, arr in blocks.items():
        if arr.ndim >= 1 and arr.shape[-1] != m + 1 and name in ("phi0", "base"):
            raise ValueError(f"block {name!r} does not have m+1 = {m + 1} components")
    if "phi0" in blocks:
        _check_sheet(blocks["phi0"], "snapshot block 'phi0'")
        if "phi1" in blocks:
            tang = np.abs(minkowski_inner(blocks["phi0"], blocks["phi1"])).max()
            if tang > 1e-8 * max(1.0, np.abs(blocks["phi0"]).max() * np.abs(blocks["phi1"]).max()):
                raise ValueError("snapshot block 'phi1' is not tangent to 'phi0'")
    return grid, m, blocks


def save_data(path, d: DataPair, extra: dict | None = None) -> None:
    blocks = {"base": d.base, "phi0": d.phi0.values, "phi1": d.phi1}
    if extra:
        blocks.update(extra)
    write_snapshot(path, d.grid, d.m, blocks)


def load_data(path) -> DataPair:
    grid, m, blocks = read_snapshot(path)
    for key in ("base", "phi0", "phi1"):
        if key not in blocks:
            raise ValueError(f"snapshot has no {key!r} block")
    return DataPair(MapField(grid, blocks["phi0"], blocks["base"]), blocks["phi1"])
