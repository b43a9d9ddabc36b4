"""Harmonic map heat flow d phi/ds = tension(phi) on a geometric heat-time ladder.

The sweep can carry two passengers along the flow:

* seed frames, moved by the per-cell transport ODE d e_a/ds = <e_a, d phi/ds> phi
  (midpoint rule, re-orthonormalized every substep);
* a tangent field v solving the covariant heat equation
  d v/ds = D_i D_i v - (v ^ d_i phi) d_i phi, written extrinsically.

Both are integrated with the same substeps as the map, so the background
seen by the passengers is exactly the recorded flow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _stencils as K
from .errors import NumericalAbort
from .grid_fields import GridSpec, MapField, edge_distances
from .hyperbolic import eta, gram_schmidt, minkowski_inner, parallel_transport

RHO_DEFAULT = 2.0 ** (1.0 / 7.0)


@dataclass(frozen=True)
class LadderParams:
    """Heat-time ladder: s = 0 plus rho^k for integer k with s_min <= rho^k.

    The ladder is anchored at s = 1 so that grids of different spacing share
    ladder points, and rho = 2^(1/7) makes dilations by 2 exact ladder shifts.
    """
    rho: float = RHO_DEFAULT
    s_min: float | None = None
    c: float = 0.2
    s_cap: float | None = None

    def __post_init__(self):
        if not self.rho > 1.0:
            raise ValueError("ladder ratio must exceed 1")
        if not 0.0 < self.c <= 0.25:
            raise ValueError("substep factor c must lie in (0, 1/4]")

    def first_exponent(self, h: float) -> int:
        s_min = h * h / 4.0 if self.s_min is None else self.s_min
        return int(math.ceil(math.log(s_min) / math.log(self.rho) - 1e-9))

    def value(self, k: int) -> float:
        return self.rho ** k

    def cap(self, grid: GridSpec) -> float:
        if self.s_cap is not None:
            return self.s_cap
        return 1e3 * (2.0 * math.sqrt(2.0) * grid.half_width) ** 2


def ladder_values(h: float, s_max: float, params: LadderParams = LadderParams()):
    """(s_values, exponents): s_0 = 0 then rho^k up to the first point >= s_max."""
    k = params.first_exponent(h)
    s = [0.0]
    ks = [None]
    while True:
        s.append(params.value(k))
        ks.append(k)
        if s[-1] >= s_max * (1.0 - 1e-12):
            break
        k += 1
    return np.array(s), ks


def substeps(s0: float, s1: float, h: float, c: float):
    """Equal substeps no longer than c h^2 covering [s0, s1]."""
    nsub = max(1, int(math.ceil((s1 - s0) / (c * h * h) * (1.0 - 1e-12))))
    return nsub, (s1 - s0) / nsub


@dataclass
class HeatLadder:
    grid: GridSpec
    base: np.ndarray
    params: LadderParams
    s: np.ndarray
    exponents: list
    maps: list = field(repr=False)
    dirichlet: np.ndarray = None
    sup_dist: np.ndarray = None
    frames: list | None = field(default=None, repr=False)
    e_inf: np.ndarray | None = None
    as_residual: np.ndarray | None = None
    carried: list | None = field(default=None, repr=False)
    carried_norm2: np.ndarray | None = None
    mass_rate: list | None = field(default=None, repr=False)
    flat: bool = False
    s_star: float | None = None
    note: str = ""
    # substeps strictly inside [0, s_1], for quadrature of the initial layer
    sub_s: np.ndarray | None = None
    sub_maps: list | None = field(default=None, repr=False)
    sub_carried: list | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.base.size - 1

    def __len__(self) -> int:
        return len(self.s)

    def map_field(self, k: int) -> MapField:
        return MapField(self.grid, self.maps[k], self.base)

    def index_of(self, s: float) -> int:
        k = int(np.argmin(np.abs(self.s - s)))
        if abs(self.s[k] - s) > 1e-9 * max(1.0, s):
            raise KeyError(f"s = {s} is not a ladder point")
        return k


def dirichlet_energy(phi) -> float:
    """h^2 sum |grad phi|^2 / 2, i.e. half the sum of squared edge lengths."""
    values = phi.values if isinstance(phi, MapField) else np.asarray(phi)
    D0, D1, _ = edge_distances(values)
    return 0.5 * float(np.sum(D0[:-1, :] ** 2) + np.sum(D1[:, :-1] ** 2))


def sup_distance(values: np.ndarray, base: np.ndarray) -> float:
    diff = values - base
    q = np.maximum(minkowski_inner(diff, diff), 0.0)
    return float(2.0 * np.arcsinh(0.5 * np.sqrt(q.max())))


def initial_frames(values: np.ndarray, base: np.ndarray, e_inf: np.ndarray) -> np.ndarray:
    """e_inf transported from the base point to every cell."""
    n = values.shape[0]
    out = np.empty((n, n) + e_inf.shape)
    for a in range(e_inf.shape[0]):
        out[:, :, a, :] = parallel_transport(base, values, np.broadcast_to(e_inf[a], values.shape))
    return out


def default_e_inf(base: np.ndarray) -> np.ndarray:
    m = base.size - 1
    return gram_schmidt(base, np.eye(m + 1)[1:])


class _Engine:
    """One Heun substep of the map flow plus optional frames and covariant passenger."""

    def __init__(self, grid: GridSpec, phi: np.ndarray, frames=None, carry=None):
        n = grid.n
        d = phi.shape[2]
        self.grid = grid
        self.lo, self.hi = grid.lo, grid.hi
        self.inv_h2 = 1.0 / grid.h ** 2
        self.inv_2h = 0.5 / grid.h
        self.phi = np.ascontiguousarray(phi, dtype=float).copy()
        self.phit = np.empty_like(self.phi)
        self.phinew = np.empty_like(self.phi)
        self.tau0 = np.empty_like(self.phi)
        self.tau1 = np.empty_like(self.phi)
        self.tmp = np.empty_like(self.phi)
        self.edges = [np.zeros((n, n)) for _ in range(6)]
        self.e = None if frames is None else np.ascontiguousarray(frames, dtype=float).copy()
        self.enew = None if frames is None else np.empty_like(self.e)
        self.e_prev = None
        self.v = None if carry is None else np.ascontiguousarray(carry, dtype=float).copy()
        if self.v is not None:
            self.g = np.zeros((n, n, 2, d))
            self.r = np.empty_like(self.phi)
            self.vt = np.empty_like(self.phi)
            self.back = np.empty_like(self.phi)
        self.last_ds = None
        self.phi_prev = None

    def _edges(self, phi):
        F0, I0, D0, F1, I1, D1 = self.edges
        K.edge_geometry(phi, F0, I0, D0, F1, I1, D1)
        return F0, I0, F1, I1

    def step(self, ds: float, keep_previous: bool = False):
        lo, hi = self.lo, self.hi
        F0, I0, F1, I1 = self._edges(self.phi)
        K.tension(self.phi, F0, I0, F1, I1, self.inv_h2, lo, hi, self.tau0)
        if self.v is not None:
            K.centered_gradient(self.phi, F0, I0, F1, I1, self.inv_2h, lo, hi, self.g)
            K.covariant_rhs(self.phi, self.v, I0, I1, self.g, self.inv_h2, lo, hi, self.r)
        K.exp_field(self.phi, self.tau0, ds, lo, hi, self.phit)
        F0, I0, F1, I1 = self._edges(self.phit)
        K.tension(self.phit, F0, I0, F1, I1, self.inv_h2, lo, hi, self.tau1)
        if self.v is not None:
            np.multiply(self.r, ds, out=self.tmp)
            self.tmp += self.v
            K.transport_field(self.phi, self.phit, self.tmp, lo, hi, self.vt)
            K.centered_gradient(self.phit, F0, I0, F1, I1, self.inv_2h, lo, hi, self.g)
            K.covariant_rhs(self.phit, self.vt, I0, I1, self.g, self.inv_h2, lo, hi, self.r)
            np.multiply(self.r, ds, out=self.tmp)
            self.tmp += self.vt
            K.transport_field(self.phit, self.phi, self.tmp, lo, hi, self.back)
        K.transport_field(self.phit, self.phi, self.tau1, lo, hi, self.tmp)
        self.tmp += self.tau0
        self.tmp *= 0.5
        K.exp_field(self.phi, self.tmp, ds, lo, hi, self.phinew)
        if self.e is not None:
            K.frame_step(self.phi, self.phinew, self.tau0, self.e, ds, lo, hi, self.enew)
        if self.v is not None:
            self.back += self.v
            self.back *= 0.5
            K.transport_field(self.phi, self.phinew, self.back, lo, hi, self.v)
        if keep_previous:
            self.phi_prev = self.phi.copy()
            self.e_prev = None if self.e is None else self.e.copy()
        self.phi, self.phinew = self.phinew, self.phi
        if self.e is not None:
            self.e, self.enew = self.enew, self.e
        self.last_ds = ds
        if not np.isfinite(self.phi[lo:hi, lo:hi]).all():
            raise NumericalAbort("heat_flow", "nonfinite map values")


def frame_drift(phi_old, phi_new, e_old, e_new, grid: GridSpec, ds: float) -> float:
    """L^2 norm of (U_s - I)/ds with U_s = e_old^T P_{new -> old} e_new: the discrete A_s."""
    lo, hi = grid.lo, grid.hi
    p = phi_old[lo:hi, lo:hi]
    q = phi_new[lo:hi, lo:hi]
    eo = e_old[lo:hi, lo:hi]
    en = e_new[lo:hi, lo:hi]
    m = eo.shape[2]
    back = parallel_transport(q[:, :, None, :], p[:, :, None, :], en)
    U = np.einsum("ijac,cd,ijbd->ijab", eo, eta(m), back)
    dev = U - np.eye(m)
    return float(np.sqrt(grid.h ** 2 * np.sum(dev ** 2)) / ds)


def _sweep(phi: MapField, s_target, params: LadderParams, *, track_frames=True, e_inf=None,
           carry=None, flat_tol=None, energy_tol=None, record_mass=False, s_floor=0.0) -> HeatLadder:
    grid = phi.grid
    h = grid.h
    base = phi.base
    if e_inf is None:
        e_inf = default_e_inf(base)
    frames0 = initial_frames(phi.values, base, e_inf) if track_frames else None
    eng = _Engine(grid, phi.values, frames0, carry)
    E0 = dirichlet_energy(phi.values)
    v2_0 = 0.0 if carry is None else float(h * h * np.sum(np.maximum(minkowski_inner(carry, carry), 0.0)))
    total0 = E0 + 0.5 * v2_0
    cap = params.cap(grid) if s_target is None else s_target

    s_list = [0.0]
    ks = [None]
    maps = [eng.phi.copy()]
    frames = [eng.e.copy()] if track_frames else None
    carried = [eng.v.copy()] if carry is not None else None
    dir_e = [E0]
    sups = [sup_distance(eng.phi, base)]
    cn2 = [v2_0]
    asr = [0.0]
    mass = [] if record_mass else None
    pending_mass = None

    def is_flat(k_last):
        if flat_tol is None:
            return False
        ok = sups[k_last] <= flat_tol and s_list[k_last] >= s_floor * (1.0 - 1e-12)
        if energy_tol is not None:
            ok = ok and (dir_e[k_last] + 0.5 * cn2[k_last]) <= energy_tol * max(total0, 1e-300)
        return ok

    flat = is_flat(0)
    if (flat_tol is not None and flat) or (s_target is not None and s_target <= 0.0):
        done = flat_tol is not None and flat
        return HeatLadder(grid, base, params, np.array(s_list), ks, maps, np.array(dir_e), np.array(sups),
                          frames, e_inf, np.array(asr) if track_frames else None, carried,
                          np.array(cn2), mass, done, 0.0 if done else None)
    k = params.first_exponent(h)
    s_cur = 0.0
    first_interval = True
    sub_s, sub_maps, sub_carried = [], [], []
    while True:
        s_next = params.value(k)
        nsub, ds = substeps(s_cur, s_next, h, params.c)
        for i in range(nsub):
            last = i == nsub - 1
            prev_v2 = None
            if record_mass and last and eng.v is not None:
                prev_v2 = np.maximum(minkowski_inner(eng.v, eng.v), 0.0)
            eng.step(ds, keep_previous=(last or (first_interval and i == 0)) and track_frames)
            if first_interval and i == 0 and track_frames:
                asr[0] = frame_drift(eng.phi_prev, eng.phi, eng.e_prev, eng.e, grid, ds)
            if pending_mass is not None and i == 0:
                pending_mass["after"] = np.maximum(minkowski_inner(eng.v, eng.v), 0.0)
                pending_mass["ds_after"] = ds
                mass.append(pending_mass)
                pending_mass = None
            if record_mass and last and eng.v is not None:
                pending_mass = {"before": prev_v2, "ds_before": ds}
            if first_interval and not last:
                sub_s.append((i + 1) * ds)
                sub_maps.append(eng.phi.copy())
                if eng.v is not None:
                    sub_carried.append(eng.v.copy())
        first_interval = False
        s_cur = s_next
        s_list.append(s_cur)
        ks.append(k)
        maps.append(eng.phi.copy())
        E = dirichlet_energy(eng.phi)
        if E > dir_e[-1] + 1e-10 * max(E0, 1e-300):
            raise NumericalAbort("heat_flow", f"Dirichlet energy increased at s = {s_cur:.6g}")
        dir_e.append(E)
        sups.append(sup_distance(eng.phi, base))
        if track_frames:
            frames.append(eng.e.copy())
            asr.append(frame_drift(eng.phi_prev, eng.phi, eng.e_prev, eng.e, grid, ds))
        if carried is not None:
            carried.append(eng.v.copy())
            cn2.append(float(h * h * np.sum(np.maximum(minkowski_inner(eng.v, eng.v), 0.0))))
            if not np.isfinite(cn2[-1]) or cn2[-1] > cn2[-2] * (1.0 + 1e-9) + 1e-300:
                raise NumericalAbort("covariant_heat", f"passenger norm grew at s = {s_cur:.6g}")
        else:
            cn2.append(0.0)
        kk = len(s_list) - 1
        if flat_tol is not None and is_flat(kk):
            flat = True
            break
        if s_target is not None and s_cur >= s_target * (1.0 - 1e-12):
            break
        if s_cur >= cap:
            break
        k += 1
    if pending_mass is not None:
        pending_mass["after"] = None
        pending_mass["ds_after"] = None
        mass.append(pending_mass)
    lad = HeatLadder(grid, base, params, np.array(s_list), ks, maps, np.array(dir_e), np.array(sups),
                     frames, e_inf, np.array(asr) if track_frames else None, carried, np.array(cn2), mass)
    lad.sub_s = np.array(sub_s)
    lad.sub_maps = sub_maps
    lad.sub_carried = sub_carried if carry is not None else None
    lad.flat = flat if flat_tol is not None else False
    lad.s_star = s_cur if (flat_tol is not None and flat) else None
    if flat_tol is not None and not flat:
        lad.note = f"not flat by s_cap = {cap:.6g}"
    return lad


def heat_flow(phi: MapField, s_max: float, params: LadderParams = LadderParams(), *, track_frames=True,
              e_inf=None, carry=None, record_mass=False) -> HeatLadder:
    """Flow phi to the first ladder point >= s_max, recording every ladder slice."""
    if not s_max > 0.0:
        raise ValueError("s_max must be positive")
    return _sweep(phi, s_max, params, track_frames=track_frames, e_inf=e_inf, carry=carry,
                  record_mass=record_mass)


def flow_until_flat(phi: MapField, tol: float, params: LadderParams = LadderParams(), *, track_frames=True,
                    e_inf=None, carry=None, energy_tol=None, record_mass=False):
    """Extend the ladder until sup_x d(phi(s, x), phi(inf)) <= tol.

    Returns (s_star, ladder); s_star is None and ladder.note explains when the
    cap was reached first. With energy_tol the remaining Dirichlet plus carried
    energy must also drop below that fraction of its initial value.
    """
    if not tol > 0.0:
        raise ValueError("flatness tolerance must be positive")
    lad = _sweep(phi, None, params, track_frames=track_frames, e_inf=e_inf, carry=carry, flat_tol=tol,
                 energy_tol=energy_tol, record_mass=record_mass)
    return lad.s_star, lad


def scalar_laplacian(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Five-point Laplacian on the active region with zero values outside it."""
    lo, hi = grid.lo, grid.hi
    out = np.zeros_like(u)
    c = u[lo:hi, lo:hi]
    out[lo:hi, lo:hi] = (u[lo + 1:hi + 1, lo:hi] + u[lo - 1:hi - 1, lo:hi] + u[lo:hi, lo + 1:hi + 1]
                         + u[lo:hi, lo - 1:hi - 1] - 4.0 * c) / grid.h ** 2
    return out


def scalar_heat_rk2(u0: np.ndarray, grid: GridSpec, s_values, params: LadderParams = LadderParams()):
    """The scalar heat equation with the same two-stage scheme and substeps as the sweep."""
    u = np.array(u0, dtype=float)
    u[grid.margin_mask()] = 0.0
    out = [u.copy()]
    for s0, s1 in zip(s_values[:-1], s_values[1:]):
        nsub, ds = substeps(s0, s1, grid.h, params.c)
        for _ in range(nsub):
            w = u + ds * scalar_laplacian(u, grid)
            u = 0.5 * u + 0.5 * (w + ds * scalar_laplacian(w, grid))
        out.append(u.copy())
    return out
