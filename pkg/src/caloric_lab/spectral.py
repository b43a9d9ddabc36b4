"""Covariant heat extension of psi_t, the energy spectral distribution and its identities.

All quantities are evaluated in gauge-invariant extrinsic form: a tangent
field v along phi(s) has frame coordinates u = e^T eta v in any orthonormal
frame, and

    ||psi_s||^2          = h^2 sum |tau|^2
    ||D_x psi_t||^2      = sum over edges |P v(nbr) - v|^2
    |psi_t ^ psi_x|^2 / 2 = h^2 sum_i (|v|^2 |g_i|^2 - <v, g_i>^2)

with wedge u ^ w = u w^T - w u^T (Frobenius norm). These are the same
numbers the caloric frame coordinates give, so no frames are needed here.
The scheme makes d/ds (E_D + ||v||^2 / 2) = -ESD hold exactly between
ladder points up to the time discretization.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _stencils as K
from ._quadrature import first_interval_correction, fit_tail, ladder_weights
from .caloric import DifferentiatedFields, frame_coords
from .errors import NumericalAbort
from .grid_fields import DataPair, GridSpec, edge_distances, sym_dilate, sym_rotate, sym_time_reverse, sym_translate, total_energy
from .heat_solver import HeatLadder, LadderParams, _sweep, scalar_heat_rk2, scalar_laplacian
from .hyperbolic import LorentzRotation, minkowski_inner, parallel_transport


def _tnorm2(v):
    return np.maximum(minkowski_inner(v, v), 0.0)


@dataclass
class CovariantField:
    """Solution u of the covariant heat equation on a heat ladder, stored extrinsically."""
    ladder: HeatLadder = field(repr=False)
    background: DifferentiatedFields | None = field(default=None, repr=False)

    @property
    def v(self) -> list:
        return self.ladder.carried

    @property
    def s(self) -> np.ndarray:
        return self.ladder.s

    def norm2(self) -> np.ndarray:
        return self.ladder.carried_norm2

    def pointwise(self, k: int) -> np.ndarray:
        return np.sqrt(_tnorm2(self.ladder.carried[k]))

    def u(self, k: int) -> np.ndarray:
        """Frame coordinates in the caloric gauge (needs a background with frames)."""
        if self.background is None:
            raise ValueError("no frame background attached")
        return frame_coords(self.background.frames(k), self.ladder.carried[k])


def covariant_heat_solve(u0, background, ladder: HeatLadder | None = None, params: LadderParams | None = None,
                         record_mass: bool = True) -> CovariantField:
    """Extend u0 by d u/ds = D_i D_i u - (u ^ psi_i) psi_i along the ladder's heat flow.

    u0 is either an R^m field of frame coordinates at s = 0 (then `background`
    must be DifferentiatedFields) or an extrinsic tangent field along phi(0).
    The map flow is recomputed with the ladder's substeps, so the background
    seen by u is bitwise the recorded one.
    """
    if isinstance(background, DifferentiatedFields):
        lad = background.ladder
        bg = background
    else:
        lad = background if ladder is None else ladder
        bg = None
    u0 = np.asarray(u0, dtype=float)
    phi0 = lad.maps[0]
    if u0.shape == phi0.shape:
        v0 = u0
    elif bg is not None and u0.shape == phi0.shape[:2] + (lad.m,):
        v0 = np.einsum("ija,ijad->ijd", u0, bg.frames(0))
    else:
        raise ValueError("u0 must be frame coordinates (n, n, m) with a frame background or a tangent field (n, n, m+1)")
    v0 = v0.copy()
    v0[lad.grid.margin_mask()] = 0.0
    if np.abs(minkowski_inner(phi0, v0)).max() > 1e-9 * max(1.0, np.abs(v0).max()):
        raise ValueError("u0 is not tangent to phi(0)")
    p = lad.params if params is None else params
    try:
        out = _sweep(lad.map_field(0), lad.s[-1], p, track_frames=False, e_inf=lad.e_inf, carry=v0,
                     record_mass=record_mass)
    except NumericalAbort as exc:
        raise NumericalAbort("covariant_heat", str(exc)) from exc
    if len(out) != len(lad) or not np.allclose(out.s, lad.s, rtol=1e-13, atol=0.0):
        raise NumericalAbort("covariant_heat", "re-sweep did not reproduce the ladder")
    return CovariantField(out, bg)


def check_pointwise_dominance(u: CovariantField, u0_abs=None) -> float:
    """max over ladder and cells of |u(s)| - w(s), w the discrete scalar heat flow of |u(0)|."""
    lad = u.ladder
    a0 = u.pointwise(0) if u0_abs is None else np.asarray(u0_abs, dtype=float)
    w = scalar_heat_rk2(a0, lad.grid, lad.s, lad.params)
    worst = -math.inf
    for k in range(len(lad)):
        worst = max(worst, float((u.pointwise(k) - w[k]).max()))
    return worst


def _edge_diff2(phi: np.ndarray, v: np.ndarray, I0, I1) -> tuple:
    """|P v(x + e_k) - v(x)|^2 for both edge directions, indexed by the lower cell."""
    n = phi.shape[0]
    out = []
    for axis, I in ((0, I0), (1, I1)):
        a = (slice(0, n - 1), slice(None)) if axis == 0 else (slice(None), slice(0, n - 1))
        b = (slice(1, n), slice(None)) if axis == 0 else (slice(None), slice(1, n))
        p, q = phi[a], phi[b]
        moved = v[b] + (minkowski_inner(p, v[b]) / (1.0 - I[a]))[..., None] * (p + q)
        diff = moved - v[a]
        full = np.zeros(phi.shape[:2])
        full[a] = _tnorm2(diff)
        out.append(full)
    return tuple(out)


def _gradient(phi: np.ndarray, grid: GridSpec, F0, I0, F1, I1) -> np.ndarray:
    g = np.zeros(phi.shape[:2] + (2, phi.shape[2]))
    K.centered_gradient(phi, F0, I0, F1, I1, 0.5 / grid.h, grid.lo, grid.hi, g)
    return g


def _wedge_density(v: np.ndarray, g: np.ndarray) -> np.ndarray:
    """sum_i |v ^ g_i|_F^2 / 2 = sum_i (|v|^2 |g_i|^2 - <v, g_i>^2) per cell."""
    vv = _tnorm2(v)
    out = np.zeros(v.shape[:2])
    for i in range(2):
        gi = g[:, :, i]
        out += np.maximum(vv * _tnorm2(gi) - minkowski_inner(v, gi) ** 2, 0.0)
    return out


def esd_terms(grid: GridSpec, phi: np.ndarray, v: np.ndarray | None):
    """(||psi_s||^2, ||D_x psi_t||^2, |psi_t ^ psi_x|^2 / 2) at one ladder point."""
    _, _, (F0, I0, F1, I1) = edge_distances(phi)
    tau = np.empty_like(phi)
    K.tension(phi, F0, I0, F1, I1, 1.0 / grid.h ** 2, grid.lo, grid.hi, tau)
    h2 = grid.h ** 2
    t1 = h2 * float(np.sum(_tnorm2(tau)))
    if v is None:
        return t1, 0.0, 0.0
    e0, e1 = _edge_diff2(phi, v, I0, I1)
    t2 = float(np.sum(e0) + np.sum(e1))
    g = _gradient(phi, grid, F0, I0, F1, I1)
    t3 = h2 * float(np.sum(_wedge_density(v, g)))
    return t1, t2, t3


def check_mass_diffusion(u: CovariantField) -> np.ndarray:
    """L2 residual of d|u|^2/ds = Lap|u|^2 - 2|D_x u|^2 - |u ^ psi_x|^2 per ladder point.

    The s-derivative is the second-order centered difference over the substeps
    adjacent to each ladder point; NaN where a neighbour substep is missing.
    """
    lad = u.ladder
    grid = lad.grid
    if lad.mass_rate is None:
        raise ValueError("covariant field was computed without mass records")
    res = np.full(len(lad), np.nan)
    lo, hi = grid.lo, grid.hi
    for k in range(1, len(lad)):
        rec = lad.mass_rate[k - 1]
        if rec.get("after") is None:
            continue
        phi, v = lad.maps[k], lad.carried[k]
        f0 = _tnorm2(v)
        fb, fa = rec["before"], rec["after"]
        db, da = rec["ds_before"], rec["ds_after"]
        dfds = (-da / (db * (da + db)) * fb + (da - db) / (da * db) * f0 + db / (da * (da + db)) * fa)
        _, _, (F0, I0, F1, I1) = edge_distances(phi)
        e0, e1 = _edge_diff2(phi, v, I0, I1)
        # each cell sees its four edges: sum |P v_nbr - v|^2 / h^2 = 2 |D_x u|^2
        edges = (e0 + e1)
        edges[1:, :] += e0[:-1, :]
        edges[:, 1:] += e1[:, :-1]
        g = _gradient(phi, grid, F0, I0, F1, I1)
        rhs = scalar_laplacian(f0, grid) - edges / grid.h ** 2 - 2.0 * _wedge_density(v, g)
        r = (dfds - rhs)[lo:hi, lo:hi]
        res[k] = float(np.sqrt(grid.h ** 2 * np.sum(r ** 2)))
    return res


def check_energy_inequality(u: CovariantField):
    """[(s_k, d/ds ||u||^2 + 2 ||D_x u||^2)], from the mass records at every interior ladder point."""
    lad = u.ladder
    grid = lad.grid
    out = []
    h2 = grid.h ** 2
    for k in range(1, len(lad)):
        rec = lad.mass_rate[k - 1]
        if rec.get("after") is None:
            continue
        phi, v = lad.maps[k], lad.carried[k]
        f0 = h2 * np.sum(_tnorm2(v))
        fb, fa = h2 * np.sum(rec["before"]), h2 * np.sum(rec["after"])
        db, da = rec["ds_before"], rec["ds_after"]
        dfds = (-da / (db * (da + db)) * fb + (da - db) / (da * db) * f0 + db / (da * (da + db)) * fa)
        _, _, (F0, I0, F1, I1) = edge_distances(phi)
        e0, e1 = _edge_diff2(phi, v, I0, I1)
        out.append((float(lad.s[k]), float(dfds + 2.0 * (np.sum(e0) + np.sum(e1)))))
    return out


@dataclass(frozen=True)
class ESDParams:
    """Stopping rule of the ESD pipeline.

    The ladder is extended until the remaining energy E_D + ||psi_t||^2 / 2
    drops below energy_tol times the initial energy (and, if flat_tol is set,
    the map is within flat_tol of its limit), or until s_max. The ladder always
    reaches at least s_floor.
    """
    ladder: LadderParams = LadderParams()
    energy_tol: float = 5e-3
    flat_tol: float | None = None
    s_max: float | None = None
    s_floor: float = 0.0


@dataclass
class ESDProfile:
    s: np.ndarray
    values: np.ndarray
    weights: np.ndarray
    tail_estimate: float
    tail_model: str
    s_max: float
    energy: float
    terms: np.ndarray = field(repr=False)
    remaining: float = 0.0
    ladder: HeatLadder | None = field(default=None, repr=False)
    first_correction: float = 0.0

    @property
    def integral(self) -> float:
        return float(np.dot(self.weights, self.values)) + self.first_correction

    @property
    def total(self) -> float:
        return self.integral + self.tail_estimate

    def samples(self):
        return list(zip(self.s.tolist(), self.values.tolist(), self.weights.tolist()))


def _stop_sweep(d: DataPair, p: ESDParams) -> HeatLadder:
    E = total_energy(d)
    if E == 0.0:
        return _sweep(d.phi0, p.ladder.value(p.ladder.first_exponent(d.grid.h)), p.ladder,
                      track_frames=False, carry=d.phi1)
    if p.s_max is not None and p.flat_tol is None and p.energy_tol is None:
        return _sweep(d.phi0, p.s_max, p.ladder, track_frames=False, carry=d.phi1)
    lp = p.ladder if p.s_max is None else LadderParams(p.ladder.rho, p.ladder.s_min, p.ladder.c, p.s_max)
    flat_tol = p.flat_tol if p.flat_tol is not None else math.inf
    return _sweep(d.phi0, None, lp, track_frames=False, carry=d.phi1, flat_tol=flat_tol,
                  energy_tol=p.energy_tol, s_floor=p.s_floor)


def profile_from_ladder(lad: HeatLadder, energy: float, with_tail: bool = True) -> ESDProfile:
    grid = lad.grid
    terms = np.array([esd_terms(grid, lad.maps[k], None if lad.carried is None else lad.carried[k])
                      for k in range(len(lad))])
    vals = terms.sum(axis=1)
    w = ladder_weights(lad.s)
    if with_tail and energy > 0.0:
        tail, model, _ = fit_tail(lad.s, vals)
    else:
        tail, model = 0.0, "zero"
    rem = float(lad.dirichlet[-1] + 0.5 * lad.carried_norm2[-1])
    corr = 0.0
    if lad.sub_s is not None and lad.sub_s.size and len(lad) > 1:
        sub = [sum(esd_terms(grid, lad.sub_maps[i], None if lad.sub_carried is None else lad.sub_carried[i]))
               for i in range(lad.sub_s.size)]
        corr = first_interval_correction(lad.s[1], vals[0], vals[1], lad.sub_s, sub)
    return ESDProfile(lad.s, vals, w, float(tail), model, float(lad.s[-1]), energy, terms, rem, lad, corr)


def esd(d: DataPair, params: ESDParams = ESDParams()) -> ESDProfile:
    """ESD(s) = ||psi_s||^2 + ||D_x psi_t||^2 + ||psi_t ^ psi_x||^2 / 2 on a heat ladder.

    Pipeline: heat flow of phi0 with psi_t(0) = phi1 carried by the covariant
    heat equation; per-ladder assembly; quadrature plus a fitted tail.
    """
    E = total_energy(d)
    if E == 0.0:
        s = np.array([0.0])
        return ESDProfile(s, np.zeros(1), np.zeros(1), 0.0, "zero", 0.0, 0.0, np.zeros((1, 3)), 0.0, None)
    try:
        lad = _stop_sweep(d, params)
    except NumericalAbort as exc:
        raise NumericalAbort("esd/heat_flow", str(exc)) from exc
    return profile_from_ladder(lad, E)


def energy_identity_residual(d: DataPair, params: ESDParams = ESDParams(), profile: ESDProfile | None = None,
                             eps: float = 1e-300) -> float:
    """|E - (int ESD + tail)| / max(E, eps)."""
    p = esd(d, params) if profile is None else profile
    E = total_energy(d) if profile is None else p.energy
    if E == 0.0:
        return 0.0
    return abs(E - p.total) / max(E, eps)


def support_distance(d: DataPair, rel: float = 1e-13) -> float:
    """Distance from the cells carrying energy density above rel * max to the edge of the active region."""
    from .grid_fields import energy_density
    t = energy_density(d).t00
    mask = t > rel * max(float(t.max()), 1e-300)
    g = d.grid
    if not mask.any():
        return g.active_extent()[1] - g.active_extent()[0]
    ii, jj = np.nonzero(mask)
    lo, hi = g.lo, g.hi - 1
    cells = min(ii.min() - lo, jj.min() - lo, hi - ii.max(), hi - jj.max())
    return max(cells, 0) * g.h


def symmetry_window(d1: DataPair, d2: DataPair, tol: float) -> float:
    """Largest s for which the clamped boundary is invisible at relative level tol."""
    D = min(support_distance(d1, tol), support_distance(d2, tol))
    return D * D / (4.0 * math.log(1.0 / tol))


def _apply_symmetry(d: DataPair, sym: str, param):
    if sym == "translate":
        return sym_translate(d, param)
    if sym == "time_reverse":
        return sym_time_reverse(d)
    if sym == "rotate":
        U = param if isinstance(param, LorentzRotation) else LorentzRotation(np.asarray(param, dtype=float))
        return sym_rotate(d, U)
    if sym == "dilate":
        return sym_dilate(d, float(param))
    raise ValueError(f"unknown symmetry {sym!r}")


@dataclass
class SymmetryReport:
    symmetry: str
    discrepancy: float
    window: tuple
    samples: int
    base: ESDProfile = field(repr=False)
    image: ESDProfile = field(repr=False)


def esd_symmetry_check(d: DataPair, sym: str, param=None, params: LadderParams = LadderParams(),
                       window_tol: float | None = None, s_window: float | None = None) -> SymmetryReport:
    """Compare ESD(sym(d)) with the transformed profile of ESD(d).

    Translations, rotations and time reversal leave ESD unchanged; a dilation
    x -> lam x gives lam^-2 ESD(s / lam^2). lam^2 must be a power of the ladder
    ratio so that the two ladders line up. The comparison runs over heat times
    below the window where the clamped box becomes visible (s <= D^2 / 4 ln(1/tol),
    D the distance from the energy support to the box edge). The discrepancy is
    sup |difference| / sup ESD over the window.
    """
    img = _apply_symmetry(d, sym, param)
    exact = sym != "dilate"
    tol = window_tol if window_tol is not None else (1e-13 if exact else 1e-3)
    s_w = symmetry_window(d, img, tol) if s_window is None else s_window
    if s_w <= 0.0:
        raise ValueError("symmetry leaves no room between the support and the box edge")
    shift = 0
    if not exact:
        lam = float(param)
        q = 2.0 * math.log(lam) / math.log(params.rho)
        shift = int(round(q))
        if abs(q - shift) > 1e-9:
            raise ValueError(f"lam^2 = {lam ** 2:g} is not a power of the ladder ratio {params.rho:g}")
    la = _sweep(d.phi0, s_w, params, track_frames=False, carry=d.phi1)
    pa = profile_from_ladder(la, total_energy(d), with_tail=False)
    lb = _sweep(img.phi0, s_w, params, track_frames=False, carry=img.phi1)
    pb = profile_from_ladder(lb, total_energy(img), with_tail=False)
    kb_first = params.first_exponent(d.grid.h)
    # ladder index k >= 1 has exponent kb_first + k - 1 in both profiles
    if exact:
        n = min(len(pa.s), len(pb.s))
        a = pa.values[:n]
        b = pb.values[:n]
        ref = pa.values[:n]
        s_used = pa.s[:n]
    else:
        # image at s = rho^(j + shift) against lam^-2 base at rho^j
        lam2 = float(param) ** 2
        idx_b = []
        idx_a = []
        for kb in range(1, len(pb.s)):
            ka = kb - shift
            if 1 <= ka < len(pa.s):
                idx_a.append(ka)
                idx_b.append(kb)
        if not idx_a:
            raise ValueError("the dilated ladder does not overlap the base ladder; increase the window")
        a = pa.values[idx_a] / lam2
        b = pb.values[idx_b]
        ref = b
        s_used = pb.s[idx_b]
    scale = max(float(np.max(np.abs(ref))), 1e-300)
    disc = float(np.max(np.abs(a - b))) / scale
    return SymmetryReport(sym, disc, (float(s_used[0]), float(s_used[-1])), len(s_used), pa, pb)
