"""Frequency scale, heat-time gaps, spatial concentration and normalization of data."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid_fields import DataPair, EnergyDensityField, GridSpec, edge_distances, sym_dilate, sym_translate
from .heat_solver import HeatLadder
from .hyperbolic import minkowski_inner
from .spectral import ESDProfile
from . import _stencils as K


def cumulative_mass(s, values, first: float = 0.0) -> np.ndarray:
    """C_k = int_0^{s_k} ESD ds with the ladder rule (consistent with the quadrature weights).

    first is the refinement of the [0, s_1] piece carried by an ESDProfile.
    """
    s = np.asarray(s, dtype=float)
    f = np.asarray(values, dtype=float)
    c = np.zeros_like(s)
    for k in range(1, s.size):
        if k == 1:
            inc = 0.5 * (s[1] - s[0]) * (f[0] + f[1]) + first
        else:
            inc = 0.5 * math.log(s[k] / s[k - 1]) * (s[k - 1] * f[k - 1] + s[k] * f[k])
        c[k] = c[k - 1] + inc
    return c


def mass_below(s, values, x: float, first: float = 0.0) -> float:
    """int_0^x ESD ds for the interpolant behind the ladder rule (linear in s on [0, s_1],
    s ESD linear in ln s above); the last sample is held beyond the ladder end."""
    s = np.asarray(s, dtype=float)
    f = np.asarray(values, dtype=float)
    c = cumulative_mass(s, f, first)
    if x <= 0.0:
        return 0.0
    if x >= s[-1]:
        return float(c[-1])
    k = int(np.searchsorted(s, x, side="right")) - 1
    if k == 0:
        t = x / s[1]
        # trapezoid of the linear interpolant on [0, x]
        fx = f[0] + t * (f[1] - f[0])
        # the refinement of the first piece is spread linearly so C stays continuous at s_1
        return float(0.5 * x * (f[0] + fx) + first * t)
    dl = math.log(s[k + 1] / s[k])
    l = math.log(x / s[k])
    g0, g1 = s[k] * f[k], s[k + 1] * f[k + 1]
    return float(c[k] + g0 * l + (g1 - g0) * l * l / (2.0 * dl))


def find_frequency_scale(p: ESDProfile, eps: float) -> float:
    """Smallest ladder abscissa s0 with int_0^{s0} ESD >= eps / 2."""
    total = p.integral
    if not total > 0.0:
        raise ValueError("profile carries no energy")
    if not 0.0 < eps < total:
        raise ValueError(f"eps must lie in (0, {total:.6g}), the integrated profile")
    c = cumulative_mass(p.s, p.values, p.first_correction)
    k = int(np.argmax(c >= 0.5 * eps * (1.0 - 1e-15)))
    return float(p.s[k])


@dataclass
class GapResult:
    s_prime: float
    K: float
    mass: float
    floor_met: bool
    threshold: float


def pigeonhole_gap(p: ESDProfile, s_lo: float, s_hi: float, K_list, floor: float = 1e-12) -> GapResult:
    """Search ladder centres s' in [s_lo, s_hi] and K (largest first) for a quiet annulus.

    The annulus mass is int_{s'/K}^{K s'} ESD ds. A pair qualifies when its mass
    is at most max(K^-100, floor) times the integrated profile; for the largest
    K with a qualifying centre the least massive centre is returned. Without
    any qualifying pair the overall least massive pair is returned with
    floor_met = False. Ties go to the smaller K, then the smaller s'. Only
    annuli that end inside the sampled range are considered; past the last
    ladder point the missing mass would look like a gap.
    """
    if not s_lo < s_hi:
        raise ValueError("empty heat-time range")
    Ks = sorted({float(k) for k in K_list}, reverse=True)
    if not Ks or min(Ks) <= 1.0:
        raise ValueError("K values must exceed 1")
    cands = [float(x) for x in p.s if s_lo * (1 - 1e-12) <= x <= s_hi * (1 + 1e-12) and x > 0.0]
    if not cands:
        raise ValueError("no ladder point in the requested range")
    total = p.integral
    best_any = None
    for K_ in Ks:
        thr = max(K_ ** -100.0, floor) * total
        best = None
        for sp in cands:
            if K_ * sp > p.s[-1] * (1 + 1e-12):
                continue
            fc = p.first_correction
            m = mass_below(p.s, p.values, K_ * sp, fc) - mass_below(p.s, p.values, sp / K_, fc)
            m = max(m, 0.0)
            if best is None or m < best[1]:
                best = (sp, m)
            key = (m, K_, sp)
            if best_any is None or key < best_any[0]:
                best_any = (key, thr)
        if best is not None and best[1] <= thr:
            return GapResult(best[0], K_, best[1], True, thr)
    if best_any is None:
        raise ValueError("no annulus fits inside the sampled heat-time range")
    (m, K_, sp), thr = best_any
    return GapResult(sp, K_, m, False, thr)


def _sat(a: np.ndarray) -> np.ndarray:
    s = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    s[1:, 1:] = a.cumsum(axis=0).cumsum(axis=1)
    return s


def _disk_offsets(r_cells: float):
    R = int(math.floor(r_cells))
    di, dj = np.meshgrid(np.arange(-R, R + 1), np.arange(-R, R + 1), indexing="ij")
    keep = di ** 2 + dj ** 2 <= r_cells ** 2 * (1.0 + 1e-12)
    return di[keep], dj[keep]


def find_spatial_center(e: EnergyDensityField, r: float):
    """(x*, captured): the cell centre maximizing the energy in the closed disk of radius r.

    Square sums from a summed-area table bound every disk from above; disks are
    evaluated exactly in order of decreasing bound until no bound can beat the
    best exact value. The result equals an exhaustive scan, ties going to the
    lexicographically first cell.
    """
    if not r > 0.0:
        raise ValueError("radius must be positive")
    g = e.grid
    n = g.n
    t = e.t00 * g.h ** 2
    rc = r / g.h
    R = int(math.floor(rc * (1.0 + 1e-12)))
    S = _sat(t)
    i = np.arange(n)
    i0 = np.clip(i - R, 0, n)
    i1 = np.clip(i + R + 1, 0, n)
    bound = (S[i1[:, None], i1[None, :]] - S[i0[:, None], i1[None, :]]
             - S[i1[:, None], i0[None, :]] + S[i0[:, None], i0[None, :]])
    di, dj = _disk_offsets(rc)
    order = np.lexsort((np.arange(n * n), -bound.ravel()))
    best_val = -1.0
    best_idx = None
    for flat in order:
        b = bound.flat[flat]
        if b < best_val:
            break
        ci, cj = divmod(int(flat), n)
        ii, jj = ci + di, cj + dj
        ok = (ii >= 0) & (ii < n) & (jj >= 0) & (jj < n)
        val = float(t[ii[ok], jj[ok]].sum())
        if val > best_val or (val == best_val and flat < best_idx):
            best_val, best_idx = val, int(flat)
    ci, cj = divmod(best_idx, n)
    return (float(g.axis[ci]), float(g.axis[cj])), best_val


def concentration_radius(e: EnergyDensityField, x_star, eps: float) -> float:
    """Smallest cell distance R from x* with energy outside the closed disk B(x*, R) at most eps."""
    g = e.grid
    total = e.total()
    if eps >= total:
        return 0.0
    X, Y = g.mesh()
    dist = np.hypot(X - x_star[0], Y - x_star[1]).ravel()
    w = (e.t00 * g.h ** 2).ravel()
    order = np.argsort(dist, kind="stable")
    ds = dist[order]
    inside = np.cumsum(w[order])
    # group equal distances so a radius includes every cell at that distance
    last = np.r_[ds[1:] != ds[:-1], True]
    radii = ds[last]
    exterior = total - inside[last]
    k = int(np.argmax(exterior <= eps))
    return float(radii[k])


def radius_table(e: EnergyDensityField, x_star, eps_list):
    return [(float(eps), concentration_radius(e, x_star, eps)) for eps in sorted(eps_list)]


def normalize_data(d: DataPair, s0: float, x_star) -> DataPair:
    """Translate x* to the origin, then rescale so that the frequency scale s0 becomes 1.

    ESD transforms as lam^-2 ESD(s / lam^2) under x -> lam x, so lam = s0^(-1/2).
    """
    if not s0 > 0.0:
        raise ValueError("scale must be positive")
    g = d.grid
    shift = -np.asarray(x_star, dtype=float)
    shift = np.round(shift / g.h) * g.h
    out = sym_translate(d, shift) if np.any(shift != 0.0) else d
    lam = s0 ** -0.5
    if abs(lam - 1.0) > 1e-12:
        out = sym_dilate(out, lam)
    return out


def _tension_density(grid: GridSpec, phi: np.ndarray) -> np.ndarray:
    _, _, (F0, I0, F1, I1) = edge_distances(phi)
    tau = np.empty_like(phi)
    K.tension(phi, F0, I0, F1, I1, 1.0 / grid.h ** 2, grid.lo, grid.hi, tau)
    return np.maximum(minkowski_inner(tau, tau), 0.0)


@dataclass
class TightnessTable:
    R: np.ndarray
    psi_s_exterior: np.ndarray
    psi_t_exterior: np.ndarray
    s_window: tuple
    s_fixed: float

    def exponent(self, which: str = "psi_s") -> float:
        """Slope of log(exterior mass) against log R over the entries with positive mass."""
        y = self.psi_s_exterior if which == "psi_s" else self.psi_t_exterior
        ok = y > 1e-300
        if ok.sum() < 2:
            return -math.inf
        return float(np.polyfit(np.log(self.R[ok]), np.log(y[ok]), 1)[0])

    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.psi_s_exterior) <= 1e-15 * max(self.psi_s_exterior.max(), 1e-300))
                    and np.all(np.diff(self.psi_t_exterior) <= 1e-15 * max(self.psi_t_exterior.max(), 1e-300)))


def tightness_report(ladder: HeatLadder, s_window, R_list, s_fixed: float | None = None) -> TightnessTable:
    """Exterior masses for each R: int over s_window of |psi_s|^2 outside B(0, 2R), and
    |psi_t(s_fixed)|^2 outside B(0, 2R). Frame norms are gauge invariant, so the
    extrinsic fields of the ladder are used directly."""
    from ._quadrature import ladder_weights
    g = ladder.grid
    s_lo, s_hi = s_window
    sel = [k for k in range(len(ladder)) if s_lo * (1 - 1e-12) <= ladder.s[k] <= s_hi * (1 + 1e-12)]
    if len(sel) < 2:
        raise ValueError("ladder does not cover the heat-time window")
    X, Y = g.mesh()
    r = np.hypot(X, Y)
    h2 = g.h ** 2
    ss = ladder.s[sel]
    w = np.zeros(len(sel))
    for q in range(len(sel) - 1):
        dl = ss[q + 1] - ss[q]
        w[q] += 0.5 * dl
        w[q + 1] += 0.5 * dl
    dens = np.zeros((g.n, g.n))
    for wk, k in zip(w, sel):
        dens += wk * _tension_density(g, ladder.maps[k])
    if s_fixed is None:
        s_fixed = float(ss[0])
    kf = ladder.index_of(s_fixed)
    if ladder.carried is not None:
        v = ladder.carried[kf]
        tdens = np.maximum(minkowski_inner(v, v), 0.0)
    else:
        tdens = np.zeros((g.n, g.n))
    Rs = np.array(sorted(float(x) for x in R_list))
    ext_s = np.array([h2 * dens[r > 2.0 * R].sum() for R in Rs])
    ext_t = np.array([h2 * tdens[r > 2.0 * R].sum() for R in Rs])
    return TightnessTable(Rs, ext_s, ext_t, (float(ss[0]), float(ss[-1])), float(s_fixed))


@dataclass
class LocalizationReport:
    s_scale: float
    x_center: tuple
    captured: float
    radius_table: list
    gap: GapResult | None = None
    tightness: TightnessTable | None = field(default=None, repr=False)

    def record(self) -> dict:
        out = {"s_scale": self.s_scale, "x_center_0": self.x_center[0], "x_center_1": self.x_center[1],
               "captured": self.captured}
        for eps, R in self.radius_table:
            out[f"radius_eps_{eps:.6g}"] = R
        if self.gap is not None:
            out.update({"gap_s_prime": self.gap.s_prime, "gap_K": self.gap.K, "gap_mass": self.gap.mass,
                        "gap_floor_met": int(self.gap.floor_met)})
        return out
