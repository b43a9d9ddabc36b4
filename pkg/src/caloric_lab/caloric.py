"""Caloric gauge frames over a heat ladder, the differentiated fields and their identities.

Conventions: frames are stored as rows e_a(x) in R^{1+m}, the frame
coordinates of a tangent vector X are psi_a = <e_a, X>, and the connection is
D = d + A with A_ab = <e_a, nabla e_b>. Discretely A is read off link
matrices U_k(x)_ab = <e_a(x), P e_b(x + h e_k)> ~ I + h A_k(x + h e_k / 2).
With wedge (u ^ v) = u v^T - v u^T the identities checked here read

    D_1 psi_2 - D_2 psi_1 = 0
    d_1 A_2 - d_2 A_1 + [A_1, A_2] + psi_1 ^ psi_2 = 0
    psi_s = d_i psi_i + A_i psi_i
    A_x(s) = int_s^inf psi_s ^ psi_x ds'
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _stencils as K
from ._quadrature import first_interval_correction, fit_tail, ladder_weights
from .grid_fields import GridSpec, edge_distances
from .heat_solver import HeatLadder, default_e_inf, initial_frames
from .hyperbolic import HyperbolicPoint, OrthonormalFrame, eta, parallel_transport


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """Closest SO(m) matrix to each M[..., :, :] in Frobenius norm."""
    W, _, Vt = np.linalg.svd(M)
    R = W @ Vt
    det = np.linalg.det(R)
    if np.any(det < 0):
        W = W.copy()
        W[..., :, -1] *= np.where(det < 0, -1.0, 1.0)[..., None]
        R = W @ Vt
    return R


def frame_coords(frames: np.ndarray, X: np.ndarray) -> np.ndarray:
    """psi_a = <e_a, X> for frames (..., m, d) and X (..., d) or (..., k, d)."""
    m = frames.shape[-2]
    eX = frames * np.diag(eta(m))
    if X.ndim == frames.ndim - 1:
        return np.einsum("...ac,...c->...a", eX, X)
    return np.einsum("...ac,...kc->...ka", eX, X)


@dataclass
class FrameField:
    """Caloric frames e(s_k, x) = seed(s_k, x) R(x) with a per-cell constant rotation R."""
    ladder: HeatLadder = field(repr=False)
    e_inf: np.ndarray
    rotation: np.ndarray = field(repr=False)

    def frames(self, k: int) -> np.ndarray:
        return np.einsum("ijab,ijad->ijbd", self.rotation, self.ladder.frames[k])

    def frame(self, k: int, i: int, j: int) -> OrthonormalFrame:
        return OrthonormalFrame(HyperbolicPoint(self.ladder.maps[k][i, j]), self.frames(k)[i, j])

    @property
    def as_residual(self) -> np.ndarray:
        # a constant rotation per cell does not change the s-connection
        return self.ladder.as_residual


def construct_caloric_gauge(ladder: HeatLadder, e_inf=None, require_flat: bool = True) -> FrameField:
    """Caloric frames normalized to e_inf at the flat end of the ladder.

    The seed frames were moved forward in s by parallel transport along
    s -> phi(s, x); transport is linear and invertible, so aligning them at s_K
    with the transport of e_inf by one rotation per cell gives the frames that
    backward transport from s_K would produce.
    """
    if ladder.frames is None:
        raise ValueError("ladder was computed without frame tracking")
    if require_flat and not ladder.flat:
        raise ValueError("caloric gauge needs a flat ladder end (use flow_until_flat); " + ladder.note)
    base = ladder.base
    if isinstance(e_inf, OrthonormalFrame):
        e_inf = e_inf.axes
    e_inf = ladder.e_inf if e_inf is None else np.asarray(e_inf, dtype=float)
    OrthonormalFrame(HyperbolicPoint(base), e_inf)
    seed = ladder.frames[-1]
    phiK = ladder.maps[-1]
    m = ladder.m
    target = np.empty_like(seed)
    for a in range(m):
        target[:, :, a, :] = parallel_transport(base, phiK, np.broadcast_to(e_inf[a], phiK.shape))
    M = np.einsum("ijac,c,ijbc->ijab", seed, np.diag(eta(m)), target)
    return FrameField(ladder, e_inf, nearest_rotation(M))


@dataclass
class FieldSlice:
    """Differentiated fields at one heat time; shapes (n, n, m), (n, n, 2, m), (n, n, 2, m, m)."""
    s: float
    psi_s: np.ndarray
    psi_x: np.ndarray
    A_x: np.ndarray
    links: np.ndarray
    psi_t: np.ndarray | None = None
    A_t: np.ndarray | None = None


class DifferentiatedFields:
    """psi_s, psi_t, psi_x and A_x over a ladder, computed lazily per ladder index.

    psi_t comes from the covariant heat extension carried by the ladder
    (mode "covariant-heat"), from the s = 0 data only ("data") or is absent.
    """

    def __init__(self, gauge: FrameField, phi1=None, carried=None, cache: int = 4):
        self.gauge = gauge
        self.ladder = gauge.ladder
        self.grid: GridSpec = self.ladder.grid
        if carried is None and self.ladder.carried is not None:
            carried = self.ladder.carried
        if carried is not None:
            if len(carried) != len(self.ladder):
                raise ValueError("carried fields must cover every ladder point")
            self.mode = "covariant-heat"
        elif phi1 is not None:
            phi1 = np.asarray(phi1, dtype=float)
            if phi1.shape != self.ladder.maps[0].shape:
                raise ValueError("phi1 shape does not match the ladder")
            carried = [phi1]
            self.mode = "data"
        else:
            self.mode = "none"
        self._carried = carried
        self._cache: dict = {}
        self._cache_size = cache

    @property
    def s(self) -> np.ndarray:
        return self.ladder.s

    def __len__(self) -> int:
        return len(self.ladder)

    def frames(self, k: int) -> np.ndarray:
        return self.gauge.frames(k)

    def at(self, k: int) -> FieldSlice:
        if k < 0:
            k += len(self)
        if k in self._cache:
            return self._cache[k]
        phi = self.ladder.maps[k]
        e = self.frames(k)
        sl = slice_fields(self.grid, phi, e, self.ladder.s[k])
        if self._carried is not None and k < len(self._carried):
            sl.psi_t = frame_coords(e, self._carried[k])
        if len(self._cache) >= self._cache_size:
            self._cache.pop(next(iter(self._cache)))
        self._cache[k] = sl
        return sl


def derivative_fields(gauge: FrameField, phi1=None, carried=None) -> DifferentiatedFields:
    """Differentiated fields of a gauged ladder; psi_t from carried fields, else from phi1 at s = 0."""
    if not isinstance(gauge, FrameField):
        raise TypeError("derivative_fields needs a FrameField (see construct_caloric_gauge)")
    return DifferentiatedFields(gauge, phi1=phi1, carried=carried)


def slice_fields(grid: GridSpec, phi: np.ndarray, e: np.ndarray, s: float = 0.0) -> FieldSlice:
    n = grid.n
    d = phi.shape[2]
    m = d - 1
    _, _, (F0, I0, F1, I1) = edge_distances(phi)
    tau = np.empty_like(phi)
    K.tension(phi, F0, I0, F1, I1, 1.0 / grid.h ** 2, grid.lo, grid.hi, tau)
    g = np.zeros((n, n, 2, d))
    K.centered_gradient(phi, F0, I0, F1, I1, 0.5 / grid.h, grid.lo, grid.hi, g)
    U = np.empty((n, n, 2, m, m))
    K.link_matrices(phi, np.ascontiguousarray(e), I0, I1, U)
    return FieldSlice(s, frame_coords(e, tau), frame_coords(e, g), cell_connection(U, grid), U)


def _skew(M):
    return 0.5 * (M - np.swapaxes(M, -1, -2))


def cell_connection(U: np.ndarray, grid: GridSpec) -> np.ndarray:
    """A_k(x) = skew((U_k(x) - U_k(x - h e_k)^T) / 2h) on the active region, 0 elsewhere."""
    n = grid.n
    lo, hi = grid.lo, grid.hi
    A = np.zeros(U.shape)
    Ut = np.swapaxes(U, -1, -2)
    A[lo:hi, lo:hi, 0] = U[lo:hi, lo:hi, 0] - Ut[lo - 1:hi - 1, lo:hi, 0]
    A[lo:hi, lo:hi, 1] = U[lo:hi, lo:hi, 1] - Ut[lo:hi, lo - 1:hi - 1, 1]
    return _skew(A) / (2.0 * grid.h)


def connection_fields(f: DifferentiatedFields, k: int):
    """(A_t, A_x) at ladder index k from the link matrices; A_t is None without time data."""
    sl = f.at(k)
    return sl.A_t, sl.A_x


def wedge(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., :, None] * v[..., None, :] - v[..., :, None] * u[..., None, :]


def connection_fields_integral(f: DifferentiatedFields, k: int, tail: bool = False) -> np.ndarray:
    """A_x(s_k) = int_{s_k}^inf psi_s ^ psi_x ds by ladder quadrature from s_k to s_K."""
    s = f.s[k:]
    vals = []
    for kk in range(k, len(f)):
        sl = f.at(kk)
        vals.append(wedge(sl.psi_s[:, :, None, :], sl.psi_x))
    vals = np.array(vals)
    if k == 0:
        w = ladder_weights(s)
    else:
        w = np.zeros(len(s))
        for q in range(len(s) - 1):
            ds = s[q + 1] - s[q]
            w[q] += 0.5 * ds
            w[q + 1] += 0.5 * ds
    out = np.tensordot(w, vals, axes=1)
    if tail:
        nrm = np.sqrt(np.sum(vals ** 2, axis=tuple(range(1, vals.ndim))))
        t, _, _ = fit_tail(f.s[k:], nrm)
        if np.isfinite(t) and nrm[-1] > 0:
            out = out + vals[-1] * (t / nrm[-1])
    return out


def _interior(grid: GridSpec):
    return slice(grid.lo + 1, grid.hi - 1)


def _cdiff(F: np.ndarray, axis: int, h: float, grid: GridSpec):
    """Centered difference along a spatial axis, restricted to deep-interior cells."""
    r = _interior(grid)
    a, b = r.start, r.stop
    if axis == 0:
        return (F[a + 1:b + 1, a:b] - F[a - 1:b - 1, a:b]) / (2.0 * h)
    return (F[a:b, a + 1:b + 1] - F[a:b, a - 1:b - 1]) / (2.0 * h)


def _l2(grid: GridSpec, R: np.ndarray) -> float:
    return float(np.sqrt(grid.h ** 2 * np.sum(R ** 2)))


def torsion_residual(grid: GridSpec, sl: FieldSlice) -> float:
    r = _interior(grid)
    h = grid.h
    p1, p2 = sl.psi_x[:, :, 0], sl.psi_x[:, :, 1]
    A1, A2 = sl.A_x[r, r, 0], sl.A_x[r, r, 1]
    R = (_cdiff(p2, 0, h, grid) + np.einsum("...ab,...b->...a", A1, p2[r, r])
         - _cdiff(p1, 1, h, grid) - np.einsum("...ab,...b->...a", A2, p1[r, r]))
    return _l2(grid, R)


def curvature_residual(grid: GridSpec, sl: FieldSlice) -> float:
    r = _interior(grid)
    h = grid.h
    A1, A2 = sl.A_x[:, :, 0], sl.A_x[:, :, 1]
    a1, a2 = A1[r, r], A2[r, r]
    R = (_cdiff(A2, 0, h, grid) - _cdiff(A1, 1, h, grid) + a1 @ a2 - a2 @ a1
         + wedge(sl.psi_x[r, r, 0], sl.psi_x[r, r, 1]))
    return _l2(grid, R)


def heatflow_residual(grid: GridSpec, sl: FieldSlice) -> float:
    r = _interior(grid)
    h = grid.h
    p1, p2 = sl.psi_x[:, :, 0], sl.psi_x[:, :, 1]
    R = (sl.psi_s[r, r] - _cdiff(p1, 0, h, grid) - _cdiff(p2, 1, h, grid)
         - np.einsum("...ab,...b->...a", sl.A_x[r, r, 0], p1[r, r])
         - np.einsum("...ab,...b->...a", sl.A_x[r, r, 1], p2[r, r]))
    return _l2(grid, R)


def _per_s(f: DifferentiatedFields, fn, indices=None) -> np.ndarray:
    idx = range(len(f)) if indices is None else indices
    return np.array([fn(f.grid, f.at(k)) for k in idx])


def check_torsion(f: DifferentiatedFields, indices=None) -> np.ndarray:
    """||D_1 psi_2 - D_2 psi_1||_L2 per ladder point."""
    return _per_s(f, torsion_residual, indices)


def check_curvature(f: DifferentiatedFields, indices=None) -> np.ndarray:
    """||d_1 A_2 - d_2 A_1 + [A_1, A_2] + psi_1 ^ psi_2||_L2 per ladder point."""
    return _per_s(f, curvature_residual, indices)


def check_heatflow_eq(f: DifferentiatedFields, indices=None) -> np.ndarray:
    """||psi_s - d_i psi_i - A_i psi_i||_L2 per ladder point."""
    return _per_s(f, heatflow_residual, indices)


def check_as(f: DifferentiatedFields) -> np.ndarray:
    """Discrete A_s residual per ladder point (frame drift against transport over one substep)."""
    return np.asarray(f.gauge.as_residual)


@dataclass
class WaveTensionField:
    t: float
    w: np.ndarray = field(repr=False)

    def norm(self, grid: GridSpec) -> float:
        lo, hi = grid.lo, grid.hi
        return _l2(grid, self.w[lo:hi, lo:hi])


@dataclass
class TimeSlice:
    """Frame data at one time of a wave trajectory plus its two neighbours, at s = 0."""
    grid: GridSpec
    t: float
    dt: float
    phi: np.ndarray = field(repr=False)
    vel: np.ndarray = field(repr=False)
    frames: np.ndarray = field(repr=False)
    nbr_phi: tuple = field(repr=False)
    nbr_vel: tuple = field(repr=False)
    nbr_frames: tuple = field(repr=False)

    def fields(self) -> FieldSlice:
        sl = slice_fields(self.grid, self.phi, self.frames, 0.0)
        sl.psi_t = frame_coords(self.frames, self.vel)
        sl.A_t = self.time_connection()
        return sl

    def time_links(self):
        """U_t(t +/- dt) = <e_a(t), P e_b(t +/- dt)> per cell."""
        m = self.frames.shape[2]
        out = []
        for p, e in zip(self.nbr_phi, self.nbr_frames):
            moved = parallel_transport(p[:, :, None, :], self.phi[:, :, None, :], e)
            out.append(np.einsum("ijac,c,ijbc->ijab", self.frames, np.diag(eta(m)), moved))
        return out

    def time_connection(self) -> np.ndarray:
        Um, Up = self.time_links()
        return _skew(Up - np.swapaxes(Um, -1, -2)) / (2.0 * self.dt)


def radial_frames(phi: np.ndarray, base: np.ndarray, e_inf=None) -> np.ndarray:
    """e = P_{base -> phi} e_inf; agrees with the caloric gauge for data on one geodesic."""
    e_inf = default_e_inf(base) if e_inf is None else e_inf
    return initial_frames(phi, base, e_inf)


def trajectory_slice(tr, index: int, e_inf=None) -> TimeSlice:
    """Frame data at step `index` of a trajectory stored with neighbour steps."""
    grid = tr.grid
    base = tr.base
    if not 0 < index < len(tr.times) - 1:
        raise ValueError("time slice needs neighbours on both sides")
    dts = np.diff(tr.times[index - 1:index + 2])
    if abs(dts[0] - dts[1]) > 1e-12 * max(1.0, abs(dts[0])):
        raise ValueError("neighbouring slices must be equally spaced in time")
    frames = [radial_frames(tr.slices[i].phi0.values, base, e_inf) for i in (index - 1, index, index + 1)]
    return TimeSlice(grid, tr.times[index], float(dts[0]), tr.slices[index].phi0.values,
                     tr.slices[index].phi1, frames[1],
                     (tr.slices[index - 1].phi0.values, tr.slices[index + 1].phi0.values),
                     (tr.slices[index - 1].phi1, tr.slices[index + 1].phi1),
                     (frames[0], frames[2]))


def wave_tension(ts: TimeSlice) -> WaveTensionField:
    """w = -D_t psi_t + D_i psi_i at s = 0.

    D_i psi_i is the compact five-point covariant divergence (= psi_s(0)) and
    D_t psi_t = (U_t^+ psi_t^+ - U_t^- psi_t^-) / 2 dt uses transported neighbours.
    """
    if ts is None or ts.nbr_vel is None:
        raise ValueError("wave tension needs time data from a trajectory")
    grid = ts.grid
    phi = ts.phi
    lo, hi = grid.lo, grid.hi
    _, _, (F0, I0, F1, I1) = edge_distances(phi)
    tau = np.empty_like(phi)
    K.tension(phi, F0, I0, F1, I1, 1.0 / grid.h ** 2, lo, hi, tau)
    vm, vp = ts.nbr_vel
    pm, pp = ts.nbr_phi
    dtv = (parallel_transport(pp, phi, vp) - parallel_transport(pm, phi, vm)) / (2.0 * ts.dt)
    w = frame_coords(ts.frames, tau - dtv)
    w[grid.margin_mask()] = 0.0
    return WaveTensionField(ts.t, w)


def field_norms(f: DifferentiatedFields):
    """(s, ||psi_s||^2 per ladder point, ||psi_t(0)||^2) with L2 norms h^2 sum."""
    h2 = f.grid.h ** 2
    ps = np.array([h2 * np.sum(f.at(k).psi_s ** 2) for k in range(len(f))])
    pt = 0.0 if f.mode == "none" else h2 * float(np.sum(f.at(0).psi_t ** 2))
    return f.s, ps, pt


def _stack_psi_s(f: DifferentiatedFields, K_: int):
    return [f.at(k).psi_s for k in range(K_)]


def energy_metric(f1: DifferentiatedFields, f2, quotient: bool = False, with_tail: bool = True) -> float:
    """(int_0^inf ||psi_s1 - psi_s2||^2 ds + ||psi_t1(0) - psi_t2(0)||^2 / 2)^(1/2).

    f2 may be None for the zero field, whose tail is then exact. Ladders are compared on their common
    prefix of s-values. With quotient=True the second field is first rotated by
    the single U in SO(m) minimizing the distance (orthogonal Procrustes).
    """
    grid = f1.grid
    h2 = grid.h ** 2
    if f2 is not None:
        if f2.grid != grid:
            raise ValueError("energy metric needs fields on the same grid")
        Kc = min(len(f1), len(f2))
        if not np.allclose(f1.s[:Kc], f2.s[:Kc], rtol=1e-12, atol=0.0):
            raise ValueError("energy metric needs a common ladder")
    else:
        Kc = len(f1)
    s = f1.s[:Kc]
    w = ladder_weights(s)
    m = f1.ladder.m
    U = np.eye(m)
    pt1 = f1.at(0).psi_t if f1.mode != "none" else np.zeros((grid.n, grid.n, m))
    pt2 = None
    if f2 is not None:
        pt2 = f2.at(0).psi_t if f2.mode != "none" else np.zeros_like(pt1)
    if quotient and f2 is not None:
        M = 0.5 * h2 * np.einsum("ija,ijb->ab", pt1, pt2)
        for k in range(Kc):
            M += w[k] * h2 * np.einsum("ija,ijb->ab", f1.at(k).psi_s, f2.at(k).psi_s)
        U = nearest_rotation(M)
    diffs = np.empty(Kc)
    for k in range(Kc):
        a = f1.at(k).psi_s
        if f2 is not None:
            a = a - np.einsum("ab,ijb->ija", U, f2.at(k).psi_s)
        diffs[k] = h2 * np.sum(a ** 2)
    dt = pt1 if pt2 is None else pt1 - np.einsum("ab,ijb->ija", U, pt2)
    total = float(np.dot(w, diffs)) + 0.5 * h2 * float(np.sum(dt ** 2))
    lad = f1.ladder
    if f2 is None and lad.sub_s is not None and lad.sub_s.size and Kc > 1:
        from .spectral import esd_terms
        sub = [esd_terms(grid, phi, None)[0] for phi in lad.sub_maps]
        total += first_interval_correction(s[1], diffs[0], diffs[1], lad.sub_s, sub)
    if with_tail and f2 is None:
        # int_{s_K}^inf ||psi_s||^2 ds is the Dirichlet energy left at s_K
        total += float(f1.ladder.dirichlet[Kc - 1])
    elif with_tail:
        t, _, _ = fit_tail(s, diffs)
        if np.isfinite(t):
            total += t
    return float(np.sqrt(max(total, 0.0)))


def rotate_fields(f: DifferentiatedFields, U) -> DifferentiatedFields:
    """The same fields in the gauge e_inf -> U e_inf, so psi -> U psi and A -> U A U^T."""
    U = np.asarray(U, dtype=float)
    e_new = U @ f.gauge.e_inf
    g = construct_caloric_gauge(f.ladder, e_new, require_flat=False)
    out = DifferentiatedFields(g, carried=f._carried if f.mode == "covariant-heat" else None,
                               phi1=f._carried[0] if f.mode == "data" else None)
    return out
