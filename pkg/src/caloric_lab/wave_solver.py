"""Wave maps into the hyperboloid by a constrained (RATTLE) leapfrog.

Extrinsically phi_tt = Lap phi - (|grad phi|^2 - |phi_t|^2) phi, i.e. the
tangential part of the acceleration is the tension and the normal part is
whatever keeps <phi, phi> = -1. One step:

    p~     = p + dt/2 tau(q)
    q'     = sqrt(1 + dt^2 |p~|^2) q + dt p~          (exact constraint)
    p'     = P_T(q') ((q' - q)/dt + dt/2 tau(q'))

tau is the intrinsic five-point tension, the gradient of the discrete
Dirichlet energy, so the scheme is symplectic and time reversible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _stencils as K
from .errors import NumericalAbort
from .grid_fields import DataPair, GridSpec, MapField, edge_distances, energy_density, local_energy, total_energy
from .hyperbolic import minkowski_inner, project_to_tangent


@dataclass
class WaveTrajectory:
    grid: GridSpec
    base: np.ndarray
    times: list
    slices: list = field(repr=False)
    cfl: float
    dt: float
    scheme: dict = field(default_factory=dict)
    constraint_drift: list = field(default_factory=list)
    grad_sup: list = field(default_factory=list)

    def index_of(self, t: float) -> int:
        k = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"t = {t} is not a stored time")
        return k


class _Rattle:
    def __init__(self, grid: GridSpec, q: np.ndarray, p: np.ndarray):
        self.grid = grid
        n = grid.n
        self.q = np.array(q, dtype=float)
        self.p = np.array(p, dtype=float)
        self.tau = np.empty_like(self.q)
        self.edges = [np.zeros((n, n)) for _ in range(6)]
        self.inv_h2 = 1.0 / grid.h ** 2
        self.active = ~grid.margin_mask()
        self._tension(self.q)

    def _tension(self, q):
        F0, I0, D0, F1, I1, D1 = self.edges
        K.edge_geometry(q, F0, I0, D0, F1, I1, D1)
        K.tension(q, F0, I0, F1, I1, self.inv_h2, self.grid.lo, self.grid.hi, self.tau)

    def step(self, dt: float):
        q, p = self.q, self.p
        pt = p + 0.5 * dt * self.tau
        pp = np.maximum(minkowski_inner(pt, pt), 0.0)
        qn = np.sqrt(1.0 + dt * dt * pp)[..., None] * q + dt * pt
        qn /= np.sqrt(-minkowski_inner(qn, qn))[..., None]
        qn[~self.active] = q[~self.active]
        half = (qn - q) / dt
        self._tension(qn)
        pn = project_to_tangent(qn, half + 0.5 * dt * self.tau)
        pn[~self.active] = 0.0
        self.q, self.p = qn, pn


def evolve_wave(d0: DataPair, t_span, cfl: float, output_times=None) -> WaveTrajectory:
    """Evolve from t_span[0] to t_span[1] with dt = cfl h (shortened so the span is a whole number of steps).

    output_times: stored times (snapped to steps); default every step.
    """
    if not 0.0 < cfl <= 0.5:
        raise ValueError("cfl must lie in (0, 0.5]")
    t0, t1 = map(float, t_span)
    if not (math.isfinite(t0) and math.isfinite(t1)):
        raise ValueError("t_span must be finite")
    grid = d0.grid
    span = t1 - t0
    nsteps = max(1, int(math.ceil(abs(span) / (cfl * grid.h) - 1e-9))) if span != 0.0 else 0
    dt = span / nsteps if nsteps else 0.0
    if output_times is None:
        keep = set(range(nsteps + 1))
    else:
        keep = {int(round((t - t0) / dt)) if dt else 0 for t in output_times}
        if any(k < 0 or k > nsteps for k in keep):
            raise ValueError("output time outside t_span")
    eng = _Rattle(grid, d0.phi0.values, d0.phi1)
    tr = WaveTrajectory(grid, d0.base, [], [], cfl, dt,
                        {"scheme": "rattle", "force": "intrinsic five-point tension", "steps": nsteps})

    def record(k):
        drift = float(np.abs(minkowski_inner(eng.q, eng.q) + 1.0).max())
        tr.constraint_drift.append(drift)
        D0, D1 = eng.edges[2], eng.edges[5]
        tr.grad_sup.append(float(max(D0.max(), D1.max())) / grid.h)
        if k in keep:
            tr.times.append(t0 + k * dt)
            tr.slices.append(DataPair(MapField(grid, eng.q.copy(), d0.base), eng.p.copy()))

    record(0)
    for k in range(1, nsteps + 1):
        eng.step(dt)
        if not (np.isfinite(eng.q).all() and np.isfinite(eng.p).all()):
            raise NumericalAbort("evolve_wave", f"nonfinite values at step {k}")
        record(k)
        if tr.constraint_drift[-1] > 1e-6:
            raise NumericalAbort("evolve_wave", f"constraint drift {tr.constraint_drift[-1]:.3e} at step {k}")
    return tr


def energy_series(tr: WaveTrajectory):
    return [(t, total_energy(s)) for t, s in zip(tr.times, tr.slices)]


def relative_drift(tr: WaveTrajectory) -> float:
    E = np.array([e for _, e in energy_series(tr)])
    if E[0] == 0.0:
        return float(np.abs(E).max())
    return float(np.abs(E - E[0]).max() / E[0])


def extrinsic_laplacian(q: np.ndarray, grid: GridSpec) -> np.ndarray:
    lo, hi = grid.lo, grid.hi
    out = np.zeros_like(q)
    out[lo:hi, lo:hi] = (q[lo + 1:hi + 1, lo:hi] + q[lo - 1:hi - 1, lo:hi] + q[lo:hi, lo + 1:hi + 1]
                         + q[lo:hi, lo - 1:hi - 1] - 4.0 * q[lo:hi, lo:hi]) / grid.h ** 2
    return out


def wave_residual(tr: WaveTrajectory, t: float) -> np.ndarray:
    """|P_T(-(q+ - 2q + q-)/dt^2 + Lap q)| per cell, from three consecutive stored steps."""
    k = tr.index_of(t)
    if not 0 < k < len(tr.times) - 1:
        raise ValueError("t must be interior to the trajectory")
    dts = np.diff(tr.times[k - 1:k + 2])
    if abs(dts[0] - dts[1]) > 1e-12 or abs(dts[0] - tr.dt) > 1e-12:
        raise ValueError("residual needs consecutive steps around t")
    qm, q, qp = (tr.slices[i].phi0.values for i in (k - 1, k, k + 1))
    acc = (qp - 2.0 * q + qm) / tr.dt ** 2
    r = project_to_tangent(q, extrinsic_laplacian(q, tr.grid) - acc)
    r[tr.grid.margin_mask()] = 0.0
    return np.sqrt(np.maximum(minkowski_inner(r, r), 0.0))


def field_residual(grid: GridSpec, q_prev, q, q_next, dt: float) -> np.ndarray:
    """The same residual for an arbitrary triple of map slices (negative controls)."""
    acc = (q_next - 2.0 * q + q_prev) / dt ** 2
    r = project_to_tangent(q, extrinsic_laplacian(q, grid) - acc)
    r[grid.margin_mask()] = 0.0
    return np.sqrt(np.maximum(minkowski_inner(r, r), 0.0))


def lightcone_leak(tr: WaveTrajectory, center, r0: float, t0: float | None = None):
    """[(t, energy outside B(center, r0 + |t - t0|))]."""
    t0 = tr.times[0] if t0 is None else t0
    out = []
    for t, s in zip(tr.times, tr.slices):
        e = energy_density(s)
        out.append((t, max(e.total() - local_energy(e, center, r0 + abs(t - t0)), 0.0)))
    return out


def oracle_error(tr: WaveTrajectory, u0, u1) -> float:
    """Sup over stored times of |u - u_oracle| for data on the geodesic through e1."""
    from . import oracles
    from .hyperbolic import log_map
    grid = tr.grid
    m = tr.base.size - 1
    b = np.broadcast_to(tr.base, (grid.n, grid.n, m + 1))
    e1 = project_to_tangent(tr.base, np.eye(m + 1)[1])
    e1 = e1 / math.sqrt(minkowski_inner(e1, e1))
    worst = 0.0
    t0 = tr.times[0]
    for t, s in zip(tr.times, tr.slices):
        u = minkowski_inner(log_map(b, s.phi0.values), e1)
        ref, _ = oracles.wave(u0, u1, grid, t - t0)
        worst = max(worst, float(np.abs(u - ref).max()))
    return worst
