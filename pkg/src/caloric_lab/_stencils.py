"""Compiled per-cell kernels shared by the wave and heat solvers.

Fields are C-contiguous float64 arrays: maps and tangent fields (n, n, m+1),
frames (n, n, m, m+1). Edge arrays are indexed by the lower cell: entry (i, j)
of an axis-0 array refers to the edge (i, j)-(i+1, j), axis-1 to (i, j)-(i, j+1).
The active region is [lo, hi) x [lo, hi); cells outside it are held fixed.

Every cell is written by exactly one loop iteration and reductions are left
to the caller, so results do not depend on the thread count.
"""
import numpy as np
from numba import njit, prange


@njit(inline="always")
def _asinh_ratio(x):
    # asinh(x)/x; the series branch keeps full precision for tiny x
    if x < 2e-2:
        x2 = x * x
        return 1.0 + x2 * (-1.0 / 6.0 + x2 * (3.0 / 40.0 + x2 * (-15.0 / 336.0 + x2 * (105.0 / 3456.0))))
    return np.arcsinh(x) / x


@njit(inline="always")
def _mink(a, b, d):
    s = -a[0] * b[0]
    for c in range(1, d):
        s += a[c] * b[c]
    return s


@njit(parallel=True, cache=True)
def edge_geometry(phi, F0, I0, D0, F1, I1, D1):
    """Log-map coefficients of every grid edge.

    log_p q = F (q + I p) and log_q p = F (p + I q), with I = <p, q>; D is the distance.
    """
    n = phi.shape[0]
    d = phi.shape[2]
    for i in prange(n):
        for j in range(n):
            for axis in range(2):
                a = i + (1 - axis)
                b = j + axis
                if a >= n or b >= n:
                    continue
                ip = -phi[i, j, 0] * phi[a, b, 0]
                for c in range(1, d):
                    ip += phi[i, j, c] * phi[a, b, c]
                w0 = phi[a, b, 0] + ip * phi[i, j, 0]
                ww = -w0 * w0
                for c in range(1, d):
                    wc = phi[a, b, c] + ip * phi[i, j, c]
                    ww += wc * wc
                nw = np.sqrt(max(ww, 0.0))
                f = _asinh_ratio(nw)
                if axis == 0:
                    F0[i, j] = f
                    I0[i, j] = ip
                    D0[i, j] = f * nw
                else:
                    F1[i, j] = f
                    I1[i, j] = ip
                    D1[i, j] = f * nw


@njit(parallel=True, cache=True)
def tension(phi, F0, I0, F1, I1, inv_h2, lo, hi, out):
    """Five-point intrinsic Laplacian sum_k log_x(x_k) / h^2 on the active region."""
    n = phi.shape[0]
    d = phi.shape[2]
    for i in prange(n):
        for j in range(n):
            if i < lo or i >= hi or j < lo or j >= hi:
                for c in range(d):
                    out[i, j, c] = 0.0
                continue
            for c in range(d):
                p = phi[i, j, c]
                out[i, j, c] = (F0[i, j] * (phi[i + 1, j, c] + I0[i, j] * p)
                                + F0[i - 1, j] * (phi[i - 1, j, c] + I0[i - 1, j] * p)
                                + F1[i, j] * (phi[i, j + 1, c] + I1[i, j] * p)
                                + F1[i, j - 1] * (phi[i, j - 1, c] + I1[i, j - 1] * p)) * inv_h2


@njit(parallel=True, cache=True)
def centered_gradient(phi, F0, I0, F1, I1, inv_2h, lo, hi, g):
    """g[i, j, k] = (log_x(x + e_k) - log_x(x - e_k)) / 2h on the active region, 0 elsewhere."""
    n = phi.shape[0]
    d = phi.shape[2]
    for i in prange(n):
        for j in range(n):
            if i < lo or i >= hi or j < lo or j >= hi:
                for c in range(d):
                    g[i, j, 0, c] = 0.0
                    g[i, j, 1, c] = 0.0
                continue
            for c in range(d):
                p = phi[i, j, c]
                g[i, j, 0, c] = (F0[i, j] * (phi[i + 1, j, c] + I0[i, j] * p)
                                 - F0[i - 1, j] * (phi[i - 1, j, c] + I0[i - 1, j] * p)) * inv_2h
                g[i, j, 1, c] = (F1[i, j] * (phi[i, j + 1, c] + I1[i, j] * p)
                                 - F1[i, j - 1] * (phi[i, j - 1, c] + I1[i, j - 1] * p)) * inv_2h


@njit(inline="always")
def _transport_coef(phi, v, i, j, a, b, ipq, d):
    # P_{(a,b) -> (i,j)} v(a, b) = v(a, b) + coef (phi(a, b) + phi(i, j))
    s = -phi[i, j, 0] * v[a, b, 0]
    for k in range(1, d):
        s += phi[i, j, k] * v[a, b, k]
    return s / (1.0 - ipq)


@njit(parallel=True, cache=True)
def covariant_rhs(phi, v, I0, I1, g, inv_h2, lo, hi, out):
    """Discrete D_i D_i v - (v ^ g_i) g_i with transported neighbours, extrinsic form."""
    n = phi.shape[0]
    d = phi.shape[2]
    for i in prange(n):
        for j in range(n):
            if i < lo or i >= hi or j < lo or j >= hi:
                for c in range(d):
                    out[i, j, c] = 0.0
                continue
            vg0 = -v[i, j, 0] * g[i, j, 0, 0]
            vg1 = -v[i, j, 0] * g[i, j, 1, 0]
            gg0 = -g[i, j, 0, 0] * g[i, j, 0, 0]
            gg1 = -g[i, j, 1, 0] * g[i, j, 1, 0]
            for c in range(1, d):
                vg0 += v[i, j, c] * g[i, j, 0, c]
                vg1 += v[i, j, c] * g[i, j, 1, c]
                gg0 += g[i, j, 0, c] * g[i, j, 0, c]
                gg1 += g[i, j, 1, c] * g[i, j, 1, c]
            cn = _transport_coef(phi, v, i, j, i + 1, j, I0[i, j], d)
            cs = _transport_coef(phi, v, i, j, i - 1, j, I0[i - 1, j], d)
            ce = _transport_coef(phi, v, i, j, i, j + 1, I1[i, j], d)
            cw = _transport_coef(phi, v, i, j, i, j - 1, I1[i, j - 1], d)
            for c in range(d):
                p = phi[i, j, c]
                lap = (v[i + 1, j, c] + cn * (phi[i + 1, j, c] + p)
                       + v[i - 1, j, c] + cs * (phi[i - 1, j, c] + p)
                       + v[i, j + 1, c] + ce * (phi[i, j + 1, c] + p)
                       + v[i, j - 1, c] + cw * (phi[i, j - 1, c] + p)
                       - 4.0 * v[i, j, c]) * inv_h2
                curv = v[i, j, c] * (gg0 + gg1) - g[i, j, 0, c] * vg0 - g[i, j, 1, c] * vg1
                out[i, j, c] = lap - curv


@njit(parallel=True, cache=True)
def exp_field(phi, v, scale, lo, hi, out):
    """out = exp_phi(scale v) renormalized onto the sheet; cells outside the active region copy phi."""
    n = phi.shape[0]
    d = phi.shape[2]
    for i in prange(n):
        for j in range(n):
            if i < lo or i >= hi or j < lo or j >= hi:
                for c in range(d):
                    out[i, j, c] = phi[i, j, c]
                continue
            vv = -v[i, j, 0] * v[i, j, 0]
            for c in range(1, d):
                vv += v[i, j, c] * v[i, j, c]
            r = abs(scale) * np.sqrt(max(vv, 0.0))
            ch = np.cosh(r)
            sh = scale if r < 1e-14 else np.sinh(r) / r * scale
            for c in range(d):
                out[i, j, c] = ch * phi[i, j, c] + sh * v[i, j, c]
            q = out[i, j, 0] * out[i, j, 0]
            for c in range(1, d):
                q -= out[i, j, c] * out[i, j, c]
            s = 1.0 / np.sqrt(q)
            for c in range(d):
                out[i, j, c] *= s


@njit(parallel=True, cache=True)
def transport_field(p, q, v, lo, hi, out):
    """Parallel transport of v from p to q cellwise, re-projected to T_q; zero outside the active region."""
    n = p.shape[0]
    d = p.shape[2]
    for i in prange(n):
        for j in range(n):
            if i < lo or i >= hi or j < lo or j >= hi:
                for c in range(d):
                    out[i, j, c] = 0.0
                continue
            ipq = -p[i, j, 0] * q[i, j, 0]
            qv = -q[i, j, 0] * v[i, j, 0]
            for c in range(1, d):
                ipq += p[i, j, c] * q[i, j, c]
                qv += q[i, j, c] * v[i, j, c]
            coef = qv / (1.0 - ipq)
            for c in range(d):
                out[i, j, c] = v[i, j, c] + coef * (p[i, j, c] + q[i, j, c])
            t = -out[i, j, 0] * q[i, j, 0]
            for c in range(1, d):
                t += out[i, j, c] * q[i, j, c]
            for c in range(d):
                out[i, j, c] += t * q[i, j, c]


@njit(parallel=True, cache=True)
def frame_step(phi, phinew, tau0, e, ds, lo, hi, enew):
    """Midpoint rule for d e_a/ds = <e_a, d phi/ds> phi, then Gram-Schmidt at phinew."""
    n = phi.shape[0]
    m = e.shape[2]
    d = phi.shape[2]
    for i in prange(n):
        mid = np.empty(d)
        vel = np.empty(d)
        for j in range(n):
            if i < lo or i >= hi or j < lo or j >= hi:
                for a in range(m):
                    for c in range(d):
                        enew[i, j, a, c] = e[i, j, a, c]
                continue
            for c in range(d):
                mid[c] = 0.5 * (phi[i, j, c] + phinew[i, j, c])
                vel[c] = (phinew[i, j, c] - phi[i, j, c]) / ds
            q = mid[0] * mid[0]
            for c in range(1, d):
                q -= mid[c] * mid[c]
            q = 1.0 / np.sqrt(q)
            for c in range(d):
                mid[c] *= q
            for a in range(m):
                k1 = -e[i, j, a, 0] * tau0[i, j, 0]
                for c in range(1, d):
                    k1 += e[i, j, a, c] * tau0[i, j, c]
                k2 = 0.0
                for c in range(d):
                    em = e[i, j, a, c] + 0.5 * ds * k1 * phi[i, j, c]
                    k2 += (-em if c == 0 else em) * vel[c]
                for c in range(d):
                    enew[i, j, a, c] = e[i, j, a, c] + ds * k2 * mid[c]
            # Gram-Schmidt in T_{phinew}
            for a in range(m):
                t = -enew[i, j, a, 0] * phinew[i, j, 0]
                for c in range(1, d):
                    t += enew[i, j, a, c] * phinew[i, j, c]
                for c in range(d):
                    enew[i, j, a, c] += t * phinew[i, j, c]
                for b in range(a):
                    t = -enew[i, j, a, 0] * enew[i, j, b, 0]
                    for c in range(1, d):
                        t += enew[i, j, a, c] * enew[i, j, b, c]
                    for c in range(d):
                        enew[i, j, a, c] -= t * enew[i, j, b, c]
                t = -enew[i, j, a, 0] * enew[i, j, a, 0]
                for c in range(1, d):
                    t += enew[i, j, a, c] * enew[i, j, a, c]
                t = 1.0 / np.sqrt(t)
                for c in range(d):
                    enew[i, j, a, c] *= t


@njit(parallel=True, cache=True)
def link_matrices(phi, e, I0, I1, U):
    """U[i, j, k, a, b] = <e_a(x), P_{x+e_k -> x} e_b(x + e_k)> for every grid edge."""
    n = phi.shape[0]
    m = e.shape[2]
    d = phi.shape[2]
    for i in prange(n):
        for j in range(n):
            for k in range(2):
                ia = i + (1 - k)
                jb = j + k
                if ia >= n or jb >= n:
                    for a in range(m):
                        for b in range(m):
                            U[i, j, k, a, b] = 1.0 if a == b else 0.0
                    continue
                ipq = I0[i, j] if k == 0 else I1[i, j]
                for b in range(m):
                    # transported e_b(x + e_k) = e_b + <x, e_b>/(1 - ipq) (x_k + x)
                    s = -phi[i, j, 0] * e[ia, jb, b, 0]
                    for c in range(1, d):
                        s += phi[i, j, c] * e[ia, jb, b, c]
                    coef = s / (1.0 - ipq)
                    for a in range(m):
                        t = 0.0
                        for c in range(d):
                            w = e[ia, jb, b, c] + coef * (phi[ia, jb, c] + phi[i, j, c])
                            t += (-w if c == 0 else w) * e[i, j, a, c]
                        U[i, j, k, a, b] = t
