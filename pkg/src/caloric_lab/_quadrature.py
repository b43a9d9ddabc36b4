"""Quadrature in heat time on a ladder s_0 = 0 < s_1 < ... and the power-law tail policy."""
import math

import numpy as np


def ladder_weights(s) -> np.ndarray:
    """Weights w with sum w_k f(s_k) ~ int_0^{s_K} f ds.

    Linear trapezoid on [0, s_1]; above s_1 the trapezoid rule is applied to
    s f(s) in the variable ln s, which is the natural scale of a geometric ladder.
    """
    s = np.asarray(s, dtype=float)
    w = np.zeros_like(s)
    if s.size < 2:
        return w
    if s[0] != 0.0:
        raise ValueError("ladder must start at s = 0")
    w[0] += 0.5 * s[1]
    w[1] += 0.5 * s[1]
    for k in range(1, s.size - 1):
        dl = math.log(s[k + 1] / s[k])
        w[k] += 0.5 * dl * s[k]
        w[k + 1] += 0.5 * dl * s[k + 1]
    return w


def first_interval_correction(s1: float, f0: float, f1: float, sub_s, sub_f) -> float:
    """Refined minus linear-trapezoid integral of f over [0, s_1].

    The interior samples sub_s (substeps of the solver) are used with the
    composite Simpson rule when they split [0, s_1] into an even number of equal
    pieces, otherwise with the composite trapezoid rule. The initial layer decays
    on the grid scale, where two end samples alone are too coarse.
    """
    sub_s = np.asarray(sub_s, dtype=float)
    if sub_s.size == 0:
        return 0.0
    x = np.concatenate([[0.0], sub_s, [s1]])
    y = np.concatenate([[f0], np.asarray(sub_f, dtype=float), [f1]])
    dx = np.diff(x)
    npieces = dx.size
    if npieces % 2 == 0 and np.allclose(dx, dx[0], rtol=1e-9, atol=0.0):
        fine = dx[0] / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum())
    else:
        fine = float(np.sum(0.5 * dx * (y[:-1] + y[1:])))
    return float(fine - 0.5 * s1 * (f0 + f1))


def fit_tail(s, values, decades: float = 1.0):
    """Estimate int_{s_K}^inf f ds from the samples in the last decade.

    Two models compete: a power law (ln f linear in ln s) and an exponential
    (ln f linear in s); the one whose straight-line fit leaves the smaller
    residual wins. Its local rate at s_K is then read off a quadratic fit in the
    same variable, since the last decade is often still bending toward its
    asymptote. The power model needs slope b < -1.05 and integrates to
    f(s_K) s_K / (-b - 1); the exponential needs rate c < 0 and gives f(s_K) / (-c).
    Returns (tail, model, parameter); model is "zero", "power", "exp" or "none".
    """
    s = np.asarray(s, dtype=float)
    f = np.asarray(values, dtype=float)
    if s.size < 4 or s[-1] <= 0.0:
        return 0.0, "zero", 0.0
    scale = float(np.abs(f).max())
    sel = (s >= s[-1] * 10.0 ** (-decades) * (1.0 - 1e-12)) & (s > 0.0) & (f > 1e-14 * scale)
    if scale == 0.0 or sel.sum() < 4:
        return 0.0, "zero", 0.0
    sK = s[-1]
    fK = f[-1] if f[-1] > 0.0 else math.exp(np.polyval(np.polyfit(np.log(s[sel] / sK), np.log(f[sel]), 1), 0.0))
    ls = np.log(s[sel] / sK)
    xs = s[sel] / sK - 1.0
    lf = np.log(f[sel])
    res_pow = np.std(lf - np.polyval(np.polyfit(ls, lf, 1), ls))
    res_exp = np.std(lf - np.polyval(np.polyfit(xs, lf, 1), xs))
    _, b, _ = np.polyfit(ls, lf, 2)
    _, cx, _ = np.polyfit(xs, lf, 2)
    c = cx / sK
    power_ok = b < -1.05
    exp_ok = c < 0.0
    if exp_ok and (res_exp <= res_pow or not power_ok):
        return fK / (-c), "exp", float(c)
    if power_ok:
        return fK * sK / (-b - 1.0), "power", float(b)
    return float("nan"), "none", float(b)


def integrate(s, values, with_tail: bool = True):
    """(quadrature over the ladder, tail estimate, tail model)."""
    w = ladder_weights(s)
    q = float(np.dot(w, values))
    if not with_tail:
        return q, 0.0, "zero"
    tail, model, _ = fit_tail(s, values)
    return q, tail, model
