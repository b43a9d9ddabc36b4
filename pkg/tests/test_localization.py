import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from caloric_lab.grid_fields import (EnergyDensityField, GridSpec, energy_density, gaussian_profile, local_energy,
                                     make_geodesic_data, sym_dilate, total_energy)
from caloric_lab.heat_solver import LadderParams, heat_flow, ladder_values
from caloric_lab.localization import (LocalizationReport, concentration_radius, cumulative_mass,
                                      find_frequency_scale, find_spatial_center, mass_below, normalize_data,
                                      pigeonhole_gap, radius_table, tightness_report)
from caloric_lab.spectral import ESDParams, ESDProfile, esd


def _profile(values_fn, s_max=50.0, h=0.25):
    s, _ = ladder_values(h, s_max, LadderParams())
    f = values_fn(s)
    from caloric_lab._quadrature import ladder_weights
    return ESDProfile(s, f, ladder_weights(s), 0.0, "zero", s[-1], float(np.dot(ladder_weights(s), f)),
                      np.zeros((s.size, 3)))


def test_cumulative_mass_matches_weights():
    p = _profile(lambda s: np.exp(-s))
    c = cumulative_mass(p.s, p.values)
    assert c[-1] == pytest.approx(p.integral, rel=1e-13)
    assert np.all(np.diff(c) >= 0)


@given(st.floats(0.0, 60.0), st.floats(0.0, 60.0))
def test_mass_below_monotone_and_consistent(a, b):
    p = _profile(lambda s: 1.0 / (1.0 + s) ** 2)
    lo, hi = min(a, b), max(a, b)
    assert mass_below(p.s, p.values, lo) <= mass_below(p.s, p.values, hi) + 1e-15
    for k in (1, 5, len(p.s) - 1):
        assert mass_below(p.s, p.values, p.s[k]) == pytest.approx(cumulative_mass(p.s, p.values)[k], rel=1e-12)


def test_frequency_scale_is_first_ladder_point_past_half_eps():
    p = _profile(lambda s: np.exp(-s))
    s0 = find_frequency_scale(p, 0.5)
    c = cumulative_mass(p.s, p.values)
    k = int(np.flatnonzero(p.s == s0)[0])
    assert c[k] >= 0.25 and c[k - 1] < 0.25
    with pytest.raises(ValueError):
        find_frequency_scale(p, 2.0 * p.integral)


def test_pigeonhole_finds_gap_between_two_bursts():
    # mass near s = 0.05 and near s = 20, nothing in between
    f = lambda s: np.exp(-((np.log(s + 1e-300) - np.log(0.05)) / 0.3) ** 2) / (s + 1e-300) + \
        np.exp(-((np.log(s + 1e-300) - np.log(20.0)) / 0.3) ** 2) / (s + 1e-300)
    p = _profile(lambda s: np.where(s > 0, f(s), 0.0))
    gap = pigeonhole_gap(p, 0.2, 5.0, [2.0, 3.0], floor=1e-6)
    assert gap.floor_met and gap.K == 3.0
    assert 0.5 < gap.s_prime < 2.0 and gap.mass <= gap.threshold


def test_pigeonhole_reports_failure_honestly():
    p = _profile(lambda s: 1.0 / (1.0 + s) ** 2)
    gap = pigeonhole_gap(p, 0.1, 10.0, [2.0, 4.0])
    assert not gap.floor_met and gap.mass > gap.threshold
    with pytest.raises(ValueError):
        pigeonhole_gap(p, 1.0, 0.5, [2.0])
    with pytest.raises(ValueError):
        pigeonhole_gap(p, 0.1, 1.0, [1.0])


def _brute_center(e, r):
    g = e.grid
    X, Y = g.mesh()
    best = (-1.0, None)
    for i in range(g.n):
        for j in range(g.n):
            v = local_energy(e, (X[i, j], Y[i, j]), r)
            if v > best[0] + 1e-15 * max(best[0], 0.0):
                best = (v, (X[i, j], Y[i, j]))
    return best


@given(st.integers(0, 10 ** 6), st.floats(0.3, 2.0))
def test_spatial_center_matches_exhaustive_scan(seed, r):
    g = GridSpec(24, 0.25)
    rng = np.random.default_rng(seed)
    t = rng.random((24, 24)) ** 4
    e = EnergyDensityField(g, t)
    (x, y), cap = find_spatial_center(e, r)
    best, _ = _brute_center(e, r)
    assert cap == pytest.approx(best, rel=1e-12)
    assert local_energy(e, (x, y), r) == pytest.approx(cap, rel=1e-12)


def test_spatial_center_of_zero_density_is_first_cell():
    g = GridSpec(16, 1.0)
    (x, y), cap = find_spatial_center(EnergyDensityField(g, np.zeros((16, 16))), 1.0)
    assert (x, y) == (g.axis[0], g.axis[0]) and cap == 0.0
    with pytest.raises(ValueError):
        find_spatial_center(EnergyDensityField(g, np.zeros((16, 16))), 0.0)


def test_spatial_center_on_offset_bump():
    g = GridSpec(96, 0.125)
    u0 = gaussian_profile(g, 1.0, 1.0, center=(1.0, -0.5), taper=4.0)
    d = make_geodesic_data(g, u0, u0)
    (x, y), cap = find_spatial_center(energy_density(d), 1.0)
    assert math.hypot(x - 1.0, y + 0.5) <= g.h


def test_radius_table_monotone(small_geodesic):
    g, _, _, d = small_geodesic
    e = energy_density(d)
    E = e.total()
    tab = radius_table(e, (0.0, 0.0), [1e-1 * E, 1e-2 * E, 1e-3 * E])
    radii = [r for _, r in tab]
    assert radii == sorted(radii, reverse=True)
    assert concentration_radius(e, (0.0, 0.0), 2 * E) == 0.0
    R = concentration_radius(e, (0.0, 0.0), 1e-2 * E)
    assert E - local_energy(e, (0.0, 0.0), R) <= 1e-2 * E


def test_normalize_data_recenters_and_rescales():
    g = GridSpec(128, 0.125)
    u0 = gaussian_profile(g, 1.0, 0.5, center=(1.0, -0.5), taper=3.0)
    d = make_geodesic_data(g, u0, 0.5 * u0)
    x_star, cap = find_spatial_center(energy_density(d), 0.5)
    nd = normalize_data(d, 0.25, x_star)
    (x, y), cap2 = find_spatial_center(energy_density(nd), 1.0)
    assert math.hypot(x, y) <= 2 * g.h
    assert cap2 == pytest.approx(cap, rel=2e-2)
    assert total_energy(nd) == pytest.approx(total_energy(d), rel=2e-2)
    with pytest.raises(ValueError):
        normalize_data(d, 0.0, (0.0, 0.0))


def test_frequency_scale_dilation_equivariance():
    g = GridSpec(128, 0.125)
    u0 = gaussian_profile(g, 1.0, 0.6, taper=2.5)
    d = make_geodesic_data(g, u0, 0.5 * g.mesh()[0] * u0)
    E = total_energy(d)
    s0 = find_frequency_scale(esd(d), 0.4 * E)
    dd = sym_dilate(d, 2.0)
    s1 = find_frequency_scale(esd(dd), 0.4 * total_energy(dd))
    rho = LadderParams().rho
    assert 4.0 * s0 / rho * (1 - 1e-12) <= s1 <= 4.0 * s0 * rho * (1 + 1e-12)


def test_tightness_table(small_geodesic):
    g, u0, u1, d = small_geodesic
    lad = heat_flow(d.phi0, 1.0, track_frames=False, carry=d.phi1)
    t = tightness_report(lad, (lad.s[1], 1.0), [0.5, 1.0, 2.0, 3.0])
    assert t.monotone()
    assert t.exponent("psi_s") < -1.5
    with pytest.raises(ValueError):
        tightness_report(lad, (5.0, 6.0), [1.0])


def test_report_record():
    rep = LocalizationReport(1.0, (0.0, 0.5), 2.0, [(0.1, 3.0)])
    rec = rep.record()
    assert rec["x_center_1"] == 0.5 and rec["radius_eps_0.1"] == 3.0


def test_pigeonhole_ignores_annuli_past_the_ladder():
    p = _profile(lambda s: 1.0 / (1.0 + s) ** 2)
    gap = pigeonhole_gap(p, 0.1, p.s[-1], [3.0], floor=0.05)
    assert 3.0 * gap.s_prime <= p.s[-1] * (1 + 1e-12)
    with pytest.raises(ValueError):
        pigeonhole_gap(p, p.s[-2], p.s[-1], [3.0])
