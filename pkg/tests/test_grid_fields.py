import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from caloric_lab import oracles
from caloric_lab.grid_fields import (Bump, DataPair, EnergyDensityField, GridSpec, MapField, constant_data,
                                     data_from_log_coordinates, energy_density, gaussian_profile, load_data,
                                     local_energy, log_coordinates, make_geodesic_data, make_multibump_data,
                                     random_smooth_data, read_snapshot, save_data, smooth_cutoff, sym_dilate,
                                     sym_rotate, sym_time_reverse, sym_translate, total_energy, write_snapshot)
from caloric_lab.hyperbolic import LorentzRotation, basepoint, minkowski_inner


def test_gridspec_validation():
    with pytest.raises(ValueError):
        GridSpec(8, 0.1)
    with pytest.raises(ValueError):
        GridSpec(32, 0.0)
    with pytest.raises(ValueError):
        GridSpec(32, 0.1, margin=1)
    g = GridSpec(32, 0.5)
    assert g.axis[16] == 0.0 and g.half_width == 8.0
    assert g.margin_mask().sum() == 32 * 32 - 28 * 28


def test_constant_data_has_zero_energy():
    d = constant_data(GridSpec(32, 0.25))
    assert total_energy(d) == 0.0
    assert np.all(energy_density(d).t00 == 0.0)


def test_mapfield_rejects_off_sheet():
    g = GridSpec(16, 1.0)
    vals = np.broadcast_to(basepoint(2), (16, 16, 3)).copy()
    vals[5, 5, 0] = 2.0
    with pytest.raises(ValueError):
        MapField(g, vals, basepoint(2))


def test_datapair_rejects_nontangent_velocity():
    d = constant_data(GridSpec(16, 1.0))
    bad = np.zeros_like(d.phi1)
    bad[8, 8, 0] = 1.0
    with pytest.raises(ValueError):
        DataPair(d.phi0, bad)


def test_smooth_cutoff_profile():
    r = np.linspace(0, 3, 301)
    c = smooth_cutoff(r, 1.0, 2.0)
    assert np.all(c[r <= 1.0] == 1.0) and np.all(c[r >= 2.0] == 0.0)
    assert np.all(np.diff(c) <= 0.0)


def test_profile_vanishes_on_margin():
    g = GridSpec(32, 0.25)
    u = gaussian_profile(g, 1.0, 0.8, center=(0.5, -0.25))
    assert np.all(u[g.margin_mask()] == 0.0)


def test_geodesic_energy_matches_scalar_energy(small_geodesic):
    # distances along one geodesic are |u(x) - u(y)|, so the energies agree to roundoff
    g, u0, u1, d = small_geodesic
    assert total_energy(d) == pytest.approx(oracles.energy(u0, u1, g), rel=1e-12)


def test_local_energy_full_disk_equals_total(small_geodesic):
    g, _, _, d = small_geodesic
    e = energy_density(d)
    assert local_energy(e, (0.0, 0.0), 100.0) == pytest.approx(e.total(), rel=1e-14)
    assert local_energy(e, (0.0, 0.0), 0.1) <= e.total()


def test_energy_density_rejects_negative():
    with pytest.raises(ValueError):
        EnergyDensityField(GridSpec(16, 1.0), -np.ones((16, 16)))


def test_log_coordinates_roundtrip(small_generic):
    d = small_generic
    L, V = log_coordinates(d)
    d2 = data_from_log_coordinates(d.grid, L, V, d.base)
    assert np.allclose(d2.phi0.values, d.phi0.values, atol=1e-12)
    assert np.allclose(d2.phi1, d.phi1, atol=1e-12)


def test_random_smooth_deterministic():
    g = GridSpec(32, 0.25)
    a = random_smooth_data(g, seed=7)
    b = random_smooth_data(g, seed=7)
    assert np.array_equal(a.phi0.values, b.phi0.values) and np.array_equal(a.phi1, b.phi1)
    assert not np.array_equal(a.phi0.values, random_smooth_data(g, seed=8).phi0.values)


def test_random_smooth_same_continuum_data_under_refinement():
    # the taper does not depend on h: the coarse grid samples the fine field
    a = random_smooth_data(GridSpec(32, 0.25), seed=3)
    b = random_smooth_data(GridSpec(64, 0.125), seed=3)
    assert np.allclose(a.phi0.values, b.phi0.values[::2, ::2], atol=1e-13)


def test_multibump_warns_on_overlap():
    g = GridSpec(64, 0.25)
    bumps = [Bump((0.0, 0.0), 1.0, (1.0, 0.0), 0.5), Bump((0.5, 0.0), 1.0, (0.0, 1.0), 0.5)]
    with pytest.warns(UserWarning):
        make_multibump_data(g, bumps)


def test_multibump_separated_energy_is_additive():
    g = GridSpec(96, 0.25)
    b1 = Bump((4.0, 0.0), 1.0, (1.0, 0.0), 0.6, 0.3)
    b2 = Bump((-4.0, 0.0), 1.0, (0.0, 1.0), 0.6, -0.3)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        both = total_energy(make_multibump_data(g, [b1, b2]))
    one = total_energy(make_multibump_data(g, [b1])) + total_energy(make_multibump_data(g, [b2]))
    assert both == pytest.approx(one, rel=1e-3)


def test_translate_by_lattice_vector_shifts_arrays(small_geodesic):
    g, _, _, d = small_geodesic
    t = sym_translate(d, (2 * g.h, -3 * g.h))
    assert np.array_equal(t.phi0.values[10:40, 10:40], d.phi0.values[8:38, 13:43])
    assert total_energy(t) == pytest.approx(total_energy(d), rel=1e-12)


def test_translate_rejects_leaving_support(small_geodesic):
    g, _, _, d = small_geodesic
    with pytest.raises(ValueError):
        sym_translate(d, (6.0, 0.0))


def test_time_reverse_involution(small_generic):
    d = small_generic
    r = sym_time_reverse(sym_time_reverse(d))
    assert np.array_equal(r.phi1, d.phi1)


@given(st.floats(0.0, 6.28), st.floats(-0.8, 0.8))
def test_rotation_preserves_energy(angle, rapidity):
    g = GridSpec(32, 0.25)
    d = random_smooth_data(g, seed=2)
    U = LorentzRotation.spatial(2, 1, 2, angle) @ LorentzRotation.boost(2, 1, rapidity)
    r = sym_rotate(d, U)
    assert total_energy(r) == pytest.approx(total_energy(d), rel=1e-9)


def test_dilation_scales_energy_invariantly():
    # in two space dimensions the energy is dilation invariant; sampling error is O(h^2)
    g = GridSpec(128, 0.125)
    u0 = gaussian_profile(g, 1.0, 1.0, taper=4.5)
    d = make_geodesic_data(g, u0, 0.3 * u0)
    e = total_energy(d)
    assert total_energy(sym_dilate(d, 1.5)) == pytest.approx(e, rel=5e-3)
    with pytest.raises(ValueError):
        sym_dilate(d, -1.0)


def test_snapshot_roundtrip(tmp_path, small_generic):
    d = small_generic
    p = tmp_path / "d.cgwm"
    save_data(p, d, extra={"s": np.array([0.5])})
    d2 = load_data(p)
    assert np.array_equal(d2.phi0.values, d.phi0.values) and np.array_equal(d2.phi1, d.phi1)
    g, m, blocks = read_snapshot(p)
    assert g == d.grid and m == 2 and blocks["s"][0] == 0.5


def test_snapshot_rejects_corruption(tmp_path):
    g = GridSpec(16, 1.0)
    p = tmp_path / "x.cgwm"
    write_snapshot(p, g, 2, {"a": np.ones((3, 2))})
    raw = p.read_bytes()
    (tmp_path / "bad.cgwm").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        read_snapshot(tmp_path / "bad.cgwm")
    (tmp_path / "short.cgwm").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        read_snapshot(tmp_path / "short.cgwm")


def test_tangency_of_generated_velocity(small_generic):
    d = small_generic
    assert np.abs(minkowski_inner(d.phi0.values, d.phi1)).max() < 1e-12
