import math

import numpy as np
import pytest

from caloric_lab.grid_fields import GridSpec, constant_data, gaussian_profile, make_geodesic_data, random_smooth_data, sym_time_reverse, total_energy
from caloric_lab.wave_solver import (energy_series, evolve_wave, field_residual, lightcone_leak, oracle_error,
                                     relative_drift, wave_residual)


def _geodesic(n, L=16.0, taper=6.0):
    g = GridSpec(n, L / n)
    u0 = gaussian_profile(g, 1.0, 1.0, taper=taper)
    u1 = 0.5 * g.mesh()[0] * u0
    return g, u0, u1, make_geodesic_data(g, u0, u1)


@pytest.fixture(scope="module")
def runs():
    out = {}
    for n in (64, 128):
        g, u0, u1, d = _geodesic(n)
        out[n] = (g, u0, u1, d, evolve_wave(d, (0.0, 0.5), 0.25))
    return out


def test_constant_data_stays_put():
    d = constant_data(GridSpec(32, 0.25))
    tr = evolve_wave(d, (0.0, 0.5), 0.25)
    assert np.array_equal(tr.slices[-1].phi0.values, d.phi0.values)
    assert all(e == 0.0 for _, e in energy_series(tr))


def test_step_count_and_dt(runs):
    g, *_, tr = runs[64]
    assert tr.dt <= 0.25 * g.h * (1 + 1e-12)
    assert tr.times[-1] == pytest.approx(0.5)
    assert tr.scheme["steps"] == len(tr.times) - 1


def test_energy_drift_second_order(runs):
    d64 = relative_drift(runs[64][-1])
    d128 = relative_drift(runs[128][-1])
    assert d64 < 2e-3 and d128 < d64 / 3.0


def test_constraint_held(runs):
    *_, tr = runs[128]
    assert max(tr.constraint_drift) < 1e-12


def test_oracle_error_second_order(runs):
    e = [oracle_error(runs[n][-1], runs[n][1], runs[n][2]) for n in (64, 128)]
    assert math.log2(e[0] / e[1]) >= 1.9


def test_time_reversal(runs):
    g, u0, u1, d, tr = runs[64]
    back = evolve_wave(sym_time_reverse(tr.slices[-1]), (0.0, 0.5), 0.25)
    assert np.abs(back.slices[-1].phi0.values - d.phi0.values).max() < 1e-10
    assert np.abs(back.slices[-1].phi1 + d.phi1).max() < 1e-10


def test_lightcone_leak_tiny(runs):
    g, u0, u1, d, tr = runs[128]
    leak = lightcone_leak(tr, (0.0, 0.0), 6.0)
    assert max(v for _, v in leak) <= 1e-6 * total_energy(d)


def test_discrete_wave_equation_residual(runs):
    r = [np.sqrt(runs[n][0].h ** 2 * np.sum(wave_residual(runs[n][-1], 0.25) ** 2)) for n in (64, 128)]
    assert r[1] < r[0] / 3.0
    g, *_, tr = runs[64]
    k = tr.index_of(0.25)
    q = [tr.slices[i].phi0.values for i in (k - 1, k, k + 1)]
    # a scrambled triple does not satisfy the equation
    bad = field_residual(g, q[2], q[1], q[2], tr.dt)
    assert np.abs(bad).max() > 10 * np.abs(wave_residual(tr, 0.25)).max()
    with pytest.raises(ValueError):
        wave_residual(tr, 0.0)


def test_generic_energy_drift_small():
    g = GridSpec(64, 0.125)
    d = random_smooth_data(g, seed=4, spread=1.0)
    tr = evolve_wave(d, (0.0, 1.0), 0.25, output_times=[0.0, 0.5, 1.0])
    assert len(tr.times) == 3
    assert relative_drift(tr) < 1e-3


def test_bad_arguments():
    d = constant_data(GridSpec(32, 0.25))
    with pytest.raises(ValueError):
        evolve_wave(d, (0.0, 1.0), 0.0)
    with pytest.raises(ValueError):
        evolve_wave(d, (0.0, 1.0), 0.25, output_times=[2.0])
    with pytest.raises(ValueError):
        evolve_wave(d, (0.0, math.inf), 0.25)
