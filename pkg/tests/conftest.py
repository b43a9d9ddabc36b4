import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("ci", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_geodesic():
    """Geodesic Gaussian on a 64^2 grid of spacing 1/4 with an odd velocity."""
    from caloric_lab.grid_fields import GridSpec, gaussian_profile, make_geodesic_data
    g = GridSpec(64, 0.25)
    u0 = gaussian_profile(g, 1.0, 1.0, taper=6.0)
    u1 = 0.5 * g.mesh()[0] * u0
    return g, u0, u1, make_geodesic_data(g, u0, u1)


@pytest.fixture(scope="session")
def small_generic():
    from caloric_lab.grid_fields import GridSpec, random_smooth_data
    g = GridSpec(32, 0.25)
    return random_smooth_data(g, seed=1, amplitude=0.5, scale=1.0, count=6, spread=1.0, velocity=0.3)
