import numpy as np
import pytest

from causalchar.characteristics import IntegratorConfig, ScaledField
from causalchar.fields import normal_transport
from causalchar.geometry import ellipse, unit_disk
from causalchar.grid import make_grid
from causalchar.problems import load_preset


@pytest.fixture(scope="session")
def disk():
    return unit_disk()


@pytest.fixture(scope="session")
def ell():
    return ellipse()


@pytest.fixture(scope="session")
def cfg():
    return IntegratorConfig()


@pytest.fixture(scope="session")
def radial(disk):
    return ScaledField(disk.time, normal_transport(disk.time))


@pytest.fixture(scope="session")
def disk_grid64(disk):
    return make_grid(disk, 64)


@pytest.fixture(scope="session")
def causal64():
    return load_preset("disk-causal-eps0.1", 64)


def random_disk_points(rng, n, r_min=0.05, r_max=0.95):
    r = np.sqrt(rng.uniform(r_min**2, r_max**2, n))
    a = rng.uniform(0, 2 * np.pi, n)
    return np.column_stack([r * np.cos(a), r * np.sin(a)])
