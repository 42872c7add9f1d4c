import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ftrom.conslaw import BurgersConfig
from ftrom.hdm import solve_hdm
from ftrom.mesh import MappingDofs, build_rect_mesh

settings.register_profile("ftrom", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ftrom")

NU = 1e-3


@pytest.fixture(scope="session")
def mesh():
    return build_rect_mesh(100, 50)


@pytest.fixture(scope="session")
def small_mesh():
    return build_rect_mesh(12, 8)


@pytest.fixture(scope="session")
def hdm_states(mesh):
    """Fixed-mesh HDM solutions at the training and test parameters."""
    return {mu: solve_hdm(mesh, BurgersConfig(NU, mu)) for mu in (0.5, 0.75, 1.0, 2.0)}


def smooth_warp(mesh, amplitude=0.3, seed=0):
    """A valid interior warp: a smooth bump displacement vanishing on the boundary."""
    rng = np.random.default_rng(seed)
    X = mesh.ref_nodes
    x_lo, x_hi, t_lo, t_hi = mesh.bounds
    s = (X[:, 0] - x_lo) / (x_hi - x_lo)
    r = (X[:, 1] - t_lo) / (t_hi - t_lo)
    bubble = np.sin(np.pi * s) * np.sin(np.pi * r)
    a = amplitude * (rng.random(2) - 0.5)
    disp = np.stack([a[0] * mesh.hx * bubble, a[1] * mesh.ht * bubble], axis=1) * min(mesh.nx, mesh.nt)
    return MappingDofs(X + disp)
