"""Shared solved-problem fixtures (session-scoped: solves are expensive)."""

import numpy as np
import pytest

from chebscat import geometry as geo
from chebscat import kernels as ker
from chebscat.solver import Problem, solve_dense


@pytest.fixture(scope="session")
def pec_sphere_problem():
    """1-wavelength-diameter PEC sphere, 24 patches of 6x6 (N = 1728)."""
    med = ker.Medium.from_relative(1.0, 1.0, 1.0)
    spec = ker.FormulationSpec(ker.MFIE_PEC, med)
    pw = ker.PlaneWave([0, 0, 1], [1, 0, 0], 1.0)
    patches = geo.unit_sphere_patches(0.5, 1, (6, 6))
    return Problem(patches, spec, pw)


@pytest.fixture(scope="session")
def pec_sphere_dense(pec_sphere_problem):
    """Dense reference solve of the PEC sphere fixture."""
    return solve_dense(pec_sphere_problem)


@pytest.fixture(scope="session")
def muller_sphere_problem():
    """1-wavelength-diameter eps_r = 4 sphere, 24 patches of 6x6."""
    med1 = ker.Medium.from_relative(1.0, 1.0, 1.0)
    med2 = ker.Medium.from_relative(4.0, 1.0, 1.0)
    spec = ker.FormulationSpec(ker.MULLER, med1, med2)
    pw = ker.PlaneWave([0, 0, 1], [1, 0, 0], 1.0)
    patches = geo.unit_sphere_patches(0.5, 1, (6, 6))
    return Problem(patches, spec, pw, aca_tol=1e-5)


@pytest.fixture(scope="session")
def muller_sphere_dense(muller_sphere_problem):
    return solve_dense(muller_sphere_problem)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(2024)
