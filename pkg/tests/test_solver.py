import numpy as np
import pytest

from chebscat import geometry as geo
from chebscat import kernels as ker
from chebscat import postprocess as post
from chebscat.solver import (Problem, gmres, solve_dense, solve_direct,
                             solve_gmres)


def small_problem(order=4, formulation=ker.MFIE_PEC, **kw):
    med = ker.Medium.from_relative(1.0, 1.0, 1.0)
    if formulation == ker.MFIE_PEC:
        spec = ker.FormulationSpec(ker.MFIE_PEC, med)
    else:
        spec = ker.FormulationSpec(ker.MULLER, med,
                                   ker.Medium.from_relative(kw.pop("eps2", 4.0),
                                                            1.0, 1.0))
    pw = ker.PlaneWave([0, 0, 1], [1, 0, 0], 1.0)
    patches = geo.unit_sphere_patches(0.5, 0, (order, order))
    return Problem(patches, spec, pw, **kw)


def test_gmres_identity_single_iteration(rng):
    b = rng.standard_normal(20) + 1j * rng.standard_normal(20)
    x, iters, rel, ok = gmres(lambda v: v, b, 1e-12, 30, 100)
    assert iters == 1
    assert ok
    assert np.abs(x - b).max() < 1e-12


def test_gmres_zero_rhs():
    x, iters, rel, ok = gmres(lambda v: v, np.zeros(5, dtype=complex),
                              1e-12, 5, 10)
    assert iters == 0 and ok
    assert np.abs(x).max() == 0.0


def test_gmres_matches_direct(rng):
    n = 80
    A = np.eye(n) + 0.25 * (rng.standard_normal((n, n))
                            + 1j * rng.standard_normal((n, n))) / np.sqrt(n)
    b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    x, iters, rel, ok = gmres(lambda v: A @ v, b, 1e-10, 40, 400)
    assert ok
    assert np.linalg.norm(x - np.linalg.solve(A, b)) < 1e-8


def test_gmres_restart_path(rng):
    n = 60
    A = np.eye(n) + 0.4 * (rng.standard_normal((n, n))
                           + 1j * rng.standard_normal((n, n))) / np.sqrt(n)
    b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    x, iters, rel, ok = gmres(lambda v: A @ v, b, 1e-9, 7, 400)
    assert ok
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-9


def test_gmres_no_convergence_flag(rng):
    n = 40
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    x, iters, rel, ok = gmres(lambda v: A @ v, b, 1e-14, 5, 8)
    assert not ok
    assert iters == 8


def test_problem_validation():
    with pytest.raises(ValueError):
        small_problem(aca_tol=2.0)
    with pytest.raises(ValueError):
        small_problem(gmres_tol=0.0)


def test_tiny_synthetic_dense_solve():
    # 2x2 well-posed complex system through the dense LU path
    import scipy.linalg as sla
    A = np.array([[2.0, 1.0j], [-1.0j, 3.0]])
    b = np.array([1.0, 2.0], dtype=complex)
    x = sla.lu_solve(sla.lu_factor(A), b)
    assert np.abs(A @ x - b).max() < 1e-14


def test_dense_metrics_and_residual():
    prob = small_problem()
    res = solve_dense(prob)
    assert res.residual < 1e-12
    for key in ("fill_s", "factor_s", "solve_s"):
        assert res.metrics[key] > 0
    assert res.metrics["n_dofs"] == prob.n_dofs
    assert res.metrics["peak_rss_bytes"] > 0
    assert "memory_method" in res.metrics


def test_direct_vs_dense_small():
    prob = small_problem(order=5, aca_tol=1e-5)
    rd = solve_direct(prob)
    rf = solve_dense(prob)
    err = np.linalg.norm(rd.solution - rf.solution) / np.linalg.norm(rf.solution)
    assert err <= 100 * prob.effective_trunc_tol
    assert rd.residual <= 100 * prob.effective_trunc_tol
    assert rd.metrics["hmatrix_bytes"] > 0


def test_direct_solve_deterministic():
    prob1 = small_problem(order=4)
    prob2 = small_problem(order=4)
    r1 = solve_direct(prob1)
    r2 = solve_direct(prob2)
    assert np.array_equal(r1.solution, r2.solution)


def test_identical_media_muller_scatters_nothing():
    prob = small_problem(order=5, formulation=ker.MULLER, eps2=1.0)
    res = solve_dense(prob)
    theta = np.linspace(0, 180, 19)
    cut = post.rcs_cut(prob, res.solution, 0.0, theta)
    # relative to the geometric cross-section of the sphere
    assert cut.sigma_m2.max() / (np.pi * 0.25) < 1e-6


def test_gmres_on_mfie_converges_quickly(pec_sphere_problem):
    res = solve_gmres(pec_sphere_problem)
    assert res.converged
    assert res.iterations < 60
    assert res.residual <= pec_sphere_problem.gmres_tol


def test_direct_and_gmres_agree(pec_sphere_problem):
    import dataclasses
    tight = dataclasses.replace(pec_sphere_problem, gmres_tol=1e-8)
    rg = solve_gmres(tight)
    rd = solve_direct(pec_sphere_problem)
    err = np.linalg.norm(rg.solution - rd.solution) / np.linalg.norm(rd.solution)
    assert err <= 1e-3
