import numpy as np
import pytest

from chebscat import kernels as ker
from chebscat import mie
from chebscat import postprocess as post
from chebscat.errors import TooCloseToSurface, UnsupportedExcitation


def test_zero_density_zero_fields(pec_sphere_problem):
    prob = pec_sphere_problem
    zero = np.zeros(prob.n_dofs, dtype=complex)
    E, H = post.scattered_field(prob, zero, np.array([2.0, 0.3, 0.1]))
    assert np.abs(E).max() == 0.0
    assert np.abs(H).max() == 0.0
    cut = post.rcs_cut(prob, zero, 0.0, np.linspace(0, 180, 7))
    assert np.abs(cut.sigma_m2).max() == 0.0


def test_too_close_guard(pec_sphere_problem):
    prob = pec_sphere_problem
    zero = np.zeros(prob.n_dofs, dtype=complex)
    with pytest.raises(TooCloseToSurface):
        post.scattered_field(prob, zero, np.array([0.5001, 0.0, 0.0]))


def test_rcs_requires_plane_wave(pec_sphere_problem):
    prob = pec_sphere_problem
    dip_prob = type(prob)(prob.patches, prob.spec,
                          ker.Dipole([0, 0, 0], [0, 0, 1e-12]))
    with pytest.raises(UnsupportedExcitation):
        post.rcs_cut(dip_prob, np.zeros(prob.n_dofs, dtype=complex), 0.0,
                     np.array([0.0, 90.0]))


def test_rcs_against_mie(pec_sphere_problem, pec_sphere_dense):
    prob = pec_sphere_problem
    theta = np.linspace(0, 180, 181)
    cut = post.rcs_cut(prob, pec_sphere_dense.solution, 0.0, theta)
    sigma_mie = mie.mie_rcs(mie.MieSpec(0.5, prob.spec.outer, None), theta, 0.0)
    err = np.linalg.norm(cut.sigma_m2 - sigma_mie) / np.linalg.norm(sigma_mie)
    assert err <= 1e-2
    assert np.all(cut.sigma_m2 >= 0.0)
    assert cut.sigma_dbsm == pytest.approx(10 * np.log10(cut.sigma_m2), abs=1e-9)


def test_far_field_phase_matches_mie(pec_sphere_problem, pec_sphere_dense):
    prob = pec_sphere_problem
    theta = np.deg2rad(np.linspace(5, 175, 35))
    cut = post.rcs_cut(prob, pec_sphere_dense.solution, 0.0, np.rad2deg(theta))
    F_th, _ = mie.mie_far_field(mie.MieSpec(0.5, prob.spec.outer, None),
                                theta, np.zeros_like(theta))
    err = np.linalg.norm(cut.e_theta - F_th) / np.linalg.norm(F_th)
    assert err < 5e-3


def test_mirror_symmetry(pec_sphere_problem, pec_sphere_dense):
    prob = pec_sphere_problem
    theta = np.linspace(0, 180, 61)
    c0 = post.rcs_cut(prob, pec_sphere_dense.solution, 0.0, theta)
    c180 = post.rcs_cut(prob, pec_sphere_dense.solution, 180.0, theta)
    scale = c0.sigma_m2.max()
    assert np.abs(c0.sigma_m2 - c180.sigma_m2).max() / scale < 1e-7


def test_far_field_at_1000_wavelengths(pec_sphere_problem, pec_sphere_dense):
    prob = pec_sphere_problem
    x = pec_sphere_dense.solution
    r = 1000.0 * prob.wavelength
    theta0 = np.deg2rad(37.0)
    rhat = np.array([np.sin(theta0), 0.0, np.cos(theta0)])
    E, _ = post.scattered_field(prob, x, r * rhat)
    F, _ = post.far_field(prob, x, [theta0], [0.0])
    k = prob.spec.outer.k
    E_pred = F[0] * np.exp(-1j * k * r) / r
    assert np.linalg.norm(E - E_pred) / np.linalg.norm(E_pred) <= 1e-3


def test_surface_current_export(tmp_path, pec_sphere_problem, pec_sphere_dense):
    prob = pec_sphere_problem
    path = tmp_path / "currents.txt"
    post.export_surface_current(prob, pec_sphere_dense.solution, path)
    lines = path.read_text().strip().split("\n")
    n_points = sum(p.n_nodes for p in prob.patches)
    assert len(lines) - 1 == n_points
    assert lines[0].startswith("# patch l k x y z")
    first = lines[1].split()
    assert len(first) == 6 + 6 + 1   # ids/coords + J re/im + |J|


def test_exported_current_is_tangential(pec_sphere_problem, pec_sphere_dense):
    prob = pec_sphere_problem
    J, M = post.surface_current_vectors(prob, pec_sphere_dense.solution)
    assert M is None
    pt = 0
    for p in prob.patches:
        fb = p.node_frames()
        n_p = p.n_nodes
        dots = np.abs(np.sum(J[pt:pt + n_p] * fb.normal, axis=1))
        mags = np.linalg.norm(J[pt:pt + n_p], axis=1)
        assert (dots / mags).max() < 1e-10
        pt += n_p


def test_current_magnitude_mirror_symmetry(pec_sphere_problem, pec_sphere_dense):
    # incidence plane is xz: |J(x, y, z)| = |J(x, -y, z)|
    prob = pec_sphere_problem
    J, _ = post.surface_current_vectors(prob, pec_sphere_dense.solution)
    pos = np.concatenate([p.node_frames().position for p in prob.patches])
    mags = np.linalg.norm(J, axis=1)
    mirrored = pos * np.array([1.0, -1.0, 1.0])
    # cube-sphere grids are mirror symmetric: match nodes by position
    order = np.lexsort(np.round(pos, 9).T)
    order_m = np.lexsort(np.round(mirrored, 9).T)
    assert np.abs(pos[order] - mirrored[order_m]).max() < 1e-9
    rel = np.abs(mags[order] - mags[order_m]) / mags.max()
    assert rel.max() < 1e-2


def test_rcs_export_format(tmp_path, pec_sphere_problem, pec_sphere_dense):
    prob = pec_sphere_problem
    cut = post.rcs_cut(prob, pec_sphere_dense.solution, 0.0,
                       np.linspace(0, 180, 5))
    path = tmp_path / "rcs.txt"
    post.export_rcs(cut, path)
    rows = [l.split() for l in path.read_text().strip().split("\n")[1:]]
    assert len(rows) == 5
    assert float(rows[0][0]) == 0.0
    assert float(rows[-1][0]) == 180.0
    for row in rows:
        sigma = float(row[1])
        assert float(row[2]) == pytest.approx(10 * np.log10(sigma), abs=1e-5)
