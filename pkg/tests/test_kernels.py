import numpy as np
import pytest
from scipy.constants import epsilon_0, mu_0

from chebscat import kernels as ker
from chebscat.errors import SingularPoint
from chebscat.geometry import FrameBatch


def frame_batch(pos, a_u, a_v):
    pos = np.atleast_2d(np.asarray(pos, dtype=float))
    a_u = np.atleast_2d(np.asarray(a_u, dtype=float))
    a_v = np.atleast_2d(np.asarray(a_v, dtype=float))
    cross = np.cross(a_u, a_v)
    sg = np.linalg.norm(cross, axis=1)
    return FrameBatch(pos, a_u, a_v, cross / sg[:, None], sg)


def test_greens_static():
    val = ker.greens(0.0, np.array([1.0, 0, 0]), np.array([0.0, 0, 0]))
    assert val == pytest.approx(1 / (4 * np.pi), abs=1e-15)


def test_greens_full_period_phase():
    val = ker.greens(2 * np.pi, np.array([1.0, 0, 0]), np.array([0.0, 0, 0]))
    assert val == pytest.approx(1 / (4 * np.pi), abs=1e-15)


def test_greens_quarter_period():
    val = ker.greens(np.pi, np.array([0.5, 0, 0]), np.array([0.0, 0, 0]))
    assert val == pytest.approx(-1j / (2 * np.pi), abs=1e-15)


def test_greens_singular_guard():
    with pytest.raises(SingularPoint):
        ker.greens(1.0, np.zeros(3), np.zeros(3))


def test_grad_greens_static():
    g = ker.grad_greens(0.0, np.array([1.0, 0, 0]), np.zeros(3))
    assert np.allclose(g, [-1 / (4 * np.pi), 0, 0], atol=1e-15)


def test_grad_greens_antisymmetric_spatial_factor():
    k = 1.7
    r1 = np.array([0.3, -0.2, 0.5])
    r2 = np.array([-0.1, 0.4, 0.1])
    g12 = ker.grad_greens(k, r1, r2)
    g21 = ker.grad_greens(k, r2, r1)
    assert np.allclose(g12, -g21, rtol=1e-13)


def test_grad_greens_finite_difference():
    k = 2 * np.pi
    r = np.array([0.35, 0.42, 0.31])    # R = 0.7 from the source
    rp = np.zeros(3)
    r = 0.7 * r / np.linalg.norm(r)
    h = 1e-6
    fd = np.array([(ker.greens(k, r + h * e, rp) - ker.greens(k, r - h * e, rp))
                   / (2 * h) for e in np.eye(3)])
    an = ker.grad_greens(k, r, rp)
    assert np.abs(fd - an).max() / np.abs(an).max() < 1e-6


def test_greens_satisfies_helmholtz():
    k = 2 * np.pi
    r = np.array([0.4, 0.3, 0.45])      # R ~ 0.67 >= 0.5 lambda
    rp = np.zeros(3)
    h = 1e-3
    lap = -6 * ker.greens(k, r, rp)
    for e in np.eye(3):
        lap += ker.greens(k, r + h * e, rp) + ker.greens(k, r - h * e, rp)
    lap /= h * h
    ref = k * k * ker.greens(k, r, rp)
    assert abs(lap + ref) / abs(ref) < 1e-5


def test_difference_kernels_match_naive():
    k1, k2 = 2 * np.pi, 2 * np.pi * np.sqrt(4.0)
    r = np.array([0.3, 0.5, 0.4])
    rp = np.zeros((1, 3))
    naive = ker.greens(k1, r, rp[0]) - ker.greens(k2, r, rp[0])
    assert abs(ker.greens_diff(k1, k2, r, rp)[0] - naive) < 1e-15
    gn = ker.grad_greens(k1, r, rp[0]) - ker.grad_greens(k2, r, rp[0])
    gs = ker.grad_greens_diff(k1, k2, r, rp)[0]
    assert np.abs(gn - gs).max() / np.abs(gn).max() < 1e-12


def test_difference_kernels_tiny_separation():
    # naive subtraction loses everything at R ~ 1e-9; the stable forms
    # must land on the analytic limits
    k1, k2 = 2 * np.pi, 4 * np.pi
    r = np.array([1e-9, 0.0, 0.0])
    rp = np.zeros((1, 3))
    gd = ker.greens_diff(k1, k2, r, rp)[0]
    assert gd == pytest.approx(-1j * (k1 - k2) / (4 * np.pi), rel=1e-6)
    gg = ker.grad_greens_diff(k1, k2, r, rp)[0]
    expected = -(k1**2 - k2**2) / (8 * np.pi)
    assert gg[0] == pytest.approx(expected, rel=1e-6)


def test_medium_invariants():
    med = ker.Medium.from_relative(4.0, 1.0, 1.0)
    assert med.k**2 == pytest.approx(med.omega**2 * med.eps * med.mu, rel=1e-12)
    lossy = ker.Medium((2 - 0.5j) * epsilon_0, mu_0, med.omega)
    assert lossy.k.imag <= 0


def test_plane_wave_at_origin():
    med = ker.Medium.from_relative(1.0, 1.0, 1.0)
    pw = ker.PlaneWave([0, 0, 1], [1, 0, 0], 1.0)
    E, H = ker.incident_fields(pw, med, np.zeros((1, 3)))
    assert np.allclose(E[0], [1, 0, 0], atol=1e-15)
    eta0 = np.real(med.eta)
    assert np.allclose(H[0], [0, 1 / eta0, 0], rtol=1e-12)


def test_plane_wave_impedance_and_transversality():
    med = ker.Medium.from_relative(2.25, 1.0, 0.7)
    pw = ker.PlaneWave([0, 1, 0], [0, 0, 1], 2.0)
    pts = np.random.default_rng(0).standard_normal((10, 3))
    E, H = ker.incident_fields(pw, med, pts)
    ratio = np.linalg.norm(E, axis=1) / np.linalg.norm(H, axis=1)
    assert np.abs(ratio - np.abs(med.eta)).max() < 1e-12 * np.abs(med.eta)
    assert np.abs(E @ pw.direction).max() < 1e-12
    assert np.abs(H @ pw.direction).max() < 1e-12


def test_plane_wave_polarization_check():
    with pytest.raises(ValueError):
        ker.PlaneWave([0, 0, 1], [0.1, 0, 1.0])


def test_dipole_fields_satisfy_faraday():
    med = ker.Medium.from_relative(1.0, 1.0, 1.0)
    dip = ker.Dipole([0, 0, 0], [0, 0, 1e-12])
    r0 = np.array([0.3, 0.2, 0.5])
    h = 1e-6
    curl = np.zeros(3, dtype=complex)
    for e in np.eye(3):
        dE = (ker.incident_fields(dip, med, (r0 + h * e)[None])[0][0]
              - ker.incident_fields(dip, med, (r0 - h * e)[None])[0][0]) / (2 * h)
        curl += np.cross(e, dE)
    H0 = ker.incident_fields(dip, med, r0[None])[1][0]
    rhs = -1j * med.omega * med.mu * H0
    assert np.abs(curl - rhs).max() / np.abs(rhs).max() < 1e-6


def test_formulation_component_counts():
    med = ker.Medium.from_relative(1.0, 1.0, 1.0)
    assert ker.FormulationSpec(ker.MFIE_PEC, med).n_components == 2
    med2 = ker.Medium.from_relative(4.0, 1.0, 1.0)
    assert ker.FormulationSpec(ker.MULLER, med, med2).n_components == 4


def test_muller_combination_coefficients():
    med = ker.Medium.from_relative(1.0, 1.0, 1.0)
    med2 = ker.Medium.from_relative(4.0, 2.0, 1.0)
    spec = ker.FormulationSpec(ker.MULLER, med, med2)
    assert spec.alpha == pytest.approx(-4.0)
    assert spec.beta == pytest.approx(-2.0)


def test_jump_matrices():
    med = ker.Medium.from_relative(1.0, 1.0, 1.0)
    spec = ker.FormulationSpec(ker.MFIE_PEC, med)
    assert np.allclose(spec.jump_matrix(), 0.5 * np.eye(2))
    med2 = ker.Medium.from_relative(4.0, 1.0, 1.0)
    spec2 = ker.FormulationSpec(ker.MULLER, med, med2)
    lam = spec2.jump_matrix()
    e_coef = -(med.eps + med2.eps) / 2
    m_coef = (med.mu + med2.mu) / 2
    assert lam[0, 2] == pytest.approx(e_coef)
    assert lam[1, 3] == pytest.approx(e_coef)
    assert lam[2, 0] == pytest.approx(m_coef)
    assert lam[3, 1] == pytest.approx(m_coef)
    lam[0, 2] = lam[1, 3] = lam[2, 0] = lam[3, 1] = 0.0
    assert np.abs(lam).max() == 0.0


def test_mfie_block_vanishes_for_coplanar_flat_frames():
    med = ker.Medium(epsilon_0, mu_0, 0.0)
    spec = ker.FormulationSpec(ker.MFIE_PEC, med)
    src = frame_batch([0.5, 0.2, 0.0], [1, 0, 0], [0, 1, 0])
    B, _ = ker.integrand_blocks(spec, np.zeros(3), np.array([1.0, 0, 0]),
                                np.array([0.0, 1, 0]), src)
    assert np.abs(B).max() == 0.0


def test_muller_identical_media_kernel_vanishes():
    med = ker.Medium.from_relative(1.0, 1.0, 1.0)
    spec = ker.FormulationSpec(ker.MULLER, med, med)
    src = frame_batch([0.5, 0.2, 0.1], [1, 0, 0], [0, 1, 0])
    B, Bd = ker.integrand_blocks(spec, np.zeros(3), np.array([1.0, 0, 0]),
                                 np.array([0.0, 1, 0]), src)
    assert np.abs(B).max() == 0.0
    assert np.abs(Bd).max() == 0.0


def test_mfie_block_triple_product_identity():
    # independent formula: t_b . (g x a_a) = g . (a_a x t_b), with the
    # tested pattern rows (+a_v, -a_u) of the curl operator
    med = ker.Medium.from_relative(1.0, 1.0, 1.0)
    spec = ker.FormulationSpec(ker.MFIE_PEC, med)
    rng = np.random.default_rng(42)
    for _ in range(5):
        obs = rng.standard_normal(3)
        o_au, o_av = rng.standard_normal((2, 3))
        s_pos = obs + rng.standard_normal(3) * 2.0
        s_au, s_av = rng.standard_normal((2, 3))
        src = frame_batch(s_pos, s_au, s_av)
        B, _ = ker.integrand_blocks(spec, obs, o_au, o_av, src)
        g = ker.grad_greens(med.k, obs, s_pos)
        sg = src.sqrt_g[0]
        for col, a_vec in ((0, s_au), (1, s_av)):
            expected_u = g @ np.cross(a_vec, -o_av) / sg * (-1)
            expected_v = g @ np.cross(a_vec, o_au) / sg * (-1)
            assert B[0, 0, col] == pytest.approx(expected_u, rel=1e-12)
            assert B[0, 1, col] == pytest.approx(expected_v, rel=1e-12)
