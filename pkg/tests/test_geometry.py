import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chebscat import chebyshev as cheb
from chebscat import geometry as geo
from chebscat.errors import DegeneratePatch, DimensionError, EmptyInput


def flat_patch(order=5, skew=0.0, scale=1.0):
    u = cheb.fejer1(order).nodes
    V, U = np.meshgrid(u, u, indexing="ij")
    samples = np.stack([scale * U, scale * (V + skew * U), np.zeros_like(U)],
                       axis=-1).transpose(1, 0, 2).copy()
    return geo.Patch(0, samples)


def test_sphere_patch_counts():
    assert len(geo.unit_sphere_patches(1.0, 0, (4, 4))) == 6
    assert len(geo.unit_sphere_patches(1.0, 1, (4, 4))) == 24
    assert len(geo.unit_sphere_patches(1.0, 2, (4, 4))) == 96


def test_sphere_samples_on_sphere():
    for p in geo.unit_sphere_patches(3.0, 1, (5, 5)):
        r = np.linalg.norm(p.samples.reshape(-1, 3), axis=1)
        assert np.abs(r - 3.0).max() < 1e-12 * 3.0


def test_flat_patch_frame():
    f = geo.eval_frame(flat_patch(), 0.3, -0.2)
    assert np.allclose(f.position, [0.3, -0.2, 0.0], atol=1e-13)
    assert np.allclose(f.a_u, [1, 0, 0], atol=1e-12)
    assert np.allclose(f.a_v, [0, 1, 0], atol=1e-12)
    assert np.allclose(f.normal, [0, 0, 1], atol=1e-12)
    assert f.sqrt_g == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(f.a_up, f.a_u, atol=1e-12)
    assert np.allclose(f.a_vp, f.a_v, atol=1e-12)


def test_sphere_normal_is_radial():
    p = geo.unit_sphere_patches(2.0, 0, (6, 6))[2]
    fb = p.node_frames()
    radial = np.abs(np.abs(np.sum(fb.normal * fb.position / 2.0, axis=1)) - 1.0)
    assert radial.max() < 1e-10


def test_skewed_patch_contravariant():
    # r(u,v) = (u, v+u, 0): a_u=(1,1,0), a_v=(0,1,0), n=z
    # a^u must satisfy a^u.a_v = 0, a^u.a_u = 1: a^u = (1,0,0) by hand
    f = geo.eval_frame(flat_patch(skew=1.0), 0.1, 0.5)
    assert abs(f.a_up @ f.a_v) < 1e-12
    assert f.a_up @ f.a_u == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(f.a_up, [1.0, 0.0, 0.0], atol=1e-12)


@given(st.floats(-1, 1), st.floats(-1, 1), st.integers(0, 5))
@settings(max_examples=40, deadline=None)
def test_frame_invariants_on_sphere(u, v, face):
    p = geo.unit_sphere_patches(1.3, 0, (6, 6))[face]
    f = geo.eval_frame(p, u, v)
    assert f.a_up @ f.a_u == pytest.approx(1.0, abs=1e-12)
    assert f.a_vp @ f.a_v == pytest.approx(1.0, abs=1e-12)
    assert abs(f.a_up @ f.a_v) < 1e-12
    assert abs(f.a_vp @ f.a_u) < 1e-12
    cross = np.cross(f.a_u, f.a_v)
    assert f.sqrt_g == pytest.approx(np.linalg.norm(cross), rel=1e-12)
    assert np.allclose(f.normal, cross / np.linalg.norm(cross), atol=1e-12)


def test_degenerate_patch_raises():
    u = cheb.fejer1(4).nodes
    V, U = np.meshgrid(u, u, indexing="ij")
    # collapse v: all columns identical -> a_v = 0
    samples = np.stack([U, np.zeros_like(U), np.zeros_like(U)],
                       axis=-1).transpose(1, 0, 2).copy()
    p = geo.Patch(0, samples)
    with pytest.raises(DegeneratePatch):
        geo.eval_frame(p, 0.0, 0.0)


def test_sphere_area_spectral_convergence():
    def area(order):
        total = 0.0
        for p in geo.unit_sphere_patches(1.0, 0, (order, order)):
            total += p.node_weights() @ p.node_frames().sqrt_g
        return total

    e4 = abs(area(4) - 4 * np.pi)
    e8 = abs(area(8) - 4 * np.pi)
    assert e4 / e8 >= 10.0


def test_bounding_box_examples():
    b = geo.bounding_box(np.array([[0, 0, 0], [1, 1, 1.0]]))
    assert geo.diam(b) == pytest.approx(np.sqrt(3.0), abs=1e-14)
    b2 = geo.bounding_box(np.array([[1, 1, 1], [2, 2, 2.0]]))
    assert geo.dist(b, b2) == 0.0
    b3 = geo.bounding_box(np.array([[5, 5, 5], [6, 6, 6.0]]))
    assert geo.dist(b, b3) == pytest.approx(4 * np.sqrt(3.0), abs=1e-13)


def test_bounding_box_empty():
    with pytest.raises(EmptyInput):
        geo.bounding_box(np.zeros((0, 3)))


@given(seed=st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_dist_symmetry_and_self(seed):
    rng = np.random.default_rng(seed)
    b1 = geo.bounding_box(rng.standard_normal((4, 3)))
    b2 = geo.bounding_box(rng.standard_normal((4, 3)) + 1.0)
    assert geo.dist(b1, b1) == 0.0
    assert geo.dist(b1, b2) == pytest.approx(geo.dist(b2, b1), abs=0.0)


def test_mesh_roundtrip(tmp_path):
    patches = geo.unit_sphere_patches(2.0, 0, (5, 5))
    path = tmp_path / "sphere.mesh"
    geo.save_patch_mesh(path, patches)
    loaded = geo.load_patch_mesh(path)
    assert len(loaded) == len(patches)
    for lp, op in zip(loaded, patches):
        assert np.abs(lp.samples - op.samples).max() < 1e-15


def test_mesh_dimension_error(tmp_path):
    path = tmp_path / "bad.mesh"
    lines = ["1 4 4"] + ["0 0 0"] * 9   # 3x3 worth of data declared as 4x4
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DimensionError):
        geo.load_patch_mesh(path)


def test_two_patch_plate_shares_edge(tmp_path):
    # two flat unit patches meeting along x = 1 (hand-built fixture)
    u = cheb.fejer1(4).nodes
    V, U = np.meshgrid(u, u, indexing="ij")
    left = np.stack([U, V, np.zeros_like(U)], axis=-1).transpose(1, 0, 2)
    right = left.copy()
    right[:, :, 0] += 2.0
    path = tmp_path / "plate.mesh"
    geo.save_patch_mesh(path, [geo.Patch(0, left.copy()), geo.Patch(1, right.copy())])
    loaded = geo.load_patch_mesh(path)
    t = np.linspace(-1, 1, 7)
    e0 = np.stack([cheb.eval2d(loaded[0].position_coeffs()[:, :, i],
                               np.ones_like(t), t) for i in range(3)], axis=1)
    e1 = np.stack([cheb.eval2d(loaded[1].position_coeffs()[:, :, i],
                               -np.ones_like(t), t) for i in range(3)], axis=1)
    assert np.abs(e0 - e1).max() < 1e-12


def test_watertight_sphere_mesh():
    patches = geo.unit_sphere_patches(1.0, 1, (6, 6))
    assert geo.watertightness_gap(patches) < 1e-10
