import numpy as np
import pytest

from chebscat import hmatrix as hm
from chebscat.errors import RankOverflow, SingularDiagonal
from chebscat.geometry import BoundingBox


class KernelGen:
    """Synthetic smooth-kernel generator over a point cloud."""

    def __init__(self, pts, C=1, k=2 * np.pi, diag=2.0):
        self.pts = pts
        self.C = C
        self.k = k
        self.diag = diag
        self.N = pts.shape[0] * C

    def _kernel(self, i, j):
        pi, ci = divmod(i, self.C)
        pj, cj = divmod(j, self.C)
        R = np.linalg.norm(self.pts[pi] - self.pts[pj])
        if R < 1e-12:
            return complex(self.diag if ci == cj else 0.3)
        scale = 1.0 if ci == cj else 0.3
        return scale * np.exp(-1j * self.k * R) / (4 * np.pi * R)

    def row_segment(self, i, cols):
        return np.array([self._kernel(i, int(j)) for j in cols])

    def col_segment(self, rows, j):
        return np.array([self._kernel(int(i), j) for i in rows])

    def block(self, rows, cols):
        return np.array([[self._kernel(int(i), int(j)) for j in cols]
                         for i in rows])


@pytest.fixture(scope="module")
def sphere_cloud():
    th = np.linspace(0.2, np.pi - 0.2, 10)
    ph = np.linspace(0, 2 * np.pi, 20, endpoint=False)
    T, P = np.meshgrid(th, ph, indexing="ij")
    return np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P),
                     np.cos(T)], axis=-1).reshape(-1, 3)


@pytest.fixture(scope="module")
def synth(sphere_cloud):
    gen = KernelGen(sphere_cloud, C=2)
    tree = hm.build_cluster_tree(sphere_cloud, 2, n_leaf=32)
    H = hm.build_block_tree(tree, eta=2.0).fill(gen, 1e-6)
    A = gen.block(np.arange(gen.N), np.arange(gen.N))
    return gen, tree, H, A


def test_collinear_points_balanced_split():
    pts = np.stack([np.arange(8.0), np.zeros(8), np.zeros(8)], axis=1)
    tree = hm.build_cluster_tree(pts, 1, n_leaf=2)
    leaves = []

    def walk(n):
        if not n.children:
            leaves.append(n.n_points)
        else:
            for c in n.children:
                walk(c)

    walk(tree.root)
    assert leaves == [2, 2, 2, 2]


def test_single_point_multicomponent_leaf():
    tree = hm.build_cluster_tree(np.zeros((1, 3)), 4, n_leaf=2)
    assert not tree.root.children
    assert tree.n_dofs == 4


def test_permutation_is_bijection(sphere_cloud):
    tree = hm.build_cluster_tree(sphere_cloud, 3, n_leaf=16)
    assert np.array_equal(np.sort(tree.perm_points), np.arange(len(sphere_cloud)))
    assert np.array_equal(np.sort(tree.dof_perm), np.arange(tree.n_dofs))


def test_components_stay_together(sphere_cloud):
    tree = hm.build_cluster_tree(sphere_cloud, 3, n_leaf=18)

    def walk(node):
        dofs = tree.node_dofs(node)
        pts = dofs // 3
        # each point contributes all 3 components or none
        unique, counts = np.unique(pts, return_counts=True)
        assert np.all(counts == 3)
        for c in node.children:
            walk(c)

    walk(tree.root)


def test_leaf_sizes_respect_threshold(sphere_cloud):
    tree = hm.build_cluster_tree(sphere_cloud, 2, n_leaf=24)

    def walk(node):
        if not node.children:
            assert node.n_points * 2 <= 24
        for c in node.children:
            walk(c)

    walk(tree.root)


def test_admissibility_truth_table():
    b1 = BoundingBox(np.zeros(3), np.ones(3))
    far = BoundingBox(np.full(3, 5.0), np.full(3, 6.0))
    touching = BoundingBox(np.ones(3), np.full(3, 2.0))
    # min diam = sqrt(3), dist = 4 sqrt(3): sqrt(3) <= 2 * 4 sqrt(3)
    assert hm.admissible(b1, far, 2.0)
    assert not hm.admissible(b1, touching, 2.0)   # dist = 0
    assert not hm.admissible(b1, b1, 2.0)         # root-root case
    assert not hm.admissible(b1, far, 0.1)        # eta too strict


def test_block_tiling_exhaustive(synth):
    gen, tree, H, A = synth
    N = gen.N
    cover = np.zeros((N, N), dtype=np.int16)

    def mark(block, rnode, cnode):
        if isinstance(block, hm.HBlock):
            for a, rk in enumerate(block.rows):
                for b, ck in enumerate(block.cols):
                    mark(block.children[a][b], rk, ck)
        else:
            rd = tree.node_dofs(rnode)
            cd = tree.node_dofs(cnode)
            cover[np.ix_(rd, cd)] += 1

    mark(H.root, tree.root, tree.root)
    assert np.all(cover == 1)


def test_admissible_leaves_reverified(synth):
    gen, tree, H, A = synth
    for rnode, cnode in H.admissible_pairs:
        assert hm.admissible(rnode.box, cnode.box, H.eta)


def test_aca_exact_rank_one(rng):
    u = rng.standard_normal(30) + 1j * rng.standard_normal(30)
    v = rng.standard_normal(40)
    M = np.outer(u, v)
    U, V = hm.aca(lambda i: M[i].copy(), lambda j: M[:, j].copy(), 30, 40, 1e-12)
    assert U.shape[1] == 1
    assert np.abs(U @ V - M).max() < 1e-14 * np.abs(M).max()


def test_aca_zero_block():
    Z = np.zeros((10, 12), dtype=complex)
    U, V = hm.aca(lambda i: Z[i].copy(), lambda j: Z[:, j].copy(), 10, 12, 1e-10)
    assert U.shape[1] == 0


def test_aca_green_kernel_block(rng):
    # separated sphere caps: rank grows slowly; tolerance must be met
    n1, n2 = 60, 50
    a1 = rng.standard_normal((n1, 3))
    a1 /= np.linalg.norm(a1, axis=1, keepdims=True)
    a2 = rng.standard_normal((n2, 3))
    a2 /= np.linalg.norm(a2, axis=1, keepdims=True)
    p1 = 0.4 * a1
    p2 = 0.4 * a2 + np.array([4.0, 0.0, 0.0])
    k = 2 * np.pi
    R = np.linalg.norm(p1[:, None] - p2[None, :], axis=-1)
    M = np.exp(-1j * k * R) / (4 * np.pi * R)
    U, V = hm.aca(lambda i: M[i].copy(), lambda j: M[:, j].copy(),
                  n1, n2, 1e-4)
    err = np.linalg.norm(U @ V - M) / np.linalg.norm(M)
    assert err <= 1e-4
    assert U.shape[1] < min(n1, n2) / 2


def test_aca_rank_overflow():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((12, 12)) + 1j * rng.standard_normal((12, 12))
    with pytest.raises(RankOverflow):
        hm.aca(lambda i: M[i].copy(), lambda j: M[:, j].copy(), 12, 12, 1e-14)


def test_matvec_matches_dense(synth, rng):
    gen, tree, H, A = synth
    for _ in range(3):
        x = rng.standard_normal(gen.N) + 1j * rng.standard_normal(gen.N)
        err = np.linalg.norm(H.matvec(x) - A @ x) / np.linalg.norm(A @ x)
        assert err <= 10 * 1e-6


def test_matvec_linearity(synth, rng):
    gen, tree, H, A = synth
    x = rng.standard_normal(gen.N) + 1j * rng.standard_normal(gen.N)
    z = rng.standard_normal(gen.N) + 1j * rng.standard_normal(gen.N)
    lhs = H.matvec(1.5 * x - 2j * z)
    rhs = 1.5 * H.matvec(x) - 2j * H.matvec(z)
    assert np.abs(lhs - rhs).max() < 1e-12 * np.abs(rhs).max()


def test_all_dense_matvec_exact(sphere_cloud, rng):
    gen = KernelGen(sphere_cloud[:40], C=1)
    tree = hm.build_cluster_tree(sphere_cloud[:40], 1, n_leaf=8)
    H = hm.build_block_tree(tree, eta=1e-9).fill(gen, 1e-6)   # nothing admissible
    assert all(isinstance(b, hm.Dense) for b in H.leaves())
    A = gen.block(np.arange(40), np.arange(40))
    x = rng.standard_normal(40) + 1j * rng.standard_normal(40)
    assert np.abs(H.matvec(x) - A @ x).max() < 1e-13 * np.abs(A @ x).max()


def test_hlu_two_by_two_dense_matches_lapack(rng):
    pts = np.array([[0.0, 0, 0], [0.1, 0, 0], [3.0, 0, 0], [3.1, 0, 0]])
    gen = KernelGen(pts, C=1, diag=3.0)
    tree = hm.build_cluster_tree(pts, 1, n_leaf=2)
    H = hm.build_block_tree(tree, eta=1e-9).fill(gen, 1e-12)
    A = gen.block(np.arange(4), np.arange(4))
    lu = hm.hlu_factor(H, 1e-12)
    b = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    x = lu.solve(b)
    assert np.abs(x - np.linalg.solve(A, b)).max() < 1e-12 * np.abs(x).max()


def test_hlu_identity():
    class IdGen:
        def row_segment(self, i, cols):
            return (np.asarray(cols) == i).astype(complex)

        def col_segment(self, rows, j):
            return (np.asarray(rows) == j).astype(complex)

        def block(self, rows, cols):
            return (np.asarray(rows)[:, None] == np.asarray(cols)[None, :]).astype(complex)

    pts = np.random.default_rng(1).standard_normal((30, 3))
    tree = hm.build_cluster_tree(pts, 1, n_leaf=8)
    H = hm.build_block_tree(tree, eta=2.0).fill(IdGen(), 1e-10)
    lu = hm.hlu_factor(H, 1e-10)
    b = np.arange(30, dtype=complex)
    assert np.abs(lu.solve(b) - b).max() < 1e-12


def test_hlu_solve_residual_and_multi_rhs(synth, rng):
    gen, tree, H, A = synth
    lu = hm.hlu_factor(H, 1e-6)
    b = rng.standard_normal(gen.N) + 1j * rng.standard_normal(gen.N)
    x = lu.solve(b)
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 100 * 1e-6
    B = np.stack([b, -2j * b], axis=1)
    X = lu.solve(B)
    assert np.allclose(X[:, 0], x)
    assert np.allclose(X[:, 1], lu.solve(-2j * b))


def test_hlu_zero_rhs(synth):
    gen, tree, H, A = synth
    lu = hm.hlu_factor(H, 1e-6)
    assert np.abs(lu.solve(np.zeros(gen.N, dtype=complex))).max() == 0.0


def test_hlu_singular_diagonal():
    class ZeroGen:
        def row_segment(self, i, cols):
            return np.zeros(len(cols), dtype=complex)

        def col_segment(self, rows, j):
            return np.zeros(len(rows), dtype=complex)

        def block(self, rows, cols):
            return np.zeros((len(rows), len(cols)), dtype=complex)

    pts = np.random.default_rng(3).standard_normal((12, 3))
    tree = hm.build_cluster_tree(pts, 1, n_leaf=4)
    H = hm.build_block_tree(tree, eta=2.0).fill(ZeroGen(), 1e-8)
    with pytest.raises(SingularDiagonal):
        hm.hlu_factor(H, 1e-8)


def test_compression_rate_all_dense(sphere_cloud):
    gen = KernelGen(sphere_cloud[:30], C=1)
    tree = hm.build_cluster_tree(sphere_cloud[:30], 1, n_leaf=8)
    H = hm.build_block_tree(tree, eta=1e-9).fill(gen, 1e-6)
    assert H.compression_rate() == 0.0


def test_compression_positive_on_synth(synth):
    gen, tree, H, A = synth
    assert 0.0 < H.compression_rate() < 1.0
    assert H.memory_bytes() == H.stored_scalars() * 16


def test_diagnostics_structure(synth):
    gen, tree, H, A = synth
    d = H.diagnostics()
    assert set(d) >= {"levels", "rank_histogram", "memory_bytes",
                      "compression_rate", "demoted_blocks"}
    assert sum(sum(v.values()) for v in d["levels"].values()) == len(H.leaves())
