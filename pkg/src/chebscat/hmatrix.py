"""Hierarchical matrix engine: cluster tree, ACA fill, H-LU solves.

The cluster tree recursively bisects quadrature points at the median of
the longest bounding-box axis; all vector components of one point stay
together. Block pairs satisfying the admissibility condition
min(diam) <= eta * dist become low-rank leaves compressed by partially
pivoted ACA with QR/SVD recompression; the rest subdivide down to dense
leaves. Factorization is recursive block LU with formatted (truncated)
low-rank arithmetic, pivoting only inside dense diagonal leaves.
"""

from __future__ import annotations

import copy
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack as _lapack

from .errors import RankOverflow, SingularDiagonal
from .geometry import BoundingBox, bounding_box, diam, dist


# ---------------------------------------------------------------------------
# Cluster tree
# ---------------------------------------------------------------------------

@dataclass
class ClusterNode:
    lo: int                      # point-range start in permuted order
    hi: int
    box: BoundingBox
    children: list["ClusterNode"] = field(default_factory=list)
    level: int = 0

    @property
    def n_points(self) -> int:
        return self.hi - self.lo


class ClusterTree:
    """Geometric bisection tree over quadrature points with C dofs each."""

    def __init__(self, points: np.ndarray, n_components: int, n_leaf: int = 64):
        points = np.asarray(points, dtype=float)
        self.points = points
        self.C = n_components
        self.n_leaf = n_leaf
        self.n_points = points.shape[0]
        self.n_dofs = self.n_points * n_components
        self.perm_points = np.arange(self.n_points)
        self.root = self._split(0, self.n_points, 0)
        # dof permutation: new dof index -> original dof index
        base = self.perm_points * n_components
        self.dof_perm = (base[:, None] + np.arange(n_components)).ravel()
        self.dof_inv = np.empty_like(self.dof_perm)
        self.dof_inv[self.dof_perm] = np.arange(self.n_dofs)

    def _split(self, lo: int, hi: int, level: int) -> ClusterNode:
        idx = self.perm_points[lo:hi]
        box = bounding_box(self.points[idx])
        node = ClusterNode(lo, hi, box, level=level)
        if (hi - lo) * self.C <= self.n_leaf or hi - lo < 2:
            return node
        ext = box.hi - box.lo
        axis = int(np.argmax(ext))
        order = np.argsort(self.points[idx, axis], kind="stable")
        self.perm_points[lo:hi] = idx[order]
        mid = lo + (hi - lo) // 2
        node.children = [self._split(lo, mid, level + 1),
                         self._split(mid, hi, level + 1)]
        return node

    def node_dofs(self, node: ClusterNode) -> np.ndarray:
        """Original dof ids covered by a node, in permuted order."""
        return self.dof_perm[node.lo * self.C: node.hi * self.C]


def build_cluster_tree(points: np.ndarray, n_components: int,
                       n_leaf: int = 64) -> ClusterTree:
    return ClusterTree(points, n_components, n_leaf)


def admissible(b1: BoundingBox, b2: BoundingBox, eta: float) -> bool:
    d = dist(b1, b2)
    return d > 0 and min(diam(b1), diam(b2)) <= eta * d


# ---------------------------------------------------------------------------
# Block kinds
# ---------------------------------------------------------------------------

class Dense:
    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        self.data = data

    @property
    def shape(self):
        return self.data.shape

    def scalars(self) -> int:
        return self.data.size


class DenseLU:
    """Factored dense diagonal leaf: A = P^T L U with internal pivots."""

    __slots__ = ("lu", "piv")

    def __init__(self, lu: np.ndarray, piv: np.ndarray):
        self.lu = lu
        self.piv = piv

    @property
    def shape(self):
        return self.lu.shape

    def scalars(self) -> int:
        return self.lu.size


class LowRank:
    __slots__ = ("U", "V")

    def __init__(self, U: np.ndarray, V: np.ndarray):
        self.U = U
        self.V = V

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @property
    def shape(self):
        return (self.U.shape[0], self.V.shape[1])

    def scalars(self) -> int:
        return self.U.size + self.V.size


class HBlock:
    """Subdivided block: children grid over row/col cluster children."""

    __slots__ = ("rnode", "cnode", "rows", "cols", "children")

    def __init__(self, rnode: ClusterNode, cnode: ClusterNode, C: int):
        self.rnode = rnode
        self.cnode = cnode
        rkids = rnode.children or [rnode]
        ckids = cnode.children or [cnode]
        self.rows = rkids
        self.cols = ckids
        self.children: list[list] = [[None] * len(ckids) for _ in rkids]

    @property
    def shape(self):
        return (self.rnode.hi - self.rnode.lo, self.cnode.hi - self.cnode.lo)


Block = Dense | DenseLU | LowRank | HBlock


def _shape(block, C: int):
    if isinstance(block, HBlock):
        return ((block.rnode.hi - block.rnode.lo) * C,
                (block.cnode.hi - block.cnode.lo) * C)
    return block.shape


# ---------------------------------------------------------------------------
# H-matrix container, construction and fill
# ---------------------------------------------------------------------------

class HMatrix:
    def __init__(self, tree: ClusterTree, eta: float):
        self.tree = tree
        self.eta = eta
        self.C = tree.C
        self.N = tree.n_dofs
        self.root: Optional[Block] = None
        self.admissible_pairs: list[tuple[ClusterNode, ClusterNode]] = []
        self.demoted = 0

    # -- structure ----------------------------------------------------------
    def build_structure(self):
        self.root = self._descend(self.tree.root, self.tree.root)
        return self

    def _descend(self, rnode: ClusterNode, cnode: ClusterNode) -> Block:
        if admissible(rnode.box, cnode.box, self.eta):
            self.admissible_pairs.append((rnode, cnode))
            return _PendingLowRank(rnode, cnode)
        if not rnode.children and not cnode.children:
            return _PendingDense(rnode, cnode)
        blk = HBlock(rnode, cnode, self.C)
        for a, rk in enumerate(blk.rows):
            for b, ck in enumerate(blk.cols):
                blk.children[a][b] = self._descend(rk, ck)
        return blk

    # -- fill ----------------------------------------------------------------
    def fill(self, generator, tol: float, workers: int = 1):
        leaves = []
        self.root = self._collect(self.root, leaves)
        tasks = [(i, leaf) for i, leaf in enumerate(leaves)]
        filled: list = [None] * len(leaves)

        def run(item):
            i, leaf = item
            filled[i] = self._fill_leaf(leaf, generator, tol)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                list(ex.map(run, tasks))
        else:
            for t in tasks:
                run(t)
        self.root = self._replace(self.root, iter(filled))
        return self

    def _collect(self, block, out):
        if isinstance(block, HBlock):
            for row in block.children:
                for i, child in enumerate(row):
                    self._collect(child, out)
            return block
        out.append(block)
        return block

    def _replace(self, block, it):
        if isinstance(block, HBlock):
            for row in block.children:
                for i in range(len(row)):
                    row[i] = self._replace(row[i], it)
            return block
        return next(it)

    def _fill_leaf(self, leaf, generator, tol):
        tree = self.tree
        if not isinstance(leaf, _PendingLowRank):
            rows = tree.node_dofs(leaf.rnode)
            cols = tree.node_dofs(leaf.cnode)
            return Dense(generator.block(rows, cols))
        rows = tree.node_dofs(leaf.rnode)
        cols = tree.node_dofs(leaf.cnode)
        m, n = rows.size, cols.size

        def get_row(i):
            return generator.row_segment(int(rows[i]), cols)

        def get_col(j):
            return generator.col_segment(rows, int(cols[j]))

        try:
            U, V = aca(get_row, get_col, m, n, tol)
        except RankOverflow:
            self.demoted += 1
            return Dense(generator.block(rows, cols))
        return LowRank(U, V)

    # -- application and accounting ------------------------------------------
    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        xp = x[self.tree.dof_perm]
        yp = apply_right(self.root, xp.reshape(-1, 1) if x.ndim == 1 else xp,
                         self.C)
        y = np.empty_like(yp)
        y[self.tree.dof_perm] = yp
        return y[:, 0] if x.ndim == 1 else y

    def leaves(self):
        out = []
        _walk(self.root, out)
        return out

    def stored_scalars(self) -> int:
        return sum(leaf.scalars() for leaf in self.leaves())

    def memory_bytes(self) -> int:
        return self.stored_scalars() * 16

    def compression_rate(self) -> float:
        return 1.0 - self.stored_scalars() / float(self.N) ** 2

    def diagnostics(self) -> dict:
        """Per-level block counts, rank histogram, memory by leaf kind."""
        by_level: dict[int, dict[str, int]] = {}
        ranks: dict[int, int] = {}
        mem = {"dense": 0, "lowrank": 0}
        for block, level in _walk_levels(self.root, 0):
            kind = type(block).__name__.lower()
            lv = by_level.setdefault(level, {})
            lv[kind] = lv.get(kind, 0) + 1
            if isinstance(block, LowRank):
                ranks[block.rank] = ranks.get(block.rank, 0) + 1
                mem["lowrank"] += block.scalars() * 16
            elif isinstance(block, (Dense, DenseLU)):
                mem["dense"] += block.scalars() * 16
        return {"levels": {str(k): v for k, v in sorted(by_level.items())},
                "rank_histogram": {str(k): v for k, v in sorted(ranks.items())},
                "memory_bytes": mem,
                "compression_rate": self.compression_rate(),
                "demoted_blocks": self.demoted}


class _PendingDense:
    __slots__ = ("rnode", "cnode")

    def __init__(self, rnode, cnode):
        self.rnode = rnode
        self.cnode = cnode

    def scalars(self):
        return 0


class _PendingLowRank(_PendingDense):
    pass


def _walk(block, out):
    if isinstance(block, HBlock):
        for row in block.children:
            for child in row:
                _walk(child, out)
    else:
        out.append(block)


def _walk_levels(block, level):
    if isinstance(block, HBlock):
        for row in block.children:
            for child in row:
                yield from _walk_levels(child, level + 1)
    else:
        yield block, level


def build_block_tree(tree: ClusterTree, eta: float = 2.0) -> HMatrix:
    return HMatrix(tree, eta).build_structure()


# ---------------------------------------------------------------------------
# ACA with recompression
# ---------------------------------------------------------------------------

def aca(get_row: Callable, get_col: Callable, m: int, n: int, tol: float,
        max_rank: Optional[int] = None):
    """Partially pivoted ACA; returns recompressed (U, V).

    Stops when the new cross satisfies |u||v| <= tol * |A_k|_F with the
    Frobenius norm accumulated from the crosses. Raises RankOverflow
    past min(m, n)/2 so the caller can demote the block to dense.
    """
    budget = max(1, min(m, n) // 2) if max_rank is None else max_rank
    us: list[np.ndarray] = []
    vs: list[np.ndarray] = []
    used_rows: set[int] = set()
    used_cols: set[int] = set()
    fnorm2 = 0.0
    i = 0
    tiny = 1e-300
    while True:
        row = get_row(i)
        for u_l, v_l in zip(us, vs):
            row = row - u_l[i] * v_l
        used_rows.add(i)
        mask = np.ones(n, dtype=bool)
        mask[list(used_cols)] = False
        if not mask.any():
            break
        j = int(np.flatnonzero(mask)[np.argmax(np.abs(row[mask]))])
        piv = row[j]
        if abs(piv) < tiny:
            remaining = [r for r in range(m) if r not in used_rows]
            if not remaining:
                break
            i = remaining[0]
            continue
        v = row / piv
        col = get_col(j)
        for u_l, v_l in zip(us, vs):
            col = col - v_l[j] * u_l
        used_cols.add(j)
        u = col
        cross = sum((np.vdot(u_l, u)) * (v @ np.conj(v_l)) for u_l, v_l in zip(us, vs))
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        fnorm2 += 2.0 * float(np.real(cross)) + (nu * nv) ** 2
        us.append(u)
        vs.append(v)
        if len(us) > budget:
            raise RankOverflow(f"ACA rank {len(us)} over budget {budget} on {m}x{n}")
        if nu * nv <= tol * np.sqrt(max(fnorm2, 0.0)):
            break
        rmask = np.ones(m, dtype=bool)
        rmask[list(used_rows)] = False
        if not rmask.any():
            break
        i = int(np.flatnonzero(rmask)[np.argmax(np.abs(u[rmask]))])
    if not us:
        return (np.zeros((m, 0), dtype=complex), np.zeros((0, n), dtype=complex))
    U = np.stack(us, axis=1)
    V = np.stack(vs, axis=0)
    return truncate_lowrank(U, V, tol)


def truncate_lowrank(U: np.ndarray, V: np.ndarray, tol: float):
    """QR + SVD recompression keeping singular values above tol * s0."""
    if U.shape[1] == 0:
        return U, V
    Qu, Ru = np.linalg.qr(U)
    Qv, Rv = np.linalg.qr(V.T)
    W, s, Zh = np.linalg.svd(Ru @ Rv.T)
    if s.size == 0 or s[0] == 0.0:
        return (np.zeros((U.shape[0], 0), dtype=U.dtype),
                np.zeros((0, V.shape[1]), dtype=V.dtype))
    r = int(np.sum(s > tol * s[0]))
    r = max(r, 1)
    Unew = Qu @ (W[:, :r] * s[:r])
    Vnew = Zh[:r, :] @ Qv.T
    return Unew, Vnew


# ---------------------------------------------------------------------------
# Block application helpers
# ---------------------------------------------------------------------------

def apply_right(block: Block, X: np.ndarray, C: int) -> np.ndarray:
    """block @ X for dense X (k, p)."""
    if isinstance(block, Dense):
        return block.data @ X
    if isinstance(block, LowRank):
        return block.U @ (block.V @ X)
    if isinstance(block, DenseLU):
        raise TypeError("factored leaf has no plain product")
    out = np.zeros((_shape(block, C)[0], X.shape[1]), dtype=complex)
    r0 = block.rnode.lo * C
    c0 = block.cnode.lo * C
    for a, rk in enumerate(block.rows):
        ra = rk.lo * C - r0
        rb = rk.hi * C - r0
        for b, ck in enumerate(block.cols):
            ca = ck.lo * C - c0
            cb = ck.hi * C - c0
            out[ra:rb] += apply_right(block.children[a][b], X[ca:cb], C)
    return out


def apply_left(X: np.ndarray, block: Block, C: int) -> np.ndarray:
    """X @ block for dense X (p, k)."""
    if isinstance(block, Dense):
        return X @ block.data
    if isinstance(block, LowRank):
        return (X @ block.U) @ block.V
    if isinstance(block, DenseLU):
        raise TypeError("factored leaf has no plain product")
    out = np.zeros((X.shape[0], _shape(block, C)[1]), dtype=complex)
    r0 = block.rnode.lo * C
    c0 = block.cnode.lo * C
    for a, rk in enumerate(block.rows):
        ra = rk.lo * C - r0
        rb = rk.hi * C - r0
        for b, ck in enumerate(block.cols):
            ca = ck.lo * C - c0
            cb = ck.hi * C - c0
            out[:, ca:cb] += apply_left(X[:, ra:rb], block.children[a][b], C)
    return out


def to_dense(block: Block, C: int) -> np.ndarray:
    if isinstance(block, Dense):
        return block.data.copy()
    if isinstance(block, LowRank):
        return block.U @ block.V
    if isinstance(block, DenseLU):
        # reconstruct P^T L U
        n = block.lu.shape[0]
        L = np.tril(block.lu, -1) + np.eye(n)
        U = np.triu(block.lu)
        A = L @ U
        for k in range(n - 1, -1, -1):
            p = block.piv[k]
            if p != k:
                A[[k, p]] = A[[p, k]]
        return A
    m, n = _shape(block, C)
    out = np.zeros((m, n), dtype=complex)
    r0 = block.rnode.lo * C
    c0 = block.cnode.lo * C
    for a, rk in enumerate(block.rows):
        for b, ck in enumerate(block.cols):
            out[rk.lo * C - r0: rk.hi * C - r0,
                ck.lo * C - c0: ck.hi * C - c0] = to_dense(block.children[a][b], C)
    return out


def to_lowrank(block: Block, C: int, tol: float):
    """(U, V) approximation of any block (agglomeration for H blocks)."""
    if isinstance(block, LowRank):
        return block.U, block.V
    if isinstance(block, Dense):
        W, s, Zh = np.linalg.svd(block.data, full_matrices=False)
        if s.size == 0 or s[0] == 0.0:
            m, n = block.data.shape
            return (np.zeros((m, 0), dtype=complex), np.zeros((0, n), dtype=complex))
        r = max(1, int(np.sum(s > tol * s[0])))
        return W[:, :r] * s[:r], Zh[:r]
    m, n = _shape(block, C)
    Us, Vs = [], []
    r0 = block.rnode.lo * C
    c0 = block.cnode.lo * C
    for a, rk in enumerate(block.rows):
        for b, ck in enumerate(block.cols):
            Uc, Vc = to_lowrank(block.children[a][b], C, tol)
            Ubig = np.zeros((m, Uc.shape[1]), dtype=complex)
            Ubig[rk.lo * C - r0: rk.hi * C - r0] = Uc
            Vbig = np.zeros((Vc.shape[0], n), dtype=complex)
            Vbig[:, ck.lo * C - c0: ck.hi * C - c0] = Vc
            Us.append(Ubig)
            Vs.append(Vbig)
    U = np.concatenate(Us, axis=1) if Us else np.zeros((m, 0), dtype=complex)
    V = np.concatenate(Vs, axis=0) if Vs else np.zeros((0, n), dtype=complex)
    return truncate_lowrank(U, V, tol)


# ---------------------------------------------------------------------------
# Formatted add / multiply
# ---------------------------------------------------------------------------

def add_lowrank(C_blk: Block, U: np.ndarray, V: np.ndarray, C: int, tol: float):
    """C_blk += U @ V with truncation at low-rank leaves."""
    if U.shape[1] == 0:
        return C_blk
    if isinstance(C_blk, Dense):
        C_blk.data += U @ V
        return C_blk
    if isinstance(C_blk, LowRank):
        Unew = np.concatenate([C_blk.U, U], axis=1)
        Vnew = np.concatenate([C_blk.V, V], axis=0)
        C_blk.U, C_blk.V = truncate_lowrank(Unew, Vnew, tol)
        return C_blk
    r0 = C_blk.rnode.lo * C
    c0 = C_blk.cnode.lo * C
    for a, rk in enumerate(C_blk.rows):
        for b, ck in enumerate(C_blk.cols):
            add_lowrank(C_blk.children[a][b],
                        U[rk.lo * C - r0: rk.hi * C - r0],
                        V[:, ck.lo * C - c0: ck.hi * C - c0], C, tol)
    return C_blk


def mult_add(C_blk: Block, A: Block, B: Block, C: int, tol: float,
             sign: complex = -1.0):
    """C_blk += sign * A @ B in formatted arithmetic."""
    if isinstance(A, LowRank):
        if A.rank == 0:
            return
        W = apply_left(A.V, B, C)
        add_lowrank(C_blk, sign * A.U, W, C, tol)
        return
    if isinstance(B, LowRank):
        if B.rank == 0:
            return
        W = apply_right(A, B.U, C)
        add_lowrank(C_blk, sign * W, B.V, C, tol)
        return
    if isinstance(A, Dense) and isinstance(B, Dense):
        add_dense(C_blk, sign * (A.data @ B.data), C, tol)
        return
    # sibling clusters may differ in leaf-ness, pairing a dense leaf with a
    # subdivided block; sizes stay sibling-bounded so a dense product is fine
    if isinstance(A, Dense):
        add_dense(C_blk, sign * apply_left(A.data, B, C), C, tol)
        return
    if isinstance(B, Dense):
        add_dense(C_blk, sign * apply_right(A, B.data, C), C, tol)
        return
    # both subdivided
    if isinstance(A, HBlock) and isinstance(B, HBlock):
        if isinstance(C_blk, HBlock):
            for a, rk in enumerate(C_blk.rows):
                for b, ck in enumerate(C_blk.cols):
                    for k in range(len(A.cols)):
                        mult_add(C_blk.children[a][b], A.children[a][k],
                                 B.children[k][b], C, tol, sign)
            return
        # target is a leaf: agglomerate the product to low rank first
        U, V = _mult_to_lowrank(A, B, C, tol)
        add_lowrank(C_blk, sign * U, V, C, tol)
        return
    raise TypeError(f"unsupported product {type(A).__name__} x {type(B).__name__}")


def add_dense(C_blk: Block, P: np.ndarray, C: int, tol: float):
    """C_blk += P for a dense update of matching size."""
    if isinstance(C_blk, Dense):
        C_blk.data += P
        return
    if isinstance(C_blk, LowRank):
        W, s, Zh = np.linalg.svd(P, full_matrices=False)
        if s.size == 0 or s[0] == 0.0:
            return
        r = max(1, int(np.sum(s > tol * s[0])))
        add_lowrank(C_blk, W[:, :r] * s[:r], Zh[:r], C, tol)
        return
    r0 = C_blk.rnode.lo * C
    c0 = C_blk.cnode.lo * C
    for a, rk in enumerate(C_blk.rows):
        for b, ck in enumerate(C_blk.cols):
            add_dense(C_blk.children[a][b],
                      P[rk.lo * C - r0: rk.hi * C - r0,
                        ck.lo * C - c0: ck.hi * C - c0], C, tol)


def _mult_to_lowrank(A: HBlock, B: HBlock, C: int, tol: float):
    m = (A.rnode.hi - A.rnode.lo) * C
    n = (B.cnode.hi - B.cnode.lo) * C
    Us, Vs = [], []
    r0 = A.rnode.lo * C
    c0 = B.cnode.lo * C
    for a, rk in enumerate(A.rows):
        for b, ck in enumerate(B.cols):
            tmp = LowRank(np.zeros(((rk.hi - rk.lo) * C, 0), dtype=complex),
                          np.zeros((0, (ck.hi - ck.lo) * C), dtype=complex))
            for k in range(len(A.cols)):
                mult_add(tmp, A.children[a][k], B.children[k][b], C, tol,
                         sign=1.0)
            if tmp.rank:
                Ubig = np.zeros((m, tmp.rank), dtype=complex)
                Ubig[rk.lo * C - r0: rk.hi * C - r0] = tmp.U
                Vbig = np.zeros((tmp.rank, n), dtype=complex)
                Vbig[:, ck.lo * C - c0: ck.hi * C - c0] = tmp.V
                Us.append(Ubig)
                Vs.append(Vbig)
    U = np.concatenate(Us, axis=1) if Us else np.zeros((m, 0), dtype=complex)
    V = np.concatenate(Vs, axis=0) if Vs else np.zeros((0, n), dtype=complex)
    return truncate_lowrank(U, V, tol)


# ---------------------------------------------------------------------------
# Triangular machinery (dense leaves carry their own pivots)
# ---------------------------------------------------------------------------

def _apply_piv(X: np.ndarray, piv: np.ndarray) -> np.ndarray:
    X = X.copy()
    for k in range(len(piv)):
        p = piv[k]
        if p != k:
            X[[k, p]] = X[[p, k]]
    return X


def lsolve_dense(L: Block, X: np.ndarray, C: int) -> np.ndarray:
    """X := L^{-1} X (L unit-lower with leaf pivots)."""
    if isinstance(L, DenseLU):
        return sla.solve_triangular(L.lu, _apply_piv(X, L.piv), lower=True,
                                    unit_diagonal=True)
    out = X.copy()
    r0 = L.rnode.lo * C
    s = len(L.rows)
    for k in range(s):
        rk = L.rows[k]
        ka, kb = rk.lo * C - r0, rk.hi * C - r0
        out[ka:kb] = lsolve_dense(L.children[k][k], out[ka:kb], C)
        for i in range(k + 1, s):
            ri = L.rows[i]
            ia, ib = ri.lo * C - r0, ri.hi * C - r0
            out[ia:ib] -= apply_right(L.children[i][k], out[ka:kb], C)
    return out


def usolve_dense(U: Block, X: np.ndarray, C: int) -> np.ndarray:
    """X := U^{-1} X."""
    if isinstance(U, DenseLU):
        return sla.solve_triangular(U.lu, X, lower=False)
    out = X.copy()
    r0 = U.rnode.lo * C
    s = len(U.rows)
    for k in range(s - 1, -1, -1):
        rk = U.rows[k]
        ka, kb = rk.lo * C - r0, rk.hi * C - r0
        for i in range(k + 1, s):
            ri = U.rows[i]
            ia, ib = ri.lo * C - r0, ri.hi * C - r0
            out[ka:kb] -= apply_right(U.children[k][i], out[ia:ib], C)
        out[ka:kb] = usolve_dense(U.children[k][k], out[ka:kb], C)
    return out


def rsolve_upper_dense(X: np.ndarray, U: Block, C: int) -> np.ndarray:
    """X := X U^{-1} for dense X."""
    if isinstance(U, DenseLU):
        return sla.solve_triangular(U.lu, X.T, lower=False, trans="T").T
    out = X.copy()
    c0 = U.cnode.lo * C
    s = len(U.cols)
    for k in range(s):
        ck = U.cols[k]
        ka, kb = ck.lo * C - c0, ck.hi * C - c0
        for l in range(k):
            cl = U.cols[l]
            la, lb = cl.lo * C - c0, cl.hi * C - c0
            out[:, ka:kb] -= apply_left(out[:, la:lb], U.children[l][k], C)
        out[:, ka:kb] = rsolve_upper_dense(out[:, ka:kb], U.children[k][k], C)
    return out


def lsolve_block(L: Block, B: Block, C: int, tol: float) -> Block:
    """B := L^{-1} B where B is a block of the same row cluster."""
    if isinstance(B, LowRank):
        B.U = lsolve_dense(L, B.U, C)
        return B
    if isinstance(B, Dense):
        B.data = lsolve_dense(L, B.data, C)
        return B
    # B subdivided
    if isinstance(L, DenseLU):
        # leaf row cluster: apply to each column strip
        for b in range(len(B.cols)):
            B.children[0][b] = lsolve_block(L, B.children[0][b], C, tol)
        return B
    s = len(L.rows)
    if len(B.rows) == 1:
        # L subdivides but B does not: fall back to dense application
        X = to_dense(B, C)
        return _overwrite_block(B, lsolve_dense(L, X, C), C, tol)
    for k in range(s):
        for b in range(len(B.cols)):
            B.children[k][b] = lsolve_block(L.children[k][k], B.children[k][b],
                                            C, tol)
        for i in range(k + 1, s):
            for b in range(len(B.cols)):
                mult_add(B.children[i][b], L.children[i][k], B.children[k][b],
                         C, tol, sign=-1.0)
    return B


def rsolve_block(B: Block, U: Block, C: int, tol: float) -> Block:
    """B := B U^{-1} where B shares U's column cluster."""
    if isinstance(B, LowRank):
        B.V = rsolve_upper_dense(B.V, U, C)
        return B
    if isinstance(B, Dense):
        B.data = rsolve_upper_dense(B.data, U, C)
        return B
    if isinstance(U, DenseLU):
        for a in range(len(B.rows)):
            B.children[a][0] = rsolve_block(B.children[a][0], U, C, tol)
        return B
    s = len(U.cols)
    if len(B.cols) == 1:
        X = to_dense(B, C)
        return _overwrite_block(B, rsolve_upper_dense(X, U, C), C, tol)
    for k in range(s):
        for l in range(k):
            for a in range(len(B.rows)):
                mult_add(B.children[a][k], B.children[a][l], U.children[l][k],
                         C, tol, sign=-1.0)
        for a in range(len(B.rows)):
            B.children[a][k] = rsolve_block(B.children[a][k], U.children[k][k],
                                            C, tol)
    return B


def _overwrite_block(B: Block, X: np.ndarray, C: int, tol: float) -> Block:
    """Replace a block's contents with the dense matrix X, kind-preserving."""
    if isinstance(B, Dense):
        B.data = X
        return B
    if isinstance(B, LowRank):
        W, s, Zh = np.linalg.svd(X, full_matrices=False)
        if s.size == 0 or s[0] == 0.0:
            B.U = np.zeros((X.shape[0], 0), dtype=complex)
            B.V = np.zeros((0, X.shape[1]), dtype=complex)
            return B
        r = max(1, int(np.sum(s > tol * s[0])))
        B.U, B.V = W[:, :r] * s[:r], Zh[:r]
        return B
    r0 = B.rnode.lo * C
    c0 = B.cnode.lo * C
    for a, rk in enumerate(B.rows):
        for b, ck in enumerate(B.cols):
            _overwrite_block(B.children[a][b],
                             X[rk.lo * C - r0: rk.hi * C - r0,
                               ck.lo * C - c0: ck.hi * C - c0], C, tol)
    return B


# ---------------------------------------------------------------------------
# H-LU factorization and solves
# ---------------------------------------------------------------------------

class HLUFactors:
    """Combined LU storage sharing the input's block structure."""

    def __init__(self, root: Block, tree: ClusterTree, tol: float):
        self.root = root
        self.tree = tree
        self.C = tree.C
        self.tol = tol

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=complex)
        single = b.ndim == 1
        B = b.reshape(-1, 1) if single else b.copy()
        Bp = B[self.tree.dof_perm]
        Y = lsolve_dense(self.root, Bp, self.C)
        X = usolve_dense(self.root, Y, self.C)
        out = np.empty_like(X)
        out[self.tree.dof_perm] = X
        return out[:, 0] if single else out

    def stored_scalars(self) -> int:
        out = []
        _walk(self.root, out)
        return sum(leaf.scalars() for leaf in out)

    def memory_bytes(self) -> int:
        return self.stored_scalars() * 16


def hlu_factor(H: HMatrix, tol: float) -> HLUFactors:
    """Recursive block LU with formatted arithmetic (copy; H unchanged)."""
    root = copy.deepcopy(H.root)
    _factor(root, H.C, tol)
    return HLUFactors(root, H.tree, tol)


def _factor(block: Block, C: int, tol: float) -> Block:
    if isinstance(block, Dense):
        A = block.data
        lu, piv = sla.lu_factor(A, check_finite=False)
        anorm = np.linalg.norm(A, 1)
        gecon = _lapack.zgecon
        rcond, _ = gecon(lu, anorm)
        if rcond < 1e-14:
            raise SingularDiagonal(f"diagonal block rcond {rcond:.2e}")
        return DenseLU(lu, piv)
    if not isinstance(block, HBlock):
        raise TypeError("diagonal block must be dense or subdivided")
    s = len(block.rows)
    for k in range(s):
        block.children[k][k] = _factor(block.children[k][k], C, tol)
        Akk = block.children[k][k]
        for i in range(k + 1, s):
            block.children[i][k] = rsolve_block(block.children[i][k], Akk, C, tol)
        for j in range(k + 1, s):
            block.children[k][j] = lsolve_block(Akk, block.children[k][j], C, tol)
        for i in range(k + 1, s):
            for j in range(k + 1, s):
                mult_add(block.children[i][j], block.children[i][k],
                         block.children[k][j], C, tol, sign=-1.0)
    return block


def hlu_solve(factors: HLUFactors, b: np.ndarray) -> np.ndarray:
    return factors.solve(b)
