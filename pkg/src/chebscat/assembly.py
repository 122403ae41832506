"""Global unknown ordering and on-demand matrix entry generation.

Unknowns are the nodal values of the scaled contravariant density
components; the C components of one quadrature point occupy consecutive
global indices (point-major, components interleaved). The entry
generator produces any single entry, row/column segments, or whole
sub-blocks. Single entries, rows and the dense reference assembly all
go through one fixed-shape code path per (observation point, source
patch), so repeated evaluations are bit-identical; multi-observation
vectorized paths serve the H-matrix fill, where only norm-level
agreement matters.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import chebyshev as cheb
from . import geometry as geo
from . import quadrature as quad
from .errors import CapExceeded
from .geometry import FrameBatch, Patch
from .kernels import (MFIE_PEC, Excitation, FormulationSpec, integrand_blocks,
                      mfie_tested_fields, muller_tested_fields, rhs_rows)

DENSE_CAP_DEFAULT = 20_000


@dataclass(frozen=True)
class DofRecord:
    patch: int
    node: int
    component: int


class DofMap:
    """Bijection between global dofs and (patch, node, component)."""

    def __init__(self, patches: list[Patch], spec: FormulationSpec):
        self.patches = patches
        self.n_components = spec.n_components
        counts = np.array([p.n_nodes for p in patches])
        self.point_offset = np.concatenate([[0], np.cumsum(counts)])
        self.n_points = int(self.point_offset[-1])
        self.n_dofs = self.n_points * self.n_components
        self.patch_of_point = np.repeat(np.arange(len(patches)), counts)
        self.node_of_point = np.concatenate([np.arange(c) for c in counts]) \
            if len(patches) else np.empty(0, dtype=int)

    def record(self, dof: int) -> DofRecord:
        point, comp = divmod(dof, self.n_components)
        return DofRecord(int(self.patch_of_point[point]),
                         int(self.node_of_point[point]), comp)

    def point_positions(self) -> np.ndarray:
        return np.concatenate([p.node_frames().position for p in self.patches])


def dof_count(patches: list[Patch], spec: FormulationSpec) -> int:
    return sum(p.n_nodes for p in patches) * spec.n_components


class EntryGenerator:
    """Deterministic on-demand generator of system-matrix entries."""

    def __init__(self, patches: list[Patch], spec: FormulationSpec,
                 tau: float = quad.DEFAULT_NEAR_FACTOR,
                 oversample: int | None = None,
                 grading: int = quad.DEFAULT_GRADING,
                 pair_cache_mb: int = 512):
        self.patches = patches
        self.spec = spec
        self.tau = tau
        self.grading = grading
        self.dofmap = DofMap(patches, spec)
        self.jump = spec.jump_matrix()
        self._class_cache: dict[tuple[int, int], quad.InteractionClass] = {}
        self._pos = self.dofmap.point_positions()
        self._wg = [p.node_weights() * p.node_frames().sqrt_g for p in patches]
        self._d1u = [cheb.diff_node_matrix(p.orders[0]) for p in patches]
        self._d1v = [cheb.diff_node_matrix(p.orders[1]) for p in patches]
        self._oversample = {
            p.id: (oversample if oversample is not None
                   else quad.default_oversample(p.orders))
            for p in patches}
        self.newton_fallbacks = 0
        self._pair_cache: OrderedDict[tuple[int, int], np.ndarray] = OrderedDict()
        self._pair_cache_bytes = 0
        self._pair_cache_budget = pair_cache_mb * 2**20
        self._cache_lock = threading.Lock()

    # -- classification ----------------------------------------------------
    def iclass(self, point_id: int, pid: int) -> quad.InteractionClass:
        key = (point_id, pid)
        out = self._class_cache.get(key)
        if out is None:
            self._classify_patch_column(pid)
            out = self._class_cache[key]
        return out

    def _classify_patch_column(self, pid: int):
        """Classify every observation point against one patch at once.

        The bounding-box prescreen tags most points FAR immediately;
        the rest run one vectorized closest-point Newton. SELF tags
        come from the dof map, never from geometry.
        """
        patch = self.patches[pid]
        diameter = patch.diameter
        box = geo.bounding_box(patch.samples.reshape(-1, 3))
        own = self.dofmap.patch_of_point == pid
        gap = np.maximum(0.0, np.maximum(box.lo - self._pos, self._pos - box.hi))
        far_screen = np.linalg.norm(gap, axis=1) >= \
            self.tau * diameter * quad._FAR_SCREEN_MARGIN
        need = np.flatnonzero(~far_screen & ~own)
        uv = dists = ok = None
        if need.size:
            uv, dists, ok = quad.closest_points(self._pos[need], patch)
            self.newton_fallbacks += int(np.sum(~ok))
        u_all, v_all = patch.node_uv()
        cache = self._class_cache
        pos_in_need = {int(p): a for a, p in enumerate(need)}
        for pt in range(self.dofmap.n_points):
            key = (pt, pid)
            if key in cache:
                continue
            if own[pt]:
                node = int(self.dofmap.node_of_point[pt])
                cache[key] = quad.InteractionClass(
                    quad.SELF, (u_all[node], v_all[node]), 0.0, node)
            elif pt in pos_in_need:
                a = pos_in_need[pt]
                tag = quad.NEAR if dists[a] < self.tau * diameter else quad.FAR
                cache[key] = quad.InteractionClass(
                    tag, (float(uv[a, 0]), float(uv[a, 1])), float(dists[a]),
                    None, bool(ok[a]))
            else:
                cache[key] = quad.InteractionClass(quad.FAR)

    # -- canonical fixed-shape unit ----------------------------------------
    def pair_block(self, point_id: int, pid: int) -> np.ndarray:
        """All couplings of one observation point to one source patch.

        Returns (C, n_nodes * C); column j*C + c is the coupling to the
        density component c anchored at patch node j. Includes the jump
        term when the point lies on the patch. Results are LRU-cached
        (read-only by convention) since the ACA revisits pairs often.
        """
        key = (point_id, pid)
        with self._cache_lock:
            hit = self._pair_cache.get(key)
            if hit is not None:
                self._pair_cache.move_to_end(key)
                return hit
        out = self._pair_block_compute(point_id, pid)
        with self._cache_lock:
            if key not in self._pair_cache:
                self._pair_cache[key] = out
                self._pair_cache_bytes += out.nbytes
                while self._pair_cache_bytes > self._pair_cache_budget:
                    _, old = self._pair_cache.popitem(last=False)
                    self._pair_cache_bytes -= old.nbytes
        return out

    def _pair_block_compute(self, point_id: int, pid: int) -> np.ndarray:
        spec = self.spec
        C = spec.n_components
        patch = self.patches[pid]
        nu, nv = patch.orders
        n_p = patch.n_nodes
        obs_fb = self.patches[self.dofmap.patch_of_point[point_id]].node_frames()
        n0 = int(self.dofmap.node_of_point[point_id])
        obs_pos = obs_fb.position[n0]
        obs_au, obs_av = obs_fb.a_u[n0], obs_fb.a_v[n0]
        ic = self.iclass(point_id, pid)

        if ic.tag == quad.FAR:
            fb = patch.node_frames()
            B_val, B_div = integrand_blocks(spec, obs_pos, obs_au, obs_av, fb)
            wg = self._wg[pid]
            out = np.ascontiguousarray(
                np.einsum("j,jbc->bjc", wg, B_val))
            if B_div is not None:
                Md = (wg[:, None, None] * B_div).transpose(1, 0, 2)  # (C, s, C)
                out += self._apply_div_far(pid, Md, nu, nv)
        else:
            n_s = self._oversample[pid]
            rule = quad.build_singular_rule(ic.uv[0], ic.uv[1], n_s, self.grading)
            nodes, w = rule.nodes, rule.weights
            fb = geo.eval_frames(patch, nodes[:, 0], nodes[:, 1])
            d2 = np.einsum("ij,ij->i", fb.position - obs_pos, fb.position - obs_pos)
            keep = d2 > 1e-28
            if not np.all(keep):
                fb = FrameBatch(fb.position[keep], fb.a_u[keep], fb.a_v[keep],
                                fb.normal[keep], fb.sqrt_g[keep])
                nodes, w = nodes[keep], w[keep]
            P, dPu, dPv = cheb.cardinal_eval(patch.orders, nodes[:, 0], nodes[:, 1])
            wg = w * fb.sqrt_g
            if C == 2:
                B_val = mfie_tested_fields(spec, obs_pos, obs_au, obs_av, fb)
                out = _contract_rule_mfie(wg, B_val, P)
            else:
                T6, T_dG = muller_tested_fields(spec, obs_pos, obs_au,
                                                obs_av, fb)
                out = _contract_rule_muller(wg, T6, T_dG, P, dPu, dPv)
        if int(self.dofmap.patch_of_point[point_id]) == pid:
            out[:, n0, :] += self.jump
        return out.reshape(C, n_p * C)

    def _apply_div_far(self, pid, Md, nu, nv):
        """Far-quadrature divergence columns via the node diff matrices."""
        C = self.spec.n_components
        M4 = Md.reshape(C, nv, nu, C)
        out = np.zeros_like(M4)
        d1u, d1v = self._d1u[pid], self._d1v[pid]
        for c in range(C):
            if c % 2 == 0:
                out[:, :, :, c] = np.einsum("bkl,lm->bkm", M4[:, :, :, c], d1u)
            else:
                out[:, :, :, c] = np.einsum("bkl,kn->bnl", M4[:, :, :, c], d1v)
        return out.reshape(C, nv * nu, C)

    # -- public canonical API ----------------------------------------------
    def entry(self, i: int, j: int) -> complex:
        C = self.spec.n_components
        pi, bi = divmod(i, C)
        pj, cj = divmod(j, C)
        pid = int(self.dofmap.patch_of_point[pj])
        node = int(self.dofmap.node_of_point[pj])
        block = self.pair_block(pi, pid)
        return complex(block[bi, node * C + cj])

    def row_segment(self, i: int, cols: np.ndarray) -> np.ndarray:
        C = self.spec.n_components
        pi, bi = divmod(i, C)
        cols = np.asarray(cols)
        out = np.empty(cols.size, dtype=complex)
        pts = cols // C
        pids = self.dofmap.patch_of_point[pts]
        for pid in np.unique(pids):
            sel = np.nonzero(pids == pid)[0]
            block = self.pair_block(pi, int(pid))
            local = (self.dofmap.node_of_point[pts[sel]] * C + cols[sel] % C)
            out[sel] = block[bi, local]
        return out

    # -- vectorized fast paths (H-matrix fill) ------------------------------
    def block(self, rows: np.ndarray, cols: np.ndarray, fast: bool = True) -> np.ndarray:
        """Sub-block as (len(rows), len(cols)); fast path vectorizes."""
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        C = self.spec.n_components
        out = np.empty((rows.size, cols.size), dtype=complex)
        row_pts = rows // C
        upts, inv = np.unique(row_pts, return_inverse=True)
        col_pts = cols // C
        col_pids = self.dofmap.patch_of_point[col_pts]
        for pid in np.unique(col_pids):
            csel = np.nonzero(col_pids == pid)[0]
            local = self.dofmap.node_of_point[col_pts[csel]] * C + cols[csel] % C
            blocks = self._point_blocks(upts, int(pid), fast=fast)
            out[:, csel] = blocks[inv][np.arange(rows.size), rows % C][:, local]
        return out

    def col_segment(self, rows: np.ndarray, j: int) -> np.ndarray:
        return self.block(rows, np.array([j]))[:, 0]

    def _point_blocks(self, point_ids: np.ndarray, pid: int, fast: bool) -> np.ndarray:
        """Stack of pair_block results for many observation points."""
        C = self.spec.n_components
        patch = self.patches[pid]
        n_p = patch.n_nodes
        out = np.empty((point_ids.size, C, n_p * C), dtype=complex)
        if not fast:
            for a, pt in enumerate(point_ids):
                out[a] = self.pair_block(int(pt), pid)
            return out
        near_list = []
        far_list = []
        for a, pt in enumerate(point_ids):
            ic = self.iclass(int(pt), pid)
            (far_list if ic.tag == quad.FAR else near_list).append(a)
        for a in near_list:
            out[a] = self.pair_block(int(point_ids[a]), pid)
        if far_list:
            idx = np.asarray(far_list)
            pts = point_ids[idx]
            obs_pos = self._pos[pts]
            obs_au = np.empty((idx.size, 3))
            obs_av = np.empty((idx.size, 3))
            for a, pt in enumerate(pts):
                own = int(self.dofmap.patch_of_point[pt])
                fbo = self.patches[own].node_frames()
                n0 = int(self.dofmap.node_of_point[pt])
                obs_au[a] = fbo.a_u[n0]
                obs_av[a] = fbo.a_v[n0]
            out[idx] = self._far_blocks_multi(obs_pos, obs_au, obs_av, pid)
        return out

    def _far_blocks_multi(self, obs_pos, obs_au, obs_av, pid) -> np.ndarray:
        """Vectorized far-quadrature blocks for many observation points."""
        spec = self.spec
        C = spec.n_components
        patch = self.patches[pid]
        nu, nv = patch.orders
        fb = patch.node_frames()
        wg = self._wg[pid]
        m = obs_pos.shape[0]
        out = np.empty((m, C, patch.n_nodes, C), dtype=complex)
        chunk = max(1, int(2e6 / (patch.n_nodes * C * C)))
        for s0 in range(0, m, chunk):
            sl = slice(s0, min(m, s0 + chunk))
            B_val, B_div = _blocks_pairwise(spec, obs_pos[sl], obs_au[sl],
                                            obs_av[sl], fb)
            piece = np.einsum("j,ajbc->abjc", wg, B_val)
            if B_div is not None:
                Md = (wg[None, :, None, None] * B_div).transpose(0, 2, 1, 3)
                M4 = Md.reshape(Md.shape[0], C, nv, nu, C)
                add = np.zeros_like(M4)
                for c in range(C):
                    if c % 2 == 0:
                        add[..., c] = np.einsum("abkl,lm->abkm", M4[..., c],
                                                self._d1u[pid])
                    else:
                        add[..., c] = np.einsum("abkl,kn->abnl", M4[..., c],
                                                self._d1v[pid])
                piece += add.reshape(piece.shape)
            out[sl] = piece
        return out.reshape(m, C, patch.n_nodes * C)


def _contract_rule_mfie(wg, B_val, P) -> np.ndarray:
    """Rule-node contraction onto cardinal columns: (2, n_p, 2)."""
    n_s = B_val.shape[0]
    n_p = P.shape[1]
    Y = (wg[:, None, None] * B_val).reshape(n_s, 4)
    tmp = _gemm_real_right(Y.T, P)                      # (b*c, n_p)
    # Y layout (s, b, c) -> rows b*2+c of tmp
    return tmp.reshape(2, 2, n_p).transpose(0, 2, 1).copy()


def _contract_rule_muller(wg, T6, T_dG, P, dPu, dPv) -> np.ndarray:
    """Compact-field contraction for the 4-component system.

    One (14, n_s) x (n_s, n_p) product covers the six value generators
    (both tested rows each) plus the divergence kernel against both
    derivative tables; the 4 x (n_p*4) block is then pure scatter.
    """
    n_s = T6.shape[0]
    n_p = P.shape[1]
    stack12 = (T6 * wg[:, None, None]).reshape(n_s, 12)
    Wsum = _gemm_real_right(stack12.T, P).reshape(6, 2, n_p)
    d = (T_dG * wg[:, None]).T                          # (2, n_s)
    Wu = _gemm_real_right(d, dPu)                       # (2, n_p)
    Wv = _gemm_real_right(d, dPv)
    out = np.empty((4, n_p, 4), dtype=complex)
    out[0:2, :, 0] = Wsum[0] + Wu
    out[0:2, :, 1] = Wsum[1] + Wv
    out[0:2, :, 2] = Wsum[2]
    out[0:2, :, 3] = Wsum[3]
    out[2:4, :, 0] = Wsum[4]
    out[2:4, :, 1] = Wsum[5]
    out[2:4, :, 2] = Wsum[0] + Wu
    out[2:4, :, 3] = Wsum[1] + Wv
    return out


def _gemm_real_right(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """A (complex) @ B (real) without promoting B."""
    return A.real @ B + 1j * (A.imag @ B)


def _blocks_pairwise(spec: FormulationSpec, obs_pos, obs_au, obs_av, src: FrameBatch):
    """integrand_blocks for many observation points at once: (m, n, C, C)."""
    m = obs_pos.shape[0]
    rel = obs_pos[:, None, :] - src.position[None, :, :]
    R = np.linalg.norm(rel, axis=-1)
    tmat = np.stack([-obs_av, obs_au], axis=1)          # (m, 2, 3)
    inv_sg = 1.0 / src.sqrt_g
    if spec.kind == MFIE_PEC:
        k1 = spec.outer.k
        f = -(1 + 1j * k1 * R) * np.exp(-1j * k1 * R) / (4 * np.pi * R**3)
        g1 = f[..., None] * rel
        B = np.empty((m, len(src), 2, 2), dtype=complex)
        B[..., 0] = np.einsum("anx,abx->anb", -np.cross(g1, src.a_u[None]), tmat)
        B[..., 1] = np.einsum("anx,abx->anb", -np.cross(g1, src.a_v[None]), tmat)
        return B * inv_sg[None, :, None, None], None
    med1, med2 = spec.outer, spec.inner
    k1, k2 = med1.k, med2.k
    omega = med1.omega
    G2 = np.exp(-1j * k2 * R) / (4 * np.pi * R)
    s = 0.5 * (k1 + k2)
    d = 0.5 * (k1 - k2)
    Gd = np.exp(-1j * s * R) * (-2j) * np.sin(d * R) / (4 * np.pi * R)
    f2 = -(1 + 1j * k2 * R) * np.exp(-1j * k2 * R) / (4 * np.pi * R**3)
    g2 = f2[..., None] * rel
    from .kernels import _sin_minus_xcos
    dR = d * R
    fd = 2.0 * np.exp(-1j * s * R) * (1j * _sin_minus_xcos(dR)
                                      - R * s * np.sin(dR)) / (4 * np.pi * R**3)
    gd = fd[..., None] * rel
    em1, em2 = med1.eps * med1.mu, med2.eps * med2.mu
    sJ = 1j * omega * (em1 * Gd + (em1 - em2) * G2)
    cM = med1.eps * gd + (med1.eps - med2.eps) * g2
    cJ = -(med1.mu * gd + (med1.mu - med2.mu) * g2)
    dG = gd / (-1j * omega)
    t_au = np.einsum("nx,abx->anb", src.a_u, tmat)
    t_av = np.einsum("nx,abx->anb", src.a_v, tmat)
    B = np.empty((m, len(src), 4, 4), dtype=complex)
    Bd = np.zeros_like(B)
    B[..., 0:2, 0] = sJ[..., None] * t_au
    B[..., 0:2, 1] = sJ[..., None] * t_av
    B[..., 0:2, 2] = np.einsum("anx,abx->anb", np.cross(cM, src.a_u[None]), tmat)
    B[..., 0:2, 3] = np.einsum("anx,abx->anb", np.cross(cM, src.a_v[None]), tmat)
    B[..., 2:4, 0] = np.einsum("anx,abx->anb", np.cross(cJ, src.a_u[None]), tmat)
    B[..., 2:4, 1] = np.einsum("anx,abx->anb", np.cross(cJ, src.a_v[None]), tmat)
    B[..., 2:4, 2] = B[..., 0:2, 0]
    B[..., 2:4, 3] = B[..., 0:2, 1]
    t_dG = np.einsum("anx,abx->anb", dG, tmat)
    Bd[..., 0:2, 0] = t_dG
    Bd[..., 0:2, 1] = t_dG
    Bd[..., 2:4, 2] = t_dG
    Bd[..., 2:4, 3] = t_dG
    B *= inv_sg[None, :, None, None]
    Bd *= inv_sg[None, :, None, None]
    return B, Bd


# ---------------------------------------------------------------------------
# Dense reference assembly and right-hand side
# ---------------------------------------------------------------------------

def assemble_dense(gen: EntryGenerator, cap: int = DENSE_CAP_DEFAULT,
                   workers: int = 1) -> np.ndarray:
    """Full matrix via the canonical per-point path (bit-matches entry)."""
    N = gen.dofmap.n_dofs
    if N > cap:
        raise CapExceeded(f"N={N} exceeds dense cap {cap}")
    C = gen.spec.n_components
    A = np.empty((N, N), dtype=complex)

    def fill_point(pt: int):
        base = pt * C
        for pid in range(len(gen.patches)):
            block = gen.pair_block(pt, pid)
            lo = int(gen.dofmap.point_offset[pid]) * C
            A[base:base + C, lo:lo + block.shape[1]] = block

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(fill_point, range(gen.dofmap.n_points)))
    else:
        for pt in range(gen.dofmap.n_points):
            fill_point(pt)
    return A


def rhs(patches: list[Patch], spec: FormulationSpec, exc: Excitation) -> np.ndarray:
    """Tested incident-field vector in global dof order."""
    rows = [rhs_rows(spec, exc, p.node_frames()) for p in patches]
    return np.concatenate([r.reshape(-1) for r in rows])
