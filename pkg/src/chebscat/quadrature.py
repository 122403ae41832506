"""Far/near/self interaction handling and singular quadrature.

Far interactions integrate on the patch's own tensor Fejer grid. Near
and self interactions re-integrate with a rule built around the closest
parametric point: the parameter square splits into up to four
rectangles there, each mapped so the singular corner sits at the
origin and graded with a monomial substitution s -> s^p per direction,
which cancels the weak 1/R singularity of the kernels.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import chebyshev as cheb
from . import geometry as geo
from .geometry import Patch
from .kernels import FormulationSpec, integrand_blocks

FAR, NEAR, SELF = "far", "near", "self"

DEFAULT_NEAR_FACTOR = 1.0   # near if dist < tau * patch diameter
DEFAULT_GRADING = 3
_FAR_SCREEN_MARGIN = 1.25   # bbox prescreen slack (samples underestimate extent)


@dataclass(frozen=True)
class InteractionClass:
    tag: str
    uv: Optional[tuple[float, float]] = None
    distance: float = np.inf
    node_index: Optional[int] = None
    newton_ok: bool = True


@dataclass(frozen=True)
class SingularRule:
    """Graded tensor rule around (u*, v*); weights include all Jacobians."""

    uv_star: tuple[float, float]
    order: int
    grading: int
    nodes: np.ndarray    # (n, 2) in the patch parameter square
    weights: np.ndarray  # (n,)


_RULE_CACHE: dict[tuple, SingularRule] = {}
_RULE_LOCK = threading.Lock()


def default_oversample(orders: tuple[int, int]) -> int:
    return max(2 * max(orders), 16)


def classify(obs: np.ndarray, patch: Patch, on_patch_node: Optional[int] = None,
             tau: float = DEFAULT_NEAR_FACTOR) -> InteractionClass:
    """Tag an observation point against a source patch.

    SELF requires the caller to say which grid node the point is; the
    nearest parametric point is otherwise found by a damped Newton
    minimization of the squared distance, seeded at the closest node.
    """
    if on_patch_node is not None:
        uvs = patch.node_uv()
        return InteractionClass(SELF, (uvs[0][on_patch_node], uvs[1][on_patch_node]),
                                0.0, on_patch_node)
    obs = np.asarray(obs, dtype=float)
    diameter = patch.diameter
    box = geo.bounding_box(patch.samples.reshape(-1, 3))
    if geo.point_box_dist(obs, box) >= tau * diameter * _FAR_SCREEN_MARGIN:
        return InteractionClass(FAR)
    uv, dist_val, ok = _closest_point(obs, patch)
    if dist_val < tau * diameter:
        return InteractionClass(NEAR, uv, dist_val, None, ok)
    return InteractionClass(FAR, uv, dist_val, None, ok)


def _closest_point(obs: np.ndarray, patch: Patch):
    uv, dist_val, ok = closest_points(np.asarray(obs, dtype=float)[None, :], patch)
    return (float(uv[0, 0]), float(uv[0, 1])), float(dist_val[0]), bool(ok[0])


def closest_points(obs: np.ndarray, patch: Patch):
    """Lockstep damped Newton for many observation points at once.

    Returns (uv (m,2) projected into the parameter square, distances
    (m,), converged flags (m,)). Non-converged points fall back to
    their seed grid node.
    """
    obs = np.atleast_2d(obs)
    m = obs.shape[0]
    nodes = patch.node_frames().position
    d2 = np.einsum("mx,mx->m", obs, obs)[:, None] \
        - 2.0 * obs @ nodes.T + np.einsum("nx,nx->n", nodes, nodes)[None, :]
    seed = np.argmin(d2, axis=1)
    u_all, v_all = patch.node_uv()
    uv_seed = np.stack([u_all[seed], v_all[seed]], axis=1)
    uv = uv_seed.copy()
    active = np.ones(m, dtype=bool)
    ok = np.zeros(m, dtype=bool)
    for _ in range(30):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        fb = geo.eval_frames(patch, uv[idx, 0], uv[idx, 1])
        ruu, ruv, rvv = geo.second_derivatives(patch, uv[idx, 0], uv[idx, 1])
        d = fb.position - obs[idx]
        g0 = 2.0 * np.einsum("mx,mx->m", fb.a_u, d)
        g1 = 2.0 * np.einsum("mx,mx->m", fb.a_v, d)
        auu = np.einsum("mx,mx->m", fb.a_u, fb.a_u)
        auv = np.einsum("mx,mx->m", fb.a_u, fb.a_v)
        avv = np.einsum("mx,mx->m", fb.a_v, fb.a_v)
        h00 = 2.0 * (auu + np.einsum("mx,mx->m", ruu, d))
        h01 = 2.0 * (auv + np.einsum("mx,mx->m", ruv, d))
        h11 = 2.0 * (avv + np.einsum("mx,mx->m", rvv, d))
        det = h00 * h11 - h01 * h01
        bad = (det <= 1e-30) | (h00 <= 0)
        # Gauss-Newton fallback where the Hessian is not positive definite
        h00 = np.where(bad, 2.0 * auu, h00)
        h01 = np.where(bad, 2.0 * auv, h01)
        h11 = np.where(bad, 2.0 * avv, h11)
        det = np.where(bad, h00 * h11 - h01 * h01, det)
        step_u = -(h11 * g0 - h01 * g1) / det
        step_v = -(-h01 * g0 + h00 * g1) / det
        uv_new = np.clip(uv[idx] + np.stack([step_u, step_v], axis=1),
                         -1.05, 1.05)
        moved = np.abs(uv_new - uv[idx]).max(axis=1)
        uv[idx] = uv_new
        done = moved < 1e-12
        ok[idx[done]] = True
        active[idx[done]] = False
    uv = np.where(ok[:, None], uv, uv_seed)
    uv_proj = np.clip(uv, -1.0, 1.0)
    fb = geo.eval_frames(patch, uv_proj[:, 0], uv_proj[:, 1])
    dist_val = np.linalg.norm(fb.position - obs, axis=1)
    return uv_proj, dist_val, ok


def build_singular_rule(u_star: float, v_star: float, order: int,
                        grading: int = DEFAULT_GRADING) -> SingularRule:
    """Corner-split graded tensor rule; cached by quantized arguments."""
    if order < 4:
        raise ValueError("singular rule order must be >= 4")
    if grading < 2:
        raise ValueError("grading power must be >= 2")
    key = (round(u_star, 12), round(v_star, 12), order, grading)
    rule = _RULE_CACHE.get(key)
    if rule is not None:
        return rule
    base = cheb.fejer1(order)
    sigma = 0.5 * (base.nodes + 1.0)          # map to (0, 1)
    wsig = 0.5 * base.weights
    s = sigma ** grading
    ws = wsig * grading * sigma ** (grading - 1)
    nodes_list, weights_list = [], []
    for (lo, hi) in ((-1.0, u_star), (u_star, 1.0)):
        wu_len = hi - lo
        if abs(wu_len) < 1e-12:
            continue
        # singular corner at u_star: walk away from it toward the far edge
        far_u = lo if lo != u_star else hi
        un = u_star + s * (far_u - u_star)
        wun = ws * abs(far_u - u_star)
        for (vlo, vhi) in ((-1.0, v_star), (v_star, 1.0)):
            wv_len = vhi - vlo
            if abs(wv_len) < 1e-12:
                continue
            far_v = vlo if vlo != v_star else vhi
            vn = v_star + s * (far_v - v_star)
            wvn = ws * abs(far_v - v_star)
            U, V = np.meshgrid(un, vn, indexing="ij")
            W = np.outer(wun, wvn)
            nodes_list.append(np.stack([U.ravel(), V.ravel()], axis=1))
            weights_list.append(W.ravel())
    rule = SingularRule((u_star, v_star), order, grading,
                        np.concatenate(nodes_list), np.concatenate(weights_list))
    with _RULE_LOCK:
        _RULE_CACHE.setdefault(key, rule)
    return _RULE_CACHE[key]


def _density_tables(densities, rule_nodes=None):
    """Density values and parametric derivatives at quadrature points.

    densities: list of ChebGrid2D, one per unknown component. With
    rule_nodes None the patch grid itself is the quadrature, so values
    are the samples and derivatives come from the node differentiation
    matrices; otherwise the Chebyshev expansions are evaluated at the
    supplied points (exact for the represented polynomial, which is
    what the spec's oversampled resampling achieves).
    """
    vals, dus, dvs = [], [], []
    for dgrid in densities:
        nu, nv = dgrid.orders
        if rule_nodes is None:
            v2d = dgrid.values
            du2d = cheb.diff_node_matrix(nu) @ v2d
            dv2d = v2d @ cheb.diff_node_matrix(nv).T
            # flat node order k*nu + l
            vals.append(v2d.T.ravel())
            dus.append(du2d.T.ravel())
            dvs.append(dv2d.T.ravel())
        else:
            c = cheb.to_coeffs(dgrid)
            u, v = rule_nodes[:, 0], rule_nodes[:, 1]
            vals.append(cheb.eval2d(c, u, v))
            dus.append(cheb.eval2d(cheb.deriv_coeffs(c, 0), u, v))
            dvs.append(cheb.eval2d(cheb.deriv_coeffs(c, 1), u, v))
    return vals, dus, dvs


def integrate_patch(obs_frame, patch: Patch, densities, spec: FormulationSpec,
                    iclass: InteractionClass,
                    oversample: Optional[int] = None,
                    grading: int = DEFAULT_GRADING) -> np.ndarray:
    """Tested operator contributions of one source patch, shape (C,).

    obs_frame needs .position, .a_u, .a_v. Identity/jump terms are not
    included (the assembly adds them for SELF pairs).
    """
    C = spec.n_components
    if iclass.tag == FAR:
        fb = patch.node_frames()
        w = patch.node_weights()
        rule_nodes = None
    else:
        n_s = oversample if oversample is not None else default_oversample(patch.orders)
        rule = build_singular_rule(iclass.uv[0], iclass.uv[1], n_s, grading)
        fb = geo.eval_frames(patch, rule.nodes[:, 0], rule.nodes[:, 1])
        w = rule.weights
        rule_nodes = rule.nodes
        dist2 = np.einsum("ij,ij->i", fb.position - obs_frame.position,
                          fb.position - obs_frame.position)
        keep = dist2 > (1e-14) ** 2
        if not np.all(keep):
            fb = geo.FrameBatch(fb.position[keep], fb.a_u[keep], fb.a_v[keep],
                                fb.normal[keep], fb.sqrt_g[keep])
            w = w[keep]
            rule_nodes = rule_nodes[keep]
    B_val, B_div = integrand_blocks(spec, obs_frame.position, obs_frame.a_u,
                                    obs_frame.a_v, fb)
    vals, dus, dvs = _density_tables(densities, rule_nodes)
    wg = w * fb.sqrt_g
    out = np.zeros(C, dtype=complex)
    for c in range(C):
        out += (wg * vals[c]) @ B_val[:, :, c]
        if B_div is not None:
            dval = dus[c] if c % 2 == 0 else dvs[c]
            out += (wg * dval) @ B_div[:, :, c]
    return out
