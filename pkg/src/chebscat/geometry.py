"""Curvilinear quadrilateral patches and their differential frames.

Each patch maps (u, v) in [-1,1]^2 to 3-D space. Geometry is stored as
position samples on the tensor Fejer-1 grid and interpolated with the
Chebyshev expansion; patches produced by an analytic chart (cube-to-
sphere faces) evaluate the chart instead, so frames are exact there.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import chebyshev as cheb
from .errors import DegeneratePatch, DimensionError, EmptyInput, ParseError


@dataclass(frozen=True)
class Frame:
    """Differential geometry at one surface point.

    covariant a_u = dr/du, a_v = dr/dv; normal n = a_u x a_v normalized;
    sqrt_g = |a_u x a_v|; contravariant a^u, a^v satisfy a^a . a_b = delta.
    """

    position: np.ndarray
    a_u: np.ndarray
    a_v: np.ndarray
    normal: np.ndarray
    sqrt_g: float
    a_up: np.ndarray
    a_vp: np.ndarray


class Chart:
    """Analytic patch map: position and first derivatives."""

    def positions(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def derivatives(self, u: np.ndarray, v: np.ndarray):
        raise NotImplementedError


class CubeSphereFace(Chart):
    """One face of the refined cube projected onto a sphere.

    The face square [lo,hi]^2 in cube coordinates is mapped through
    x -> radius * x / |x|, which keeps every sample exactly on the
    sphere and gives closed-form derivatives.
    """

    # axes[face] = (fixed axis, sign, u axis, v axis)
    _FACES = (
        (0, +1, 1, 2), (0, -1, 2, 1),
        (1, +1, 2, 0), (1, -1, 0, 2),
        (2, +1, 0, 1), (2, -1, 1, 0),
    )

    def __init__(self, radius: float, face: int, u_lo: float, u_hi: float,
                 v_lo: float, v_hi: float):
        self.radius = radius
        self.face = face
        self.u_lo, self.u_hi = u_lo, u_hi
        self.v_lo, self.v_hi = v_lo, v_hi

    def _cube_point(self, u, v):
        axis, sign, ua, va = self._FACES[self.face]
        cu = self.u_lo + (np.asarray(u) + 1.0) * 0.5 * (self.u_hi - self.u_lo)
        cv = self.v_lo + (np.asarray(v) + 1.0) * 0.5 * (self.v_hi - self.v_lo)
        x = np.empty(np.broadcast(cu, cv).shape + (3,))
        x[..., axis] = sign
        x[..., ua] = cu
        x[..., va] = cv
        du = np.zeros(3)
        dv = np.zeros(3)
        du[ua] = 0.5 * (self.u_hi - self.u_lo)
        dv[va] = 0.5 * (self.v_hi - self.v_lo)
        return x, du, dv

    def positions(self, u, v):
        x, _, _ = self._cube_point(u, v)
        nrm = np.linalg.norm(x, axis=-1, keepdims=True)
        return self.radius * x / nrm

    def derivatives(self, u, v):
        x, du, dv = self._cube_point(u, v)
        nrm = np.linalg.norm(x, axis=-1, keepdims=True)
        unit = x / nrm
        # d/dt (R x/|x|) = R (dt - unit (unit . dt)) / |x|
        proj_u = du - unit * (unit @ du)[..., None]
        proj_v = dv - unit * (unit @ dv)[..., None]
        scale = self.radius / nrm
        return scale * proj_u, scale * proj_v


@dataclass
class Patch:
    """One curvilinear quadrilateral element with its Chebyshev geometry.

    samples[l, k, :] is the position at tensor node (u_l, v_k) in meters.
    """

    id: int
    samples: np.ndarray
    chart: Optional[Chart] = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 3 or self.samples.shape[2] != 3:
            raise DimensionError(f"samples must be (N_u, N_v, 3), got {self.samples.shape}")
        if min(self.samples.shape[:2]) < 2:
            raise DimensionError("patch orders must be >= 2")

    @property
    def orders(self) -> tuple[int, int]:
        return self.samples.shape[:2]

    @property
    def n_nodes(self) -> int:
        nu, nv = self.orders
        return nu * nv

    @property
    def diameter(self) -> float:
        d = self._cache.get("diameter")
        if d is None:
            pts = self.samples.reshape(-1, 3)
            d = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
            self._cache["diameter"] = d
        return d

    def position_coeffs(self) -> np.ndarray:
        """Chebyshev coefficient tensor (N_u, N_v, 3) of the geometry."""
        c = self._cache.get("coeffs")
        if c is None:
            c = np.stack([cheb.to_coeffs(self.samples[:, :, i]) for i in range(3)], axis=-1)
            self._cache["coeffs"] = c
        return c

    def node_uv(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat (u, v) parameter arrays over the grid, u-index fastest."""
        uv = self._cache.get("node_uv")
        if uv is None:
            nu, nv = self.orders
            un = cheb.fejer1(nu).nodes
            vn = cheb.fejer1(nv).nodes
            V, U = np.meshgrid(vn, un, indexing="ij")   # flat index = k*nu + l
            uv = (U.ravel(), V.ravel())
            self._cache["node_uv"] = uv
        return uv

    def node_frames(self) -> "FrameBatch":
        fb = self._cache.get("node_frames")
        if fb is None:
            u, v = self.node_uv()
            fb = eval_frames(self, u, v)
            self._cache["node_frames"] = fb
        return fb

    def node_weights(self) -> np.ndarray:
        """Tensor Fejer weights, flat in node order (w_l * w_k)."""
        w = self._cache.get("node_weights")
        if w is None:
            nu, nv = self.orders
            wu = cheb.fejer1(nu).weights
            wv = cheb.fejer1(nv).weights
            w = (wv[:, None] * wu[None, :]).ravel()
            self._cache["node_weights"] = w
        return w


@dataclass(frozen=True)
class FrameBatch:
    """Frames at many parametric points, vectorized component arrays."""

    position: np.ndarray   # (n, 3)
    a_u: np.ndarray
    a_v: np.ndarray
    normal: np.ndarray
    sqrt_g: np.ndarray     # (n,)

    def __len__(self):
        return self.position.shape[0]

    def frame(self, i: int) -> Frame:
        au, av, n, sg = self.a_u[i], self.a_v[i], self.normal[i], self.sqrt_g[i]
        return Frame(self.position[i], au, av, n, float(sg),
                     np.cross(av, n) / sg, np.cross(n, au) / sg)


def eval_frames(patch: Patch, u, v) -> FrameBatch:
    """Frames at parametric points; spectral or analytic derivatives."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if patch.chart is not None:
        pos = patch.chart.positions(u, v)
        a_u, a_v = patch.chart.derivatives(u, v)
    else:
        coeffs = patch.position_coeffs()
        pos = np.empty((u.size, 3))
        a_u = np.empty((u.size, 3))
        a_v = np.empty((u.size, 3))
        for i in range(3):
            c = coeffs[:, :, i]
            pos[:, i] = cheb.eval2d_raw(c, u, v)
            a_u[:, i] = cheb.eval2d_raw(cheb.deriv_coeffs(c, 0), u, v)
            a_v[:, i] = cheb.eval2d_raw(cheb.deriv_coeffs(c, 1), u, v)
    cross = np.cross(a_u, a_v)
    sqrt_g = np.linalg.norm(cross, axis=-1)
    floor = 1e-14 * patch.diameter ** 2
    if np.any(sqrt_g < floor):
        raise DegeneratePatch(
            f"patch {patch.id}: Jacobian below {floor:.3e} at an evaluation point")
    normal = cross / sqrt_g[:, None]
    return FrameBatch(pos, a_u, a_v, normal, sqrt_g)


def eval_frame(patch: Patch, u: float, v: float) -> Frame:
    """Single-point frame with contravariant vectors included."""
    return eval_frames(patch, [u], [v]).frame(0)


def second_derivatives(patch: Patch, u, v):
    """r_uu, r_uv, r_vv from the Chebyshev geometry (Newton curvature)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    tensors = patch._cache.get("second_deriv_coeffs")
    if tensors is None:
        coeffs = patch.position_coeffs()
        tensors = [[cheb.deriv_coeffs(cheb.deriv_coeffs(coeffs[:, :, i], a0), a1)
                    for i in range(3)]
                   for (a0, a1) in ((0, 0), (0, 1), (1, 1))]
        patch._cache["second_deriv_coeffs"] = tensors
    out = []
    for comp_coeffs in tensors:
        d = np.empty((u.size, 3))
        for i in range(3):
            d[:, i] = cheb.eval2d_raw(comp_coeffs[i], u, v)
        out.append(d)
    return tuple(out)


# ---------------------------------------------------------------------------
# Builtin sphere geometry
# ---------------------------------------------------------------------------

def unit_sphere_patches(radius: float, refinement: int, order: tuple[int, int]) -> list[Patch]:
    """Sphere tessellated into 6*4^refinement projected-cube patches."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if refinement < 0:
        raise ValueError("refinement must be >= 0")
    nu, nv = order
    un = cheb.fejer1(nu).nodes
    vn = cheb.fejer1(nv).nodes
    V, U = np.meshgrid(vn, un, indexing="ij")
    patches = []
    nsub = 2 ** refinement
    edges = np.linspace(-1.0, 1.0, nsub + 1)
    pid = 0
    for face in range(6):
        for iu in range(nsub):
            for iv in range(nsub):
                chart = CubeSphereFace(radius, face, edges[iu], edges[iu + 1],
                                       edges[iv], edges[iv + 1])
                pos = chart.positions(U.ravel(), V.ravel())
                # flat index k*nu + l -> samples[l, k]
                samples = pos.reshape(nv, nu, 3).transpose(1, 0, 2).copy()
                patches.append(Patch(pid, samples, chart=chart))
                pid += 1
    return patches


# ---------------------------------------------------------------------------
# Bounding boxes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundingBox:
    lo: np.ndarray
    hi: np.ndarray


def bounding_box(points: np.ndarray) -> BoundingBox:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.size == 0:
        raise EmptyInput("bounding_box of empty point set")
    return BoundingBox(pts.min(axis=0), pts.max(axis=0))


def diam(box: BoundingBox) -> float:
    return float(np.linalg.norm(box.hi - box.lo))


def dist(b1: BoundingBox, b2: BoundingBox) -> float:
    gap = np.maximum(0.0, np.maximum(b1.lo - b2.hi, b2.lo - b1.hi))
    return float(np.linalg.norm(gap))


def point_box_dist(p: np.ndarray, box: BoundingBox) -> float:
    gap = np.maximum(0.0, np.maximum(box.lo - p, p - box.hi))
    return float(np.linalg.norm(gap))


# ---------------------------------------------------------------------------
# Mesh file I/O
# ---------------------------------------------------------------------------

def save_patch_mesh(path, patches: list[Patch]) -> None:
    """Write the text mesh format: header then per-patch node lines."""
    nu, nv = patches[0].orders
    for p in patches:
        if p.orders != (nu, nv):
            raise DimensionError("mesh format requires uniform patch orders")
    with open(path, "w") as f:
        f.write(f"{len(patches)} {nu} {nv}\n")
        for p in patches:
            # row-major, v outer / u inner
            for k in range(nv):
                for l in range(nu):
                    x, y, z = p.samples[l, k]
                    f.write(f"{x:.17g} {y:.17g} {z:.17g}\n")


def load_patch_mesh(path, watertight_tol: float = 1e-10) -> list[Patch]:
    """Read the text mesh format and run the watertightness audit."""
    with open(path) as f:
        tokens = f.read().split()
    if len(tokens) < 3:
        raise ParseError(f"{path}: missing header")
    try:
        npatches, nu, nv = (int(t) for t in tokens[:3])
    except ValueError as e:
        raise ParseError(f"{path}: bad header: {e}") from None
    if npatches < 1 or nu < 2 or nv < 2:
        raise ParseError(f"{path}: nonsensical header {npatches} {nu} {nv}")
    need = 3 + 3 * npatches * nu * nv
    if len(tokens) != need:
        raise DimensionError(
            f"{path}: expected {need - 3} coordinates for {npatches} patches "
            f"of {nu}x{nv}, found {len(tokens) - 3}")
    try:
        data = np.array([float(t) for t in tokens[3:]]).reshape(npatches, nv, nu, 3)
    except ValueError as e:
        raise ParseError(f"{path}: bad coordinate: {e}") from None
    patches = [Patch(i, data[i].transpose(1, 0, 2).copy()) for i in range(npatches)]
    gap = watertightness_gap(patches)
    if gap > watertight_tol:
        warnings.warn(f"{path}: patch edges mismatch up to {gap:.3e} (relative)")
    return patches


def watertightness_gap(patches: list[Patch], n_edge: int = 9) -> float:
    """Largest relative mismatch between paired patch boundary curves.

    Every patch edge is sampled at n_edge points of the Chebyshev
    interpolant; edges are paired with the closest edge of any other
    patch (allowing reversal). Unpaired edges (open sheets) do not
    count as leaks. Returned gap is relative to the mean patch diameter.
    """
    t = np.cos(np.linspace(0.0, np.pi, n_edge))
    ones = np.ones_like(t)
    edge_params = [(t, -ones), (t, ones), (-ones, t), (ones, t)]
    curves = []
    owners = []
    for p in patches:
        for (uu, vv) in edge_params:
            if p.chart is not None:
                pos = p.chart.positions(uu, vv)
            else:
                coeffs = p.position_coeffs()
                pos = np.stack([cheb.eval2d(coeffs[:, :, i], uu, vv) for i in range(3)], axis=-1)
            curves.append(pos)
            owners.append(p.id)
    scale = float(np.mean([p.diameter for p in patches]))
    worst = 0.0
    for i, ci in enumerate(curves):
        best = np.inf
        for j, cj in enumerate(curves):
            if owners[i] == owners[j]:
                continue
            fwd = np.max(np.linalg.norm(ci - cj, axis=-1))
            rev = np.max(np.linalg.norm(ci - cj[::-1], axis=-1))
            best = min(best, fwd, rev)
        if np.isfinite(best) and best < 0.5 * scale:
            worst = max(worst, best / scale)
    return worst
