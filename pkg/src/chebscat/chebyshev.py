"""Spectral toolkit: Fejer-1 quadrature and tensor Chebyshev transforms.

Grids are tensor products of first-kind Chebyshev points (the zeros
x_l = cos((2l+1)pi/(2n)), no endpoints), which double as the Fejer-1
quadrature nodes. Surface densities and patch geometry both live on
these grids, so one set of tables serves interpolation, differentiation
and integration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError


@dataclass(frozen=True)
class QuadRule1D:
    """Fejer first-rule: nodes are Chebyshev zeros, weights positive."""

    n: int
    nodes: np.ndarray
    weights: np.ndarray


_RULE_CACHE: dict[int, QuadRule1D] = {}
_TABLE_CACHE: dict[int, dict[str, np.ndarray]] = {}


def fejer1(n: int) -> QuadRule1D:
    """Fejer-1 quadrature of order n on [-1, 1], exact to degree n-1."""
    if n < 1:
        raise ValueError(f"quadrature order must be >= 1, got {n}")
    rule = _RULE_CACHE.get(n)
    if rule is not None:
        return rule
    ell = np.arange(n)
    theta = (2 * ell + 1) * np.pi / (2 * n)
    nodes = np.cos(theta)
    # Closed form: w_l = (2/n) [1 - 2 sum_{m=1}^{n//2} cos(2 m theta_l)/(4m^2-1)]
    w = np.ones(n)
    for m in range(1, n // 2 + 1):
        w -= 2.0 * np.cos(2 * m * theta) / (4 * m * m - 1)
    weights = (2.0 / n) * w
    rule = QuadRule1D(n, nodes, weights)
    _RULE_CACHE[n] = rule
    return rule


def chebvander(x: np.ndarray, n: int) -> np.ndarray:
    """Matrix T[i, k] = T_k(x_i) for k < n."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    V = np.empty((x.size, n))
    V[:, 0] = 1.0
    if n > 1:
        V[:, 1] = x
    for k in range(2, n):
        V[:, k] = 2.0 * x * V[:, k - 1] - V[:, k - 2]
    return V


def chebvander_deriv(x: np.ndarray, n: int) -> np.ndarray:
    """Matrix D[i, k] = T_k'(x_i) for k < n.

    Uses T_k' = k U_{k-1} with the Chebyshev-U recurrence, which is
    stable at the domain endpoints where the sin-form is not.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    D = np.zeros((x.size, n))
    if n > 1:
        U_prev = np.ones_like(x)        # U_0
        D[:, 1] = U_prev
        U = 2.0 * x                     # U_1
        for k in range(2, n):
            D[:, k] = k * U
            U_prev, U = U, 2.0 * x * U - U_prev
    return D


def _tables(n: int) -> dict[str, np.ndarray]:
    """Per-order transform tables (cached, immutable by convention).

    synth:    values at nodes from coefficients (T_k(x_l) as [l, k])
    analysis: coefficients from values, the discrete-orthogonality
              inverse with alpha_0 = 1, alpha_k = 2 for k >= 1
    dcoef:    coefficient-space differentiation matrix
    dnode:    node-space differentiation (synth @ dcoef @ analysis)
    """
    tab = _TABLE_CACHE.get(n)
    if tab is not None:
        return tab
    rule = fejer1(n)
    synth = chebvander(rule.nodes, n)
    alpha = np.full(n, 2.0)
    alpha[0] = 1.0
    analysis = (alpha[:, None] / n) * synth.T
    dcoef = np.zeros((n, n))
    for k in range(1, n):
        # c'_{k-1} = c'_{k+1} + 2k c_k, accumulated column-wise
        for j in range(k - 1, -1, -2):
            dcoef[j, k] = 2.0 * k
    dcoef[0, :] *= 0.5
    dnode = synth @ dcoef @ analysis
    tab = {"synth": synth, "analysis": analysis, "dcoef": dcoef, "dnode": dnode}
    _TABLE_CACHE[n] = tab
    return tab


@dataclass
class ChebGrid2D:
    """Scalar field sampled on an (N_u x N_v) tensor Fejer-1 grid.

    values[l, k] is the sample at (u_l, v_k). Coefficients follow the
    same layout: coeffs[n, m] multiplies T_n(u) T_m(v).
    """

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise DimensionError(f"expected 2-D grid, got shape {self.values.shape}")

    @property
    def orders(self) -> tuple[int, int]:
        return self.values.shape


def to_coeffs(grid: ChebGrid2D | np.ndarray) -> np.ndarray:
    """Tensor Chebyshev coefficients gamma[n, m] of grid values."""
    vals = grid.values if isinstance(grid, ChebGrid2D) else np.asarray(grid)
    nu, nv = vals.shape
    Au = _tables(nu)["analysis"]
    Av = _tables(nv)["analysis"]
    return Au @ vals @ Av.T


def from_coeffs(coeffs: np.ndarray) -> np.ndarray:
    """Grid values from tensor coefficients (inverse of to_coeffs)."""
    coeffs = np.asarray(coeffs)
    nu, nv = coeffs.shape
    Su = _tables(nu)["synth"]
    Sv = _tables(nv)["synth"]
    return Su @ coeffs @ Sv.T


def eval2d(coeffs: np.ndarray, u, v):
    """Evaluate sum gamma[n,m] T_n(u) T_m(v) at points (u, v).

    Clenshaw recurrence along each axis; u and v may be scalars or
    equal-length arrays. Raises DomainError outside [-1-1e-12, 1+1e-12].
    """
    u_arr = np.atleast_1d(np.asarray(u, dtype=float))
    v_arr = np.atleast_1d(np.asarray(v, dtype=float))
    if np.any(np.abs(u_arr) > 1.0 + 1e-12) or np.any(np.abs(v_arr) > 1.0 + 1e-12):
        raise DomainError("evaluation point outside [-1, 1]")
    out = eval2d_raw(coeffs, u_arr, v_arr)
    return out if np.ndim(u) else out[0]


def eval2d_raw(coeffs: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """eval2d without the domain guard (mild extrapolation is allowed
    internally while the closest-point Newton iterate roams past +-1)."""
    coeffs = np.asarray(coeffs)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    inner = _clenshaw(coeffs.T, v)              # (npts, N_u)
    return _clenshaw_pointwise(inner, u)


def _clenshaw(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Clenshaw along axis 0 of coeffs for each x; returns (len(x), other)."""
    n = coeffs.shape[0]
    x = x[:, None]
    b1 = np.zeros((x.shape[0], coeffs.shape[1]), dtype=coeffs.dtype)
    b2 = np.zeros_like(b1)
    for k in range(n - 1, 0, -1):
        b1, b2 = coeffs[k] + 2.0 * x * b1 - b2, b1
    return coeffs[0] + x * b1 - b2


def _clenshaw_pointwise(rowcoeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Clenshaw where row i of rowcoeffs is the coefficient set for x[i]."""
    n = rowcoeffs.shape[1]
    b1 = np.zeros(rowcoeffs.shape[0], dtype=rowcoeffs.dtype)
    b2 = np.zeros_like(b1)
    for k in range(n - 1, 0, -1):
        b1, b2 = rowcoeffs[:, k] + 2.0 * x * b1 - b2, b1
    return rowcoeffs[:, 0] + x * b1 - b2


def resample(grid: ChebGrid2D, orders: tuple[int, int]) -> ChebGrid2D:
    """Re-sample onto a finer tensor grid by zero-padding coefficients."""
    nu, nv = grid.orders
    mu, mv = orders
    if mu < nu or mv < nv:
        raise DimensionError(f"resample cannot shrink: {grid.orders} -> {orders}")
    padded = np.zeros((mu, mv), dtype=grid.values.dtype)
    padded[:nu, :nv] = to_coeffs(grid)
    return ChebGrid2D(from_coeffs(padded))


def deriv_coeffs(coeffs: np.ndarray, axis: int) -> np.ndarray:
    """Differentiate tensor coefficients along axis 0 (u) or 1 (v)."""
    coeffs = np.asarray(coeffs)
    D = _tables(coeffs.shape[axis])["dcoef"]
    return D @ coeffs if axis == 0 else coeffs @ D.T


def diff_node_matrix(n: int) -> np.ndarray:
    """Node-to-node spectral differentiation matrix for order n."""
    return _tables(n)["dnode"]


def cardinal_eval(orders: tuple[int, int], u: np.ndarray, v: np.ndarray):
    """Interpolation and derivative operators at scattered points.

    Returns (P, dPu, dPv), each (npts, N_u*N_v). Column j = k*N_u + l is
    the cardinal polynomial of grid node (l, k) (or its u-/v-derivative)
    evaluated at the points. Flattening matches the node layout used by
    the assembly (u-index fastest).
    """
    nu, nv = orders
    Au = _tables(nu)["analysis"]
    Av = _tables(nv)["analysis"]
    Pu = chebvander(u, nu) @ Au            # (npts, nu)
    Pv = chebvander(v, nv) @ Av
    dPu = chebvander_deriv(u, nu) @ Au
    dPv = chebvander_deriv(v, nv) @ Av
    P = Pv[:, :, None] * Pu[:, None, :]    # (npts, nv, nu)
    dU = Pv[:, :, None] * dPu[:, None, :]
    dV = dPv[:, :, None] * Pu[:, None, :]
    npts = P.shape[0]
    return (P.reshape(npts, -1), dU.reshape(npts, -1), dV.reshape(npts, -1))
