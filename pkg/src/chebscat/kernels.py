"""Media, incident fields and integral-operator kernels.

Everything assumes the e^{+j omega t} time convention, so outgoing
waves carry e^{-jkR} and physical media have Im(k) <= 0. SI units
throughout with scipy's exact vacuum constants.

The tested-operator blocks evaluate, for one observation frame against
many source points, the smooth part of the Nystrom integrand: test
vectors sqrt(G) a^{u,v} dotted with the kernels acting on the source
basis directions a_u / sqrt(G'), a_v / sqrt(G'). Identity (jump) terms
are added by the assembly, never here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.constants import epsilon_0, mu_0, speed_of_light

from .errors import SingularPoint
from .geometry import Frame, FrameBatch

MFIE_PEC = "mfie_pec"
MULLER = "muller"

_R_FLOOR = 1e-14  # meters; below this the kernel point is singular


@dataclass(frozen=True)
class Medium:
    """Homogeneous medium: permittivity, permeability, frequency."""

    eps: complex
    mu: complex
    omega: float

    @property
    def k(self) -> complex:
        k = complex(self.omega * np.sqrt(complex(self.eps) * complex(self.mu)))
        return -k if k.imag > 0 else k

    @property
    def eta(self) -> complex:
        return np.sqrt(complex(self.mu) / complex(self.eps))

    @staticmethod
    def from_relative(eps_r: complex, mu_r: complex, wavelength: float) -> "Medium":
        omega = 2.0 * np.pi * speed_of_light / wavelength
        return Medium(eps_r * epsilon_0, mu_r * mu_0, omega)


@dataclass(frozen=True)
class FormulationSpec:
    """Which integral equation is solved, with its media.

    MFIE_PEC couples 2 unknown components per point (J^u, J^v).
    MULLER couples 4 (J^u, J^v, M^u, M^v) and fixes the combination
    coefficients alpha = -eps2/eps1, beta = -mu2/mu1.
    """

    kind: str
    outer: Medium
    inner: Optional[Medium] = None

    def __post_init__(self):
        if self.kind not in (MFIE_PEC, MULLER):
            raise ValueError(f"unknown formulation {self.kind!r}")
        if self.kind == MULLER and self.inner is None:
            raise ValueError("Muller formulation requires an inner medium")

    @property
    def n_components(self) -> int:
        return 2 if self.kind == MFIE_PEC else 4

    @property
    def alpha(self) -> complex:
        return -self.inner.eps / self.outer.eps

    @property
    def beta(self) -> complex:
        return -self.inner.mu / self.outer.mu

    def jump_matrix(self) -> np.ndarray:
        """Identity (jump) coefficients added on the point diagonal.

        Row order is the tested-equation order; columns follow the
        unknown order. MFIE: +1/2 on J. Muller rows are scaled like the
        right-hand side of the tested system (E-rows by eps1, H-rows by
        mu1), giving -(eps1+eps2)/2 on M and +(mu1+mu2)/2 on J.
        """
        if self.kind == MFIE_PEC:
            return 0.5 * np.eye(2, dtype=complex)
        e1, e2 = self.outer.eps, self.inner.eps
        m1, m2 = self.outer.mu, self.inner.mu
        lam = np.zeros((4, 4), dtype=complex)
        lam[0, 2] = lam[1, 3] = -(e1 + e2) / 2.0
        lam[2, 0] = lam[3, 1] = +(m1 + m2) / 2.0
        return lam


# ---------------------------------------------------------------------------
# Excitations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlaneWave:
    """Unit-impedance-free plane wave: E = pol * amp * exp(-j k dir.r)."""

    direction: np.ndarray
    polarization: np.ndarray
    amplitude: float = 1.0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        p = np.asarray(self.polarization, dtype=float)
        d = d / np.linalg.norm(d)
        p = p / np.linalg.norm(p)
        if abs(d @ p) > 1e-12:
            raise ValueError("plane-wave polarization must be orthogonal to travel")
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "polarization", p)


@dataclass(frozen=True)
class Dipole:
    """Infinitesimal electric dipole with moment p (C m)."""

    position: np.ndarray
    moment: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "moment", np.asarray(self.moment, dtype=float))


Excitation = PlaneWave | Dipole


def incident_fields(exc: Excitation, medium: Medium, points: np.ndarray):
    """(E, H) of the excitation at the given points, shape (n, 3)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    k = medium.k
    if isinstance(exc, PlaneWave):
        phase = np.exp(-1j * k * (pts @ exc.direction))
        E = exc.amplitude * phase[:, None] * exc.polarization[None, :]
        H = np.cross(exc.direction, E) / medium.eta
        return E, H
    if isinstance(exc, Dipole):
        rel = pts - exc.position
        R = np.linalg.norm(rel, axis=1)
        if np.any(R < _R_FLOOR):
            raise SingularPoint("field point coincides with the dipole")
        rhat = rel / R[:, None]
        p = exc.moment
        ekr = np.exp(-1j * k * R)
        rxp = np.cross(rhat, p)
        H = (-1j * medium.omega) * (1 + 1j * k * R)[:, None] * ekr[:, None] \
            * rxp / (4 * np.pi * R * R)[:, None]
        trans = np.cross(rxp, rhat)
        rad = 3.0 * rhat * (rhat @ p)[:, None] - p[None, :]
        E = ekr[:, None] / (4 * np.pi * medium.eps) * (
            (k * k / R)[:, None] * trans + (1.0 / R**3 + 1j * k / R**2)[:, None] * rad)
        return E, H
    raise TypeError(f"unknown excitation {type(exc)!r}")


# ---------------------------------------------------------------------------
# Green's function and stable combinations
# ---------------------------------------------------------------------------

def _separation(r_obs: np.ndarray, r_src: np.ndarray):
    rel = np.atleast_2d(r_obs) - np.atleast_2d(r_src)
    R = np.linalg.norm(rel, axis=-1)
    if np.any(R < _R_FLOOR):
        raise SingularPoint("observation and source points coincide")
    return rel, R


def greens(k: complex, r_obs, r_src):
    """Free-space Green's function exp(-jkR) / (4 pi R)."""
    _, R = _separation(r_obs, r_src)
    out = np.exp(-1j * k * R) / (4 * np.pi * R)
    return out if out.size > 1 else complex(out[0])


def grad_greens(k: complex, r_obs, r_src):
    """Gradient of greens with respect to the observation point."""
    rel, R = _separation(r_obs, r_src)
    f = -(1 + 1j * k * R) * np.exp(-1j * k * R) / (4 * np.pi * R**3)
    out = f[..., None] * rel
    return out if out.shape[0] > 1 else out[0]


def _sin_minus_xcos(x: np.ndarray) -> np.ndarray:
    """sin(x) - x cos(x), series-switched so small x keeps precision."""
    x = np.asarray(x)
    small = np.abs(x) < 0.05
    xs = np.where(small, x, 0.0)
    x2 = xs * xs
    series = xs * x2 * (1.0 / 3.0 + x2 * (-1.0 / 30.0 + x2 * (1.0 / 840.0 - x2 / 45360.0)))
    return np.where(small, series, np.sin(x) - x * np.cos(x))


def greens_diff(k_plus: complex, k_minus: complex, r_obs, r_src):
    """G(k_plus) - G(k_minus), evaluated without cancellation."""
    _, R = _separation(r_obs, r_src)
    s = 0.5 * (k_plus + k_minus)
    d = 0.5 * (k_plus - k_minus)
    return np.exp(-1j * s * R) * (-2j) * np.sin(d * R) / (4 * np.pi * R)


def grad_greens_diff(k_plus: complex, k_minus: complex, r_obs, r_src):
    """grad greens(k_plus) - grad greens(k_minus), cancellation-free."""
    rel, R = _separation(r_obs, r_src)
    s = 0.5 * (k_plus + k_minus)
    d = 0.5 * (k_plus - k_minus)
    dR = d * R
    num = 2.0 * np.exp(-1j * s * R) * (
        1j * (_sin_minus_xcos(dR)) - R * s * np.sin(dR))
    return (num / (4 * np.pi * R**3))[..., None] * rel


# ---------------------------------------------------------------------------
# Tested integrand blocks
# ---------------------------------------------------------------------------

def _test_rows(obs_au: np.ndarray, obs_av: np.ndarray) -> np.ndarray:
    """Tested n x X pattern: row u -> -a_v . X, row v -> +a_u . X."""
    return np.stack([-obs_av, obs_au])


def mfie_tested_fields(spec: FormulationSpec, obs_pos, obs_au, obs_av,
                       src: FrameBatch):
    """Tested curl-kernel columns (n, 2 rows, 2 cols), 1/sqrt(G') included."""
    tmat = _test_rows(np.asarray(obs_au), np.asarray(obs_av))     # (2, 3)
    inv_sg = 1.0 / src.sqrt_g
    g1 = np.atleast_2d(grad_greens(spec.outer.k, obs_pos, src.position))
    Ku = -np.cross(g1, src.a_u)
    Kv = -np.cross(g1, src.a_v)
    B = np.empty((len(src), 2, 2), dtype=complex)
    B[:, :, 0] = Ku @ tmat.T
    B[:, :, 1] = Kv @ tmat.T
    B *= inv_sg[:, None, None]
    return B


def muller_tested_fields(spec: FormulationSpec, obs_pos, obs_au, obs_av,
                         src: FrameBatch):
    """Unique tested field columns of the combined Muller kernels.

    Returns (T6, T_dG): T6 is (n, 6, 2) holding, per source point and
    tested row pair, the six distinct generators
        [sJ a_u, sJ a_v, cM x a_u, cM x a_v, cJ x a_u, cJ x a_v]
    and T_dG (n, 2) the divergence-term kernel. The full 4x4 blocks are
    duplications of these columns; keeping them compact makes the
    singular-rule contraction one small GEMM instead of three large
    ones. 1/sqrt(G') is included.
    """
    tmat = _test_rows(np.asarray(obs_au), np.asarray(obs_av))     # (2, 3)
    inv_sg = 1.0 / src.sqrt_g
    med1, med2 = spec.outer, spec.inner
    k1, k2 = med1.k, med2.k
    omega = med1.omega
    G2 = np.atleast_1d(greens(k2, obs_pos, src.position))
    Gd = greens_diff(k1, k2, obs_pos, src.position)
    g2 = np.atleast_2d(grad_greens(k2, obs_pos, src.position))
    gd = np.atleast_2d(grad_greens_diff(k1, k2, obs_pos, src.position))

    em1, em2 = med1.eps * med1.mu, med2.eps * med2.mu
    sJ = 1j * omega * (em1 * Gd + (em1 - em2) * G2)               # (n,)
    cM = med1.eps * gd + (med1.eps - med2.eps) * g2               # (n, 3)
    cJ = -(med1.mu * gd + (med1.mu - med2.mu) * g2)

    n = len(src)
    T6 = np.empty((n, 6, 2), dtype=complex)
    T6[:, 0] = (src.a_u @ tmat.T) * sJ[:, None]
    T6[:, 1] = (src.a_v @ tmat.T) * sJ[:, None]
    T6[:, 2] = np.cross(cM, src.a_u) @ tmat.T
    T6[:, 3] = np.cross(cM, src.a_v) @ tmat.T
    T6[:, 4] = np.cross(cJ, src.a_u) @ tmat.T
    T6[:, 5] = np.cross(cJ, src.a_v) @ tmat.T
    T_dG = (gd / (-1j * omega)) @ tmat.T                          # (n, 2)
    T6 *= inv_sg[:, None, None]
    T_dG *= inv_sg[:, None]
    return T6, T_dG


def _muller_blocks_from_fields(T6, T_dG):
    n = T6.shape[0]
    B_val = np.empty((n, 4, 4), dtype=complex)
    B_div = np.zeros((n, 4, 4), dtype=complex)
    # rows 0,1 = tested E-equation; rows 2,3 = tested H-equation
    B_val[:, 0:2, 0] = T6[:, 0]
    B_val[:, 0:2, 1] = T6[:, 1]
    B_val[:, 0:2, 2] = T6[:, 2]
    B_val[:, 0:2, 3] = T6[:, 3]
    B_val[:, 2:4, 0] = T6[:, 4]
    B_val[:, 2:4, 1] = T6[:, 5]
    B_val[:, 2:4, 2] = T6[:, 0]
    B_val[:, 2:4, 3] = T6[:, 1]
    B_div[:, 0:2, 0] = T_dG
    B_div[:, 0:2, 1] = T_dG
    B_div[:, 2:4, 2] = T_dG
    B_div[:, 2:4, 3] = T_dG
    return B_val, B_div


def integrand_blocks(spec: FormulationSpec, obs_pos, obs_au, obs_av,
                     src: FrameBatch):
    """Smooth tested integrand against every source frame.

    Returns (B_val, B_div): B_val[s, b, c] multiplies the density value
    of component c at source point s; B_div[s, b, c] multiplies the
    parametric derivative (d/du for u-components, d/dv for v-) of that
    density. B_div is None for MFIE. The caller applies the source
    quadrature weight and the surface measure sqrt(G') du' dv'.
    """
    if spec.kind == MFIE_PEC:
        return mfie_tested_fields(spec, obs_pos, obs_au, obs_av, src), None
    T6, T_dG = muller_tested_fields(spec, obs_pos, obs_au, obs_av, src)
    return _muller_blocks_from_fields(T6, T_dG)


def integrand_block(spec: FormulationSpec, obs: Frame, src: Frame):
    """Single observation/source pair; see integrand_blocks."""
    batch = FrameBatch(src.position[None, :], src.a_u[None, :], src.a_v[None, :],
                       src.normal[None, :], np.array([src.sqrt_g]))
    B_val, B_div = integrand_blocks(spec, obs.position, obs.a_u, obs.a_v, batch)
    return (B_val[0], None if B_div is None else B_div[0])


def rhs_rows(spec: FormulationSpec, exc: Excitation, frames: FrameBatch) -> np.ndarray:
    """Tested incident-field rows per observation point, shape (n, C).

    MFIE rows test n x H_inc (no extra scale, keeping the +1/2 jump on
    the unknown). Muller rows carry the eps1 / mu1 scaling of the
    tested system right-hand side.
    """
    E, H = incident_fields(exc, spec.outer, frames.position)
    rows_u = -np.sum(frames.a_v * H, axis=1)
    rows_v = np.sum(frames.a_u * H, axis=1)
    if spec.kind == MFIE_PEC:
        return np.stack([rows_u, rows_v], axis=1)
    e1, m1 = spec.outer.eps, spec.outer.mu
    eu = -np.sum(frames.a_v * E, axis=1)
    ev = np.sum(frames.a_u * E, axis=1)
    return np.stack([e1 * eu, e1 * ev, m1 * rows_u, m1 * rows_v], axis=1)
