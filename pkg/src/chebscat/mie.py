"""Mie-series reference for plane-wave scattering by a sphere.

Fixed incidence convention matching the solver examples: x-polarized,
travelling in +z, e^{+j omega t} time dependence, so the spatial factor
is e^{-jkz} and outgoing radial functions are spherical Hankel h^(2).

Coefficients are solved per mode from the tangential-field continuity
conditions (Cramer's rule on Riccati-Bessel functions), which covers
PEC, dielectric and magnetic-contrast spheres in one code path. The
series machinery is self-contained (recurrences only), keeping this
module an oracle independent of the solver's kernels.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import NoResonanceInInterval, OffSurface
from .kernels import Medium

from scipy.constants import epsilon_0, mu_0


@dataclass(frozen=True)
class MieSpec:
    """Sphere scattering description; inner None means PEC."""

    radius: float
    outer: Medium
    inner: Optional[Medium] = None
    truncation: Optional[int] = None
    amplitude: float = 1.0

    @property
    def n_terms(self) -> int:
        if self.truncation is not None:
            return self.truncation
        x = abs(self.outer.k) * self.radius
        return int(np.ceil(x + 4.0 * x ** (1.0 / 3.0) + 10.0))


# ---------------------------------------------------------------------------
# Spherical Bessel machinery (complex-capable recurrences)
# ---------------------------------------------------------------------------

def spherical_jy(nmax: int, z: complex):
    """j_n and y_n for n = 0..nmax; downward Miller recurrence for j."""
    z = complex(z)
    if abs(z) < 1e-12:
        raise ValueError("spherical Bessel argument too close to zero")
    n_start = nmax + int(16 + 2.0 * np.sqrt(max(nmax, abs(z))))
    f = np.zeros(n_start + 2, dtype=complex)
    f[n_start + 1] = 0.0
    f[n_start] = 1e-280
    for n in range(n_start, 0, -1):
        f[n - 1] = (2 * n + 1) / z * f[n] - f[n + 1]
    j0 = np.sin(z) / z
    j1 = np.sin(z) / z**2 - np.cos(z) / z
    # normalize against whichever exact value is better conditioned
    if abs(j0) >= abs(j1):
        scale = j0 / f[0]
    else:
        scale = j1 / f[1]
    j = f[: nmax + 1] * scale
    y = np.zeros(nmax + 1, dtype=complex)
    y[0] = -np.cos(z) / z
    if nmax >= 1:
        y[1] = -np.cos(z) / z**2 - np.sin(z) / z
    for n in range(1, nmax):
        y[n + 1] = (2 * n + 1) / z * y[n] - y[n - 1]
    return j, y


def riccati(nmax: int, z: complex):
    """psi, psi', zeta, zeta' for n = 0..nmax (zeta = z h2_n outgoing)."""
    j, y = spherical_jy(nmax, z)
    h2 = j - 1j * y
    n = np.arange(nmax + 1)
    psi = z * j
    zeta = z * h2
    dpsi = np.empty_like(psi)
    dzeta = np.empty_like(zeta)
    dpsi[0] = np.cos(z)
    dzeta[0] = np.cos(z) - 1j * np.sin(z)
    if nmax >= 1:
        dpsi[1:] = z * j[:-1] - n[1:] * j[1:]
        dzeta[1:] = z * h2[:-1] - n[1:] * h2[1:]
    return psi, dpsi, zeta, dzeta


def coefficients(spec: MieSpec):
    """Scattered (a, b) and internal (c, d) mode coefficients, n = 1..L."""
    L = spec.n_terms
    x = spec.outer.k * spec.radius
    psi, dpsi, zeta, dzeta = riccati(L, x)
    psi, dpsi, zeta, dzeta = psi[1:], dpsi[1:], zeta[1:], dzeta[1:]
    if spec.inner is None:
        a = dpsi / dzeta
        b = psi / zeta
        c = np.zeros_like(a)
        d = np.zeros_like(a)
        return a, b, c, d
    m = spec.inner.k / spec.outer.k
    mu_ratio = spec.outer.mu / spec.inner.mu
    psi2, dpsi2, _, _ = riccati(L, m * x)
    psi2, dpsi2 = psi2[1:], dpsi2[1:]
    # tangential continuity, 2x2 per mode (Cramer):
    #   b zeta  + (c/m) psi2      = psi
    #   b zeta' + mu_ratio c dpsi2 = dpsi
    det_b = zeta * mu_ratio * dpsi2 - dzeta * psi2 / m
    b = (psi * mu_ratio * dpsi2 - dpsi * psi2 / m) / det_b
    c = (zeta * dpsi - dzeta * psi) / det_b
    #   a zeta' + (d/m) dpsi2     = dpsi
    #   a zeta  + mu_ratio d psi2 = psi
    det_a = dzeta * mu_ratio * psi2 - zeta * dpsi2 / m
    a = (dpsi * mu_ratio * psi2 - psi * dpsi2 / m) / det_a
    d = (dzeta * psi - zeta * dpsi) / det_a
    return a, b, c, d


def truncation_tail(spec: MieSpec) -> float:
    """Relative size of the last retained mode, the tail estimate."""
    a, b, _, _ = coefficients(spec)
    n = np.arange(1, a.size + 1)
    weights = (2 * n + 1) * (np.abs(a) + np.abs(b))
    total = weights.sum()
    return float(weights[-1] / total) if total > 0 else 0.0


def _warn_if_truncated(spec: MieSpec):
    tail = truncation_tail(spec)
    if tail > 1e-10:
        from .errors import TruncationWarning
        warnings.warn(f"Mie series tail estimate {tail:.2e} above 1e-10",
                      TruncationWarning)


# ---------------------------------------------------------------------------
# Angular functions and far field
# ---------------------------------------------------------------------------

def angular_functions(nmax: int, costheta: np.ndarray):
    """pi_n and tau_n for n = 1..nmax at each cos(theta)."""
    mu = np.atleast_1d(np.asarray(costheta, dtype=float))
    pi = np.zeros((nmax + 1, mu.size))
    tau = np.zeros((nmax + 1, mu.size))
    if nmax >= 1:
        pi[1] = 1.0
        tau[1] = mu
    for n in range(2, nmax + 1):
        pi[n] = ((2 * n - 1) / (n - 1)) * mu * pi[n - 1] - (n / (n - 1)) * pi[n - 2]
        tau[n] = n * mu * pi[n] - (n + 1) * pi[n - 1]
    return pi[1:], tau[1:]


def amplitude_functions(spec: MieSpec, theta_rad: np.ndarray):
    """S1, S2 of the scattering angles."""
    a, b, _, _ = coefficients(spec)
    n = np.arange(1, a.size + 1)
    w = (2 * n + 1) / (n * (n + 1))
    pi_n, tau_n = angular_functions(a.size, np.cos(theta_rad))
    S1 = (w * a) @ pi_n + (w * b) @ tau_n
    S2 = (w * a) @ tau_n + (w * b) @ pi_n
    return S1, S2


def mie_far_field(spec: MieSpec, theta_rad, phi_rad):
    """Far-field amplitudes: E_s ~ (F_theta, F_phi) e^{-jkr} / r."""
    theta = np.atleast_1d(np.asarray(theta_rad, dtype=float))
    phi = np.atleast_1d(np.asarray(phi_rad, dtype=float))
    S1, S2 = amplitude_functions(spec, theta)
    k = spec.outer.k
    E0 = spec.amplitude
    F_theta = -1j * E0 * np.cos(phi) * S2 / k
    F_phi = 1j * E0 * np.sin(phi) * S1 / k
    return F_theta, F_phi


def mie_rcs(spec: MieSpec, theta_deg, phi_deg) -> np.ndarray:
    """Bistatic radar cross-section in m^2."""
    _warn_if_truncated(spec)
    theta = np.deg2rad(np.atleast_1d(np.asarray(theta_deg, dtype=float)))
    phi = np.deg2rad(np.atleast_1d(np.asarray(phi_deg, dtype=float)))
    F_theta, F_phi = mie_far_field(spec, theta, phi)
    sigma = 4 * np.pi * (np.abs(F_theta) ** 2 + np.abs(F_phi) ** 2) / spec.amplitude**2
    return sigma if sigma.size > 1 else float(sigma[0])


def cross_sections(spec: MieSpec):
    """(extinction, scattering) cross-sections from the series."""
    a, b, _, _ = coefficients(spec)
    n = np.arange(1, a.size + 1)
    k = np.real(spec.outer.k)
    c_ext = (2 * np.pi / k**2) * np.sum((2 * n + 1) * np.real(a + b))
    c_sca = (2 * np.pi / k**2) * np.sum((2 * n + 1) * (np.abs(a) ** 2 + np.abs(b) ** 2))
    return float(c_ext), float(c_sca)


# ---------------------------------------------------------------------------
# Near fields and surface currents
# ---------------------------------------------------------------------------

def _vsh_sums(spec: MieSpec, points: np.ndarray, where: str):
    """Total E, H at points, summed over modes.

    where selects the expansion: "exterior" adds incident + scattered
    (j_n and h2_n radial functions), "interior" uses the transmitted
    field, "incident" the incoming wave alone (series self-test).
    Returns Cartesian (E, H), each (npts, 3) complex.

    Both fields share one structural form,
        E ~ sum E_n [ M_o1n{zM} + j N_e1n{zN} ],
        H ~ (k/omega mu) sum E_n [ -M_e1n{wM} + j N_o1n{wN} ],
    with the radial factors zM, zN, wM, wN listed per region below.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    r = np.linalg.norm(pts, axis=1)
    costh = np.clip(pts[:, 2] / r, -1.0, 1.0)
    sinth = np.sqrt(np.maximum(0.0, 1.0 - costh**2))
    phi = np.arctan2(pts[:, 1], pts[:, 0])
    a, b, c, d = coefficients(spec)
    L = a.size
    med = spec.outer if where in ("exterior", "incident") else spec.inner
    k = med.k
    rho = k * r
    psi = np.empty((L + 1, r.size), dtype=complex)
    dpsi = np.empty_like(psi)
    zeta = np.empty_like(psi)
    dzeta = np.empty_like(psi)
    for i, z in enumerate(rho):
        psi[:, i], dpsi[:, i], zeta[:, i], dzeta[:, i] = riccati(L, z)
    jn, djn = psi[1:] / rho, dpsi[1:] / rho      # j_n and [rho j_n]'/rho
    hn, dhn = zeta[1:] / rho, dzeta[1:] / rho
    pi_n, tau_n = angular_functions(L, costh)
    n = np.arange(1, L + 1)
    En = (spec.amplitude * (-1j) ** n * (2 * n + 1) / (n * (n + 1)))[:, None]
    nn1 = (n * (n + 1))[:, None]
    ac, bc, cc, dc = (x[:, None] for x in (a, b, c, d))

    if where == "exterior":
        zM, zN_r, zN_t = jn - bc * hn, (jn - ac * hn) / rho, djn - ac * dhn
        wM, wN_r, wN_t = jn - ac * hn, (jn - bc * hn) / rho, djn - bc * dhn
    elif where == "incident":
        zM, zN_r, zN_t = jn, jn / rho, djn
        wM, wN_r, wN_t = jn, jn / rho, djn
    else:
        zM, zN_r, zN_t = cc * jn, dc * jn / rho, dc * djn
        wM, wN_r, wN_t = dc * jn, cc * jn / rho, cc * djn

    cosphi, sinphi = np.cos(phi), np.sin(phi)
    Hpre = k / (med.omega * med.mu)              # = 1/eta

    E_r = cosphi * np.sum(En * 1j * nn1 * sinth * pi_n * zN_r, axis=0)
    E_th = cosphi * np.sum(En * (pi_n * zM + 1j * tau_n * zN_t), axis=0)
    E_ph = -sinphi * np.sum(En * (tau_n * zM + 1j * pi_n * zN_t), axis=0)

    H_r = Hpre * sinphi * np.sum(En * 1j * nn1 * sinth * pi_n * wN_r, axis=0)
    H_th = Hpre * sinphi * np.sum(En * (pi_n * wM + 1j * tau_n * wN_t), axis=0)
    H_ph = Hpre * cosphi * np.sum(En * (tau_n * wM + 1j * pi_n * wN_t), axis=0)

    rhat = pts / r[:, None]
    that = np.stack([costh * cosphi, costh * sinphi, -sinth], axis=1)
    phat = np.stack([-sinphi, cosphi, np.zeros_like(sinphi)], axis=1)
    E = E_r[:, None] * rhat + E_th[:, None] * that + E_ph[:, None] * phat
    H = H_r[:, None] * rhat + H_th[:, None] * that + H_ph[:, None] * phat
    return E, H


def total_exterior_fields(spec: MieSpec, points: np.ndarray):
    """Incident-plus-scattered E, H just outside the sphere."""
    return _vsh_sums(spec, points, "exterior")


def interior_fields(spec: MieSpec, points: np.ndarray):
    if spec.inner is None:
        E = np.zeros((np.atleast_2d(points).shape[0], 3), dtype=complex)
        return E, E.copy()
    return _vsh_sums(spec, points, "interior")


def mie_surface_current(spec: MieSpec, points: np.ndarray, rel_tol: float = 1e-10):
    """J = n x H and M = E x n of the total field at surface points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    r = np.linalg.norm(pts, axis=1)
    if np.any(np.abs(r - spec.radius) > rel_tol * spec.radius):
        raise OffSurface("points are not on the sphere surface")
    scaled = pts * (spec.radius / r)[:, None]
    E, H = total_exterior_fields(spec, scaled)
    n = scaled / spec.radius
    J = np.cross(n, H)
    M = np.cross(E, n)
    if spec.inner is None:
        M = np.zeros_like(M)
    return (J, M) if pts.shape[0] > 1 else (J[0], M[0])


# ---------------------------------------------------------------------------
# Resonance search
# ---------------------------------------------------------------------------

def _with_eps(spec: MieSpec, eps_r: float, truncation: int) -> MieSpec:
    inner = Medium(eps_r * epsilon_0, spec.inner.mu if spec.inner else mu_0,
                   spec.outer.omega)
    return replace(spec, inner=inner, truncation=truncation)


def _mode_profile(spec: MieSpec, eps_r: float, truncation: int) -> np.ndarray:
    """Per-mode internal response max(|c_n|, |d_n|) at one permittivity."""
    _, _, c, d = coefficients(_with_eps(spec, eps_r, truncation))
    return np.maximum(np.abs(c), np.abs(d))


def find_resonance(spec: MieSpec, eps_interval: tuple[float, float],
                   scan_points: int = 4001, tol: float = 1e-4) -> float:
    """Relative permittivity of the dominant resonance in the interval.

    Each mode's internal-field coefficient traces a Lorentzian-like
    peak through its resonance; trapped whispering-gallery modes are
    orders of magnitude sharper but weaker in absolute size than the
    broad background modes, so dominance is judged by the peak height
    normalized to the mode's own background level across the interval.
    The winning mode's coefficient magnitude is then golden-section
    maximized inside the bracketing scan cell. Modes up to n ~ m x are
    scanned, beyond the far-field truncation, because the trapped
    resonances live there. Raises NoResonanceInInterval when no mode
    has an interior local maximum.
    """
    lo, hi = eps_interval
    x = abs(spec.outer.k) * spec.radius
    L = int(np.ceil(np.sqrt(hi) * x)) + 8
    grid = np.linspace(lo, hi, scan_points)
    prof = np.empty((scan_points, L))
    for i, e in enumerate(grid):
        prof[i] = _mode_profile(spec, e, L)
    best = None   # (quality, mode, grid index)
    for n in range(L):
        col = prof[:, n]
        interior = np.nonzero((col[1:-1] > col[:-2]) & (col[1:-1] >= col[2:]))[0] + 1
        if interior.size == 0:
            continue
        background = np.median(col)
        if not np.isfinite(background) or background <= 0:
            continue
        for i in interior:
            quality = col[i] / background
            if best is None or quality > best[0]:
                best = (quality, n, i)
    # peak/median < 1.5 means no mode rises meaningfully above its own
    # background: treat the interval as resonance-free
    if best is None or best[0] < 1.5:
        raise NoResonanceInInterval(f"no interior peak in [{lo}, {hi}]")
    _, mode, idx = best

    def f(eps_r: float) -> float:
        return float(_mode_profile(spec, eps_r, L)[mode])

    a, b = grid[max(idx - 1, 0)], grid[min(idx + 1, scan_points - 1)]
    gr = (np.sqrt(5.0) - 1.0) / 2.0
    x1 = b - gr * (b - a)
    x2 = a + gr * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + gr * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - gr * (b - a)
            f1 = f(x1)
    return float(0.5 * (a + b))
