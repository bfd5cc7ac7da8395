"""Plane-wave excitation, far fields of surface currents and the RCS metric.

Fields are normalised: ``E`` is in V/m and ``H`` is multiplied by the
free-space impedance, so a plane wave has ``|E| = |H|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import tri_geometry
from .quadrature import quad_rule

C0 = 299792458.0
MU0 = 4e-7 * math.pi
EPS0 = 1.0 / (MU0 * C0 * C0)
ETA0 = MU0 * C0


def wavenumber(frequency: float) -> float:
    """Free-space wavenumber ``2 pi f / c0``."""
    return 2.0 * math.pi * frequency / C0


def wavelength(frequency: float) -> float:
    return C0 / frequency


@dataclass(frozen=True)
class PlaneWave:
    """Incident plane wave ``E0 p exp(-j k0 k.r)``.

    Parameters
    ----------
    frequency : float
        Hz.
    amplitude : complex
        ``E0`` in V/m.
    polarization, direction : array_like (3,)
        Unit vectors ``p`` and ``k`` with ``p.k = 0``.
    """

    frequency: float
    amplitude: complex = 1.0
    polarization: tuple = (1.0, 0.0, 0.0)
    direction: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        p = np.asarray(self.polarization, float)
        k = np.asarray(self.direction, float)
        if abs(np.linalg.norm(p) - 1) > 1e-12 or abs(np.linalg.norm(k) - 1) > 1e-12:
            raise ValueError("polarization and direction must be unit vectors")
        if abs(p @ k) > 1e-12:
            raise ValueError("polarization must be orthogonal to the propagation direction")
        if not self.frequency > 0:
            raise ValueError("frequency must be positive")

    @property
    def k0(self) -> float:
        return wavenumber(self.frequency)


def incident_fields(wave: PlaneWave, r):
    """Normalised incident fields at points ``r`` (..., 3).

    Returns
    -------
    E, H : ndarray (..., 3) complex
        ``H`` is ``eta0`` times the physical magnetic field.
    """
    r = np.asarray(r, dtype=float)
    p = np.asarray(wave.polarization, float)
    k = np.asarray(wave.direction, float)
    phase = wave.amplitude * np.exp(-1j * wave.k0 * (r @ k))
    E = phase[..., None] * p
    H = phase[..., None] * np.cross(k, p)
    return E, H


def angle_grid(theta_deg=None, phi_deg=0.0):
    """Default bistatic grid: theta 0..180 degrees in 1 degree steps."""
    th = np.arange(181.0) if theta_deg is None else np.asarray(theta_deg, float)
    ph = np.broadcast_to(np.asarray(phi_deg, float), th.shape)
    return th, ph


@dataclass
class FarField:
    """Bistatic far-field samples.

    ``e_theta``/``e_phi`` are ``lim r exp(jkr) E(r)`` and ``sigma`` is the
    linear RCS in square metres.
    """

    theta_deg: np.ndarray
    phi_deg: np.ndarray
    e_theta: np.ndarray
    e_phi: np.ndarray
    sigma: np.ndarray

    @property
    def sigma_dbsm(self):
        with np.errstate(divide="ignore"):
            return 10.0 * np.log10(self.sigma)


def surface_currents_at(skeleton, coeffs, degree=4):
    """Quadrature points, weights and RWG-expanded current values.

    Returns ``(r, w, values)`` with shapes (P, 3), (P,), (P, 3) for a
    coefficient vector of length ``n_rwg``.
    """
    from .hdg import rwg_scale

    V = skeleton.gamma_vertices()
    area, _, _ = tri_geometry(V)
    rule = quad_rule("triangle", degree)
    r = np.einsum("qa,gai->gqi", rule.points, V)
    t = r[:, :, None, :] - V[:, None, :, :]
    c = rwg_scale(skeleton)
    idx = skeleton.gamma_rwg
    x = np.where(idx >= 0, np.asarray(coeffs)[np.maximum(idx, 0)], 0.0) * c
    vals = np.einsum("gb,gqbi->gqi", x, t)
    w = 2.0 * rule.weights[None, :] * area[:, None]
    return r.reshape(-1, 3), w.ravel(), vals.reshape(-1, 3)


def far_field(points, weights, J, M, k0, theta_deg, phi_deg, amplitude=1.0):
    """Radiation integrals of sampled currents ``J`` (normalised) and ``M``.

    Parameters
    ----------
    points, weights : (P, 3), (P,)
    J, M : (P, 3) complex
    k0 : float
    theta_deg, phi_deg : (S,)
    amplitude : complex
        Incident amplitude used to normalise sigma.
    """
    th = np.radians(np.asarray(theta_deg, float))
    ph = np.radians(np.asarray(phi_deg, float))
    if th.size == 0:
        raise ValueError("empty angle grid")
    st, ct, sp_, cp = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
    rhat = np.stack([st * cp, st * sp_, ct], axis=1)
    that = np.stack([ct * cp, ct * sp_, -st], axis=1)
    phat = np.stack([-sp_, cp, np.zeros_like(th)], axis=1)
    phase = np.exp(1j * k0 * (rhat @ points.T)) * weights[None, :]  # (S, P)
    Nv = phase @ J
    Lv = phase @ M
    f = -1j * k0 / (4.0 * math.pi)
    Nt = np.einsum("si,si->s", Nv, that)
    Np = np.einsum("si,si->s", Nv, phat)
    Lt = np.einsum("si,si->s", Lv, that)
    Lp = np.einsum("si,si->s", Lv, phat)
    Et = f * (Nt + Lp)
    Ep = f * (Np - Lt)
    sigma = 4.0 * math.pi * (np.abs(Et) ** 2 + np.abs(Ep) ** 2) / abs(amplitude) ** 2
    return FarField(np.degrees(th), np.degrees(ph), Et, Ep, sigma)


def rcs(skeleton, J, M, k0, theta_deg=None, phi_deg=0.0, amplitude=1.0, degree=4) -> FarField:
    """Bistatic RCS of the RWG currents ``J``, ``M`` (phase centre at the origin)."""
    th, ph = angle_grid(theta_deg, phi_deg)
    r, w, Jq = surface_currents_at(skeleton, J, degree)
    _, _, Mq = surface_currents_at(skeleton, M, degree)
    return far_field(r, w, Jq, Mq, k0, th, ph, amplitude)


def error_sigma(sigma, sigma_ref) -> float:
    """Relative L2 error ``||sigma - sigma_ref|| / ||sigma_ref||`` on linear RCS."""
    s = np.asarray(sigma, float)
    ref = np.asarray(sigma_ref, float)
    if s.shape != ref.shape:
        raise ValueError("sigma and sigma_ref must be sampled on the same grid")
    den = np.sqrt(np.sum(ref**2))
    if den == 0:
        raise ValueError("reference RCS is identically zero")
    return float(np.sqrt(np.sum((s - ref) ** 2)) / den)


def trace_error(skeleton, coeffs, exact, degree=4, kind="J"):
    """Relative error of RWG coefficients against the interpolant of a trace.

    ``exact(r, n)`` returns the exact tangential field at points ``r`` with
    unit normals ``n``.  The error is measured in the RWG Gram norm:
    ``sqrt(e^H G e / x^H G x)`` with ``x`` the interpolant coefficients.
    """
    from .bi import surface_grams

    x = rwg_interpolant(skeleton, exact)
    G, _ = surface_grams(skeleton)
    e = np.asarray(coeffs) - x
    return float(np.sqrt(np.real(np.vdot(e, G @ e)) / np.real(np.vdot(x, G @ x))))


def incident_trace_error(skeleton, J, M, wave: PlaneWave) -> float:
    """Joint error of ``(J, M)`` against the incident traces ``n x H``, ``-n x E``.

    For a scatterer with free-space material these are the exact currents.
    """
    from .bi import surface_grams

    G, _ = surface_grams(skeleton)
    xJ = rwg_interpolant(skeleton, lambda r, n: np.cross(n, incident_fields(wave, r)[1]))
    xM = rwg_interpolant(skeleton, lambda r, n: -np.cross(n, incident_fields(wave, r)[0]))
    eJ, eM = np.asarray(J) - xJ, np.asarray(M) - xM
    num = np.vdot(eJ, G @ eJ) + np.vdot(eM, G @ eM)
    den = np.vdot(xJ, G @ xJ) + np.vdot(xM, G @ xM)
    return float(np.sqrt(num.real / den.real))


def rwg_interpolant(skeleton, exact, points=4):
    """RWG coefficients ``(1/l) int_edge f . u dl`` of a tangential field.

    ``u`` is the unit in-plane normal of the edge pointing from the plus to
    the minus triangle; the edge integral uses Gauss-Legendre points.
    """
    V = skeleton.mesh.vertices
    e = skeleton.rwg_edges
    g_plus = skeleton.gamma_faces[skeleton.rwg_faces[:, 0]]
    free = skeleton.faces[g_plus, skeleton.rwg_free[:, 0]]
    a, b = V[e[:, 0]], V[e[:, 1]]
    xs, ws = np.polynomial.legendre.leggauss(points)
    s = 0.5 * (xs + 1.0)
    pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    # in-plane normal away from the plus free vertex, using the plus face normal
    n_plus = skeleton.face_normal[g_plus]
    t = (b - a) / np.linalg.norm(b - a, axis=1)[:, None]
    u = np.cross(t, n_plus)
    flip = np.einsum("ij,ij->i", u, a - V[free]) < 0
    u[flip] *= -1.0
    # average the field from both faces (normals differ on curved surfaces)
    g_minus = skeleton.gamma_faces[skeleton.rwg_faces[:, 1]]
    n_minus = skeleton.face_normal[g_minus]
    fp = exact(pts.reshape(-1, 3), np.repeat(n_plus, points, axis=0)).reshape(pts.shape)
    fm = exact(pts.reshape(-1, 3), np.repeat(n_minus, points, axis=0)).reshape(pts.shape)
    # minus side in-plane normal, continuing across the edge
    u_m = np.cross(t, n_minus)
    u_m *= np.sign(np.einsum("ij,ij->i", u_m, u))[:, None]
    val = 0.5 * (np.einsum("q,eqi,ei->e", 0.5 * ws, fp, u) + np.einsum("q,eqi,ei->e", 0.5 * ws, fm, u_m))
    return val
