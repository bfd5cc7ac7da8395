"""Mie series for a PEC sphere with one concentric dielectric coating.

The modal coefficients follow the homogeneous-sphere expressions with the
interior Riccati-Bessel function replaced by the combination that meets
the PEC condition at the core:

    u_TM(r) = psi(r) - psi'(ra) / chi'(ra) chi(r)     (electric modes, a_n)
    u_TE(r) = psi(r) - psi(ra)  / chi(ra)  chi(r)     (magnetic modes, b_n)

with ``ra = m k0 a``.  Coefficients are computed in the exp(-iwt) form
(``m = conj(sqrt(eps_r))`` for the exp(jwt) permittivity used elsewhere);
cross sections are convention independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import spherical_jn, spherical_yn

from .physics import wavenumber

REL_TOL = 1e-10


class MieError(RuntimeError):
    """The series did not meet the truncation criterion."""


@dataclass
class MieSolution:
    """Reference bistatic RCS in the E-plane (phi = 0).

    ``sigma`` is linear (m^2) on ``theta_deg``; ``a_n``, ``b_n`` are the
    modal coefficients for ``n = 1..n_terms``.
    """

    pec_radius: float
    outer_radius: float
    eps_r: complex
    frequency: float
    n_terms: int
    a_n: np.ndarray
    b_n: np.ndarray
    theta_deg: np.ndarray
    sigma: np.ndarray
    s2: np.ndarray = field(repr=False, default=None)

    @property
    def sigma_dbsm(self):
        with np.errstate(divide="ignore"):
            return 10.0 * np.log10(self.sigma)

    @property
    def c_sca(self) -> float:
        """Total scattering cross section (m^2)."""
        k = wavenumber(self.frequency)
        n = np.arange(1, self.n_terms + 1)
        return float(2 * math.pi / k**2 * np.sum((2 * n + 1) * (abs(self.a_n) ** 2 + abs(self.b_n) ** 2)))


def _riccati(n, z):
    """psi, psi', chi, chi' of orders ``n`` (array) at ``z``; chi = -z y_n(z)."""
    j, dj = spherical_jn(n, z), spherical_jn(n, z, derivative=True)
    y, dy = spherical_yn(n, z), spherical_yn(n, z, derivative=True)
    return z * j, j + z * dj, -z * y, -(y + z * dy)


def coefficients(a, b, eps_r, k0, n_terms):
    """Modal coefficients ``(a_n, b_n)`` for ``n = 1..n_terms``."""
    n = np.arange(1, n_terms + 1)
    x = k0 * b
    psi, dpsi, chi, dchi = _riccati(n, x)
    xi, dxi = psi - 1j * chi, dpsi - 1j * dchi
    if b == a:
        return dpsi / dxi, psi / xi
    m = np.conj(np.sqrt(complex(eps_r)))
    pa, dpa, ca, dca = _riccati(n, m * k0 * a)
    pb, dpb, cb, dcb = _riccati(n, m * x)
    c_tm = dpa / dca
    c_te = pa / ca
    u_tm, du_tm = pb - c_tm * cb, dpb - c_tm * dcb
    u_te, du_te = pb - c_te * cb, dpb - c_te * dcb
    an = (m * u_tm * dpsi - psi * du_tm) / (m * u_tm * dxi - xi * du_tm)
    bn = (u_te * dpsi - m * psi * du_te) / (u_te * dxi - m * xi * du_te)
    return an, bn


def _angular(n_terms, mu):
    """pi_n and tau_n, each (n_terms, len(mu))."""
    pi = np.zeros((n_terms + 1, len(mu)))
    tau = np.zeros_like(pi)
    pi[1] = 1.0
    tau[1] = mu
    for n in range(2, n_terms + 1):
        pi[n] = (2 * n - 1) / (n - 1) * mu * pi[n - 1] - n / (n - 1) * pi[n - 2]
        tau[n] = n * mu * pi[n] - (n + 1) * pi[n - 1]
    return pi[1:], tau[1:]


def _s2_terms(an, bn, theta):
    n = np.arange(1, len(an) + 1)
    pi, tau = _angular(len(an), np.cos(theta))
    c = ((2 * n + 1) / (n * (n + 1)))[:, None]
    return c * (an[:, None] * tau + bn[:, None] * pi)


def mie_coated_pec_sphere(a, b=None, eps_r=1.0, frequency=3e8, theta_deg=None,
                          n_terms=None) -> MieSolution:
    """E-plane bistatic RCS of a coated PEC sphere under a unit plane wave.

    Parameters
    ----------
    a : float
        PEC core radius (m).
    b : float, optional
        Outer radius of the coating; ``None`` or ``a`` means a bare PEC sphere.
    eps_r : complex
        Coating permittivity (exp(jwt) convention, ``Im <= 0``).
    frequency : float
    theta_deg : array_like, optional
        Defaults to 0..180 degrees in 1 degree steps.
    n_terms : int, optional
        Force a truncation order (skips the automatic extension).

    Raises
    ------
    MieError
        If the last retained term is not below ``1e-10`` of the partial sum.
    """
    b = a if b is None else b
    if not 0 < a <= b:
        raise ValueError("need 0 < a <= b")
    th = np.arange(181.0) if theta_deg is None else np.asarray(theta_deg, dtype=float)
    k0 = wavenumber(frequency)
    x = k0 * b
    fixed = n_terms is not None
    N = int(n_terms) if fixed else int(math.ceil(x + 4.0 * x ** (1.0 / 3.0) + 4.0))
    theta = np.radians(th)
    cap = 4 * N + 60
    while True:
        an, bn = coefficients(a, b, eps_r, k0, N)
        terms = _s2_terms(an, bn, theta)
        s2 = terms.sum(axis=0)
        ratio = np.abs(terms[-1]) / np.maximum(np.abs(s2), 1e-300)
        if not (np.isfinite(an).all() and np.isfinite(bn).all()):
            raise MieError(f"non-finite modal coefficients at N={N}")
        if ratio.max() <= REL_TOL or fixed:
            break
        if N >= cap:
            raise MieError(f"series not converged at N={N}: max |last|/|sum| = {ratio.max():.3e}, "
                           f"|a_N|={abs(an[-1]):.3e}, |b_N|={abs(bn[-1]):.3e}")
        N += 1
    sigma = 4.0 * math.pi * np.abs(s2) ** 2 / k0**2
    return MieSolution(a, b, complex(eps_r), frequency, N, an, bn, th, sigma, s2)
