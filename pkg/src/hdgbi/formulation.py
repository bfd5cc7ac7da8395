"""Coefficients that define the coupled HDG/boundary-integral formulation.

Fields are normalised so that ``E`` and ``eta0 * H`` share units, the time
convention is ``exp(jwt)`` and the equivalent currents are ``J = n x H`` and
``M = -n x E`` with ``n`` pointing out of the computational domain.

With these conventions the combined field equations obtained from the
EFIE/MFIE pair with weight ``alpha`` read

    (1-a)/2 J + a/2 n x M - Ca J - Cb M = a E_t + (1-a) n x H    (tested with j)
    (1-a)/2 M - a/2 n x J - Ca M + Cb J = a H_t - (1-a) n x E    (tested with m)

with ``Ca = a L + (1-a) n x K`` and ``Cb = (1-a) n x L - a K``; for the
default ``a = 1/2`` one has ``Cb = n x Ca``.  The equations are
closed by adding multiples of the discrete trace relation
``J - n x Lambda = 0``.  The weights of that stabilisation (``beta`` on the
J-equation, ``gamma`` on the rotated relation in the M-equation) determine
the identity terms below.  ``doubled_identity()`` builds the variant with
full-jump identity weights and the opposite M flux sign; it is kept only as
a negative control for the consistency tests.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Formulation:
    """Scalar weights of the coupled system.

    Attributes
    ----------
    alpha : float
        EFIE/MFIE combination weight.
    tau : float
        HDG stabilisation parameter.
    beta, gamma : float
        Weights of ``J - n x Lambda`` added to the J-equation and of its
        rotation ``n x J + Lambda`` added to the M-equation.
    id_jj, id_jm, id_mj, id_mm : float
        Identity coefficients of ``<j, J>``, ``<j, n x M>``, ``<m, n x J>``
        and ``<m, M>``.  Derived from ``alpha``, ``beta`` and ``gamma`` when
        left unset.
    m_flux_sign : float
        Sign of the ``<eta, M>`` term in the radiating-face flux condition.
    """

    alpha: float = 0.5
    tau: float = 1.0
    beta: float = 0.5
    gamma: float = 0.5
    id_jj: float | None = None
    id_jm: float | None = None
    id_mj: float | None = None
    id_mm: float | None = None
    m_flux_sign: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        a = self.alpha
        derived = {"id_jj": 0.5 * (1 - a) + self.beta, "id_jm": 0.5 * a,
                   "id_mj": self.gamma - 0.5 * a, "id_mm": 0.5 * (1 - a)}
        for name, val in derived.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, val)

    @classmethod
    def consistent(cls, alpha=0.5, tau=1.0, beta=0.5, gamma=0.5) -> "Formulation":
        """Weights derived from the half-jump EFIE/MFIE combination."""
        return cls(alpha=alpha, tau=tau, beta=beta, gamma=gamma)

    @classmethod
    def doubled_identity(cls, alpha=0.5, tau=1.0) -> "Formulation":
        """Full-jump identity weights and a negative M flux term."""
        return cls(alpha=alpha, tau=tau, beta=0.5, gamma=0.5,
                   id_jj=1.0, id_jm=0.5, id_mj=0.0, id_mm=0.5, m_flux_sign=-1.0)
