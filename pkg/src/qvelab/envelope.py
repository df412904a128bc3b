"""Error envelope near minima of the density of states.

Near a point ``tau0`` of the minima set, with ``z = tau0 + theta*omega + i*eta``, the
averaged local-law error is controlled by the unique positive root ``E`` of

    E^3 + pi2 E^2 + pi1 E = N^{8 eps} E/(N eta) + rho_t/(N eta) + 1/(N eta)^2

whose coefficients are explicit surrogates for the density and the stability
coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .dos import INTERNAL_MINIMUM, DosCurve, SupportStructure, local_gap_size


class EnvelopeDomainError(ValueError):
    pass


def envelope_cubic_root(rho_t: float, pi1: float, pi2: float, n_eta: float, tech_factor: float = 1.0) -> float:
    """Unique positive root of ``E^3 + pi2 E^2 + (pi1 - tech/(N eta)) E - (rho_t/(N eta) + 1/(N eta)^2)``.

    The coefficient signs are ``+, +, ?, -`` so Descartes' rule gives exactly one
    positive root; both the sign pattern and the bracket are asserted.
    """
    if not (rho_t >= 0 and pi1 >= 0 and pi2 >= 0 and n_eta > 0 and tech_factor >= 0):
        raise EnvelopeDomainError("coefficients must be nonnegative and N*eta positive")
    c1 = pi1 - tech_factor / n_eta
    c0 = -(rho_t / n_eta + 1.0 / n_eta**2)
    signs = np.sign([1.0, pi2, c1, c0])
    signs = signs[signs != 0]
    assert np.count_nonzero(np.diff(signs)) == 1, "cubic must have exactly one sign change"

    def f(e):
        return ((e + pi2) * e + c1) * e + c0

    upper = 1.0 + max(pi2, abs(c1), abs(c0))
    assert f(0.0) < 0 < f(upper), "root bracket lost"
    return float(optimize.brentq(f, 0.0, upper, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500))


@dataclass(frozen=True)
class ErrorEnvelope:
    """Envelope anchored at ``tau0``; ``kind`` is an edge kind or ``internal-minimum``.

    ``delta_gap`` is the length of the adjacent gap (1 for an extreme edge).
    """

    tau0: float
    theta: int
    kind: str
    delta_gap: float
    rho_at_min: float
    n_dim: int
    gamma: float = 0.1
    eps_tilde: float | None = None
    delta_star: float = 0.05
    c_star: float = 0.25

    def __post_init__(self) -> None:
        if self.eps_tilde is None:
            object.__setattr__(self, "eps_tilde", self.gamma / 20)
        if not 0 < self.eps_tilde < self.gamma / 16:
            raise EnvelopeDomainError(f"eps_tilde must lie in (0, gamma/16), got {self.eps_tilde}")

    @property
    def is_edge(self) -> bool:
        return self.kind != INTERNAL_MINIMUM

    @property
    def omega_range(self) -> tuple[float, float]:
        if self.is_edge:
            return (-self.delta_star, self.delta_gap / 2)
        return (-self.delta_star, self.delta_star)

    def coefficients(self, omega: float, eta: float) -> tuple[float, float, float]:
        """``(rho_t, pi1, pi2)`` at ``(omega, eta)``."""
        lo, hi = self.omega_range
        if not lo <= omega <= hi:
            raise EnvelopeDomainError(f"omega={omega:g} outside [{lo:g}, {hi:g}]")
        if not eta > 0:
            raise EnvelopeDomainError("eta must be positive")
        w = abs(omega)
        if not self.is_edge:
            r0 = self.rho_at_min
            c = (w + eta) ** (1 / 3)
            return r0 + c, r0 * r0 + c * c, r0 + c
        gap = self.delta_gap
        if omega <= 0:
            return (
                (w + eta) ** 0.5 / (gap + w + eta) ** (1 / 6),
                (w + eta) ** 0.5 * (w + eta + gap) ** (1 / 6),
                (w + eta + gap) ** (1 / 3),
            )
        if omega <= self.c_star * gap:
            return (
                eta / ((gap + eta) ** (1 / 6) * (omega + eta) ** 0.5),
                (omega + eta) ** 0.5 * (gap + eta) ** (1 / 6),
                (gap + eta) ** (1 / 3),
            )
        return (eta / (gap + eta) ** (2 / 3), (gap + eta) ** (2 / 3), (gap + eta) ** (1 / 3))

    def __call__(self, omega: float, eta: float) -> float:
        rho_t, pi1, pi2 = self.coefficients(omega, eta)
        tech = self.n_dim ** (8 * self.eps_tilde)
        return envelope_cubic_root(rho_t, pi1, pi2, self.n_dim * eta, tech)

    def evaluate(self, omega, eta) -> np.ndarray:
        """Vectorized :meth:`__call__` with broadcasting."""
        o, e = np.broadcast_arrays(np.asarray(omega, dtype=float), np.asarray(eta, dtype=float))
        return np.array([self(a, b) for a, b in zip(o.ravel(), e.ravel())]).reshape(o.shape)

    def spectral_point(self, omega: float, eta: float) -> complex:
        return complex(self.tau0 + self.theta * omega, eta)


def error_envelope(
    support: SupportStructure,
    dos: DosCurve | None,
    tau0: float,
    n_dim: int,
    gamma: float = 0.1,
    eps_tilde: float | None = None,
    *,
    rho_at_min: float | None = None,
    tol: float = 1e-9,
) -> ErrorEnvelope:
    """Envelope at the point of ``support.minima`` equal to ``tau0`` (within ``tol``)."""
    if not support.minima:
        raise EnvelopeDomainError("support structure has no minima")
    best = min(support.minima, key=lambda m: abs(m.tau - tau0))
    if abs(best.tau - tau0) > tol:
        raise EnvelopeDomainError(f"tau0={tau0:g} is not a point of the minima set")
    if best.kind == INTERNAL_MINIMUM:
        gap = 0.0
        if rho_at_min is None:
            rho_at_min = float(dos.rho_at(best.tau)) if dos is not None else best.rho
    else:
        gap = local_gap_size(support, best.tau, 0.0)
        rho_at_min = 0.0
    return ErrorEnvelope(
        best.tau, best.theta, best.kind, gap, float(rho_at_min), n_dim, gamma, eps_tilde,
        support.delta_star, support.c_star,
    )
