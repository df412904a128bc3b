"""Bound on the distance of two measures on an interval through their Stieltjes transforms.

``nu_1`` is the density of states, ``nu_2`` the empirical eigenvalue measure. The
bound is evaluated with unit constant; the left side is reported next to it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from ..dos import DosCurve
from ..profile import VarianceProfile
from ..qve import SolverConfig, solve_many

_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass
class MeasureDistance:
    lhs: float
    bound: float
    boundary_left: float
    boundary_right: float
    j1: float
    j2: float
    j3: float

    @property
    def holds(self) -> bool:
        return self.bound >= self.lhs

    def to_dict(self) -> dict:
        out = asdict(self)
        out["holds"] = self.holds
        return out


def _panels(a: float, b: float, width: float) -> tuple[np.ndarray, np.ndarray]:
    """Composite 8-point Gauss-Legendre nodes and weights on ``[a, b]``."""
    k = max(1, int(np.ceil((b - a) / width)))
    edges = np.linspace(a, b, k + 1)
    half = np.diff(edges)[:, None] / 2
    mid = (edges[:-1] + edges[1:])[:, None] / 2
    return (mid + half * _NODES).ravel(), (half * _WEIGHTS).ravel()


def _log_panels(lo: float, hi: float, per_decade: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for ``int_lo^hi f(eta) d eta`` after ``eta = e^s``."""
    s, w = _panels(np.log(lo), np.log(hi), np.log(10) / per_decade)
    eta = np.exp(s)
    return eta, w * eta


def empirical_stieltjes(eigenvalues: np.ndarray, z: np.ndarray) -> np.ndarray:
    """``(1/N) sum_i 1/(lambda_i - z)`` for every entry of ``z``."""
    lam = np.asarray(eigenvalues, dtype=float)
    z = np.asarray(z, dtype=complex)
    flat = z.ravel()
    out = np.empty(flat.shape, dtype=complex)
    step = max(1, 2_000_000 // max(lam.size, 1))
    for i in range(0, flat.size, step):
        out[i:i + step] = np.mean(1.0 / (lam[None, :] - flat[i:i + step, None]), axis=1)
    return out.reshape(z.shape)


def piecewise_linear_stieltjes(dos: DosCurve, z: np.ndarray) -> np.ndarray:
    """Exact Stieltjes transform of the normalized linear interpolant of ``dos``."""
    t, r = dos._clean()
    mass = float(np.sum(np.diff(t) * (r[1:] + r[:-1]) / 2))
    z = np.asarray(z, dtype=complex)
    flat = z.ravel()
    t0, t1, r0 = t[:-1], t[1:], r[:-1]
    h = t1 - t0
    slope = np.diff(r) / h
    out = np.empty(flat.shape, dtype=complex)
    step = max(1, 2_000_000 // t.size)
    for i in range(0, flat.size, step):
        zz = flat[i:i + step, None]
        logs = np.log(t1 - zz) - np.log(t0 - zz)
        seg = r0 * logs + slope * (h + (zz - t0) * logs)
        out[i:i + step] = seg.sum(axis=1) / mass
    return out.reshape(z.shape)


def profile_stieltjes(profile: VarianceProfile, config: SolverConfig | None = None) -> Callable:
    """``z -> <m(z)>`` from the QVE of ``profile``."""

    def f(z):
        z = np.asarray(z, dtype=complex)
        return solve_many(profile, z.ravel(), config).mean.reshape(z.shape)

    return f


def stieltjes_measure_distance(
    eigenvalues,
    dos: DosCurve,
    interval: tuple[float, float],
    eta1: float,
    eta2: float,
    eps: float,
    stieltjes: Callable | VarianceProfile | None = None,
) -> MeasureDistance:
    """Compare ``|nu_1([t1, t2]) - nu_2([t1, t2])|`` with
    ``nu_1([t1 - eta1, t1]) + nu_1([t2, t2 + eta2]) + J1 + J2 + J3``.

    ``stieltjes`` gives ``m_{nu_1}``: a vectorized callable, a profile (solved through
    the QVE), or ``None`` for the exact transform of the interpolated ``dos``.
    Inner ``eta`` integrals use Gauss-Legendre panels in ``log eta``; ``omega``
    integrals use panels no wider than half the smallest ``eta`` in play.
    """
    t1, t2 = map(float, interval)
    if not t1 < t2:
        raise ValueError("interval endpoints must satisfy tau1 < tau2")
    for name, v in (("eta1", eta1), ("eta2", eta2), ("eps", eps)):
        if not 0 < v <= 1:
            raise ValueError(f"{name} must lie in (0, 1]")
    if eps < max(eta1, eta2):
        raise ValueError("eps must be at least max(eta1, eta2)")
    if stieltjes is None:
        m1 = lambda z: piecewise_linear_stieltjes(dos, z)  # noqa: E731
    elif isinstance(stieltjes, VarianceProfile):
        m1 = profile_stieltjes(stieltjes)
    else:
        m1 = stieltjes
    lam = np.sort(np.asarray(eigenvalues, dtype=float))
    n = lam.size

    def diff(z):
        return np.abs(m1(z) - empirical_stieltjes(lam, z))

    def side(a: float, b: float, eta: float) -> float:
        om, wo = _panels(a, b, eta / 2)
        first = om + 1j * eta
        vals = np.imag(m1(first)) + diff(first)
        if 2 * eps > eta:
            et, we = _log_panels(eta, 2 * eps)
            inner = diff(om[:, None] + 1j * et[None, :]) @ we / eta
        else:
            inner = 0.0
        return float(wo @ (vals + inner))

    j1 = side(t1 - eta1, t1, eta1)
    j2 = side(t2, t2 + eta2, eta2)
    om, wo = _panels(t1 - eta1, t2 + eta2, eps / 2)
    et, we = _panels(eps, 2 * eps, eps)
    j3 = float(wo @ (diff(om[:, None] + 1j * et[None, :]) @ we) / eps)
    f = lambda x: float(dos.cdf(x))  # noqa: E731
    b_left = f(t1) - f(t1 - eta1)
    b_right = f(t2 + eta2) - f(t2)
    count = int(np.searchsorted(lam, t2, side="right") - np.searchsorted(lam, t1, side="left"))
    lhs = abs(f(t2) - f(t1) - count / n)
    return MeasureDistance(lhs, b_left + b_right + j1 + j2 + j3, b_left, b_right, j1, j2, j3)
