"""Resolvent-level checks: entrywise and averaged local law, the perturbation vector
``d`` of the perturbed QVE, and the anisotropic law for probe vectors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..dos import averaged_law_bound, local_law_bound
from ..profile import VarianceProfile
from ..qve import QveSolution, SpectralPoint
from ..sampler import MatrixSample
from ._common import DEFAULT_ALPHA, DEFAULT_C, Verdict, calibrated

MIN_ETA = 1e-14
CROSS_CHECK_MAX_N = 256


@dataclass
class ResolventData:
    z: SpectralPoint
    g: np.ndarray
    err_d: float
    err_o: float
    avg_err: list[float]
    ward_error: float
    matrix: np.ndarray | None = field(default=None, repr=False)


def _as_m(m, n: int) -> np.ndarray:
    arr = m.m if isinstance(m, QveSolution) else np.asarray(m, dtype=complex)
    if arr.shape != (n,):
        raise ValueError("solution has the wrong dimension")
    return arr


def _spectral_resolvent(sample: MatrixSample, z: complex) -> np.ndarray:
    lam, u = sample.eigenvalues, sample.eigenvectors
    w = 1.0 / (lam - z)
    if np.isrealobj(u):
        return (u * w.real) @ u.T + 1j * ((u * w.imag) @ u.T)
    return (u * w) @ u.conj().T


def ward_error(g: np.ndarray, eta: float) -> float:
    """Max relative deviation from ``sum_j |G_ij|^2 = Im G_ii / eta``."""
    lhs = np.einsum("ij,ij->i", g.real, g.real) + np.einsum("ij,ij->i", g.imag, g.imag)
    rhs = np.diag(g).imag / eta
    return float(np.max(np.abs(lhs - rhs) / np.abs(rhs)))


def default_weights(n: int, seed: int = 0) -> list[np.ndarray]:
    """All-ones, alternating signs and one random sign vector."""
    rng = np.random.default_rng(seed)
    return [np.ones(n), (-1.0) ** np.arange(n), rng.choice([-1.0, 1.0], size=n)]


def resolvent(
    sample: MatrixSample,
    z: SpectralPoint | complex,
    m: QveSolution | np.ndarray,
    weights: Sequence[np.ndarray] | None = None,
    keep_matrix: bool = True,
) -> ResolventData:
    """``G(z) = U diag(1/(lambda - z)) U*`` with the entrywise and averaged errors
    against the QVE solution ``m``."""
    z = z if isinstance(z, SpectralPoint) else SpectralPoint.from_complex(z)
    if z.eta < MIN_ETA:
        raise ValueError(f"eta={z.eta:g} below {MIN_ETA:g}: resolvent too ill-conditioned")
    n = sample.n
    mvec = _as_m(m, n)
    g = _spectral_resolvent(sample, z.z)
    diag = np.diag(g).copy()
    err_d = float(np.max(np.abs(diag - mvec)))
    off = np.abs(g)
    np.fill_diagonal(off, 0.0)
    err_o = float(off.max())
    ws = default_weights(n) if weights is None else [np.asarray(w) for w in weights]
    for w in ws:
        if np.max(np.abs(w)) > 1 + 1e-12:
            raise ValueError("weights must satisfy max |w_i| <= 1")
    avg = [float(abs(np.mean(np.conj(w) * (diag - mvec)))) for w in ws]
    return ResolventData(z, diag, err_d, err_o, avg, ward_error(g, z.eta), g if keep_matrix else None)


@dataclass
class PerturbationVector:
    d: np.ndarray
    d_minors: np.ndarray | None
    agreement: float | None
    norm_inf: float
    bound: float
    bound_density: float


def _d_from_minors(h: np.ndarray, g: np.ndarray, s: np.ndarray) -> np.ndarray:
    """``d_k`` from the Schur-complement expansion, with minors
    ``G^(k)_ij = G_ij - G_ik G_kj / G_kk`` taken from the full resolvent."""
    n = h.shape[0]
    d = np.empty(n, dtype=complex)
    for k in range(n):
        gkk = g[k, k]
        col, row = g[:, k].copy(), g[k, :].copy()
        a = h[k, :].copy()  # h_ki
        b = h[:, k].copy()  # h_jk
        a[k] = b[k] = 0.0
        col[k] = row[k] = 0.0
        # sum_{i,j != k} a_i G^(k)_ij b_j
        quad = a @ g @ b - (a @ col) * (row @ b) / gkk
        minor_diag = np.diag(g) - col * row / gkk
        minor_diag[k] = 0.0
        quad_offdiag = quad - np.sum(a * minor_diag * b)
        sk = s[k].copy()
        sk[k] = 0.0
        term2 = np.sum((np.abs(a) ** 2 - sk) * minor_diag)
        term3 = np.sum(sk * col * row) / gkk
        d[k] = quad_offdiag + term2 - term3 - h[k, k] - s[k, k] * gkk
    return d


def perturbation_d(
    sample: MatrixSample,
    z: SpectralPoint | complex,
    res: ResolventData,
    profile: VarianceProfile,
    cross_check: bool | None = None,
) -> PerturbationVector:
    """``d = -1/g - z - S g`` with ``g = diag G``; for small ``N`` (or on request) also
    the Schur-complement expansion through minors and its relative agreement."""
    z = z if isinstance(z, SpectralPoint) else SpectralPoint.from_complex(z)
    g = res.g
    if np.any(g == 0):
        raise ValueError("resolvent diagonal has a zero entry")
    d = -1.0 / g - z.z - profile.s @ g
    n = sample.n
    if cross_check is None:
        cross_check = n <= CROSS_CHECK_MAX_N
    d2 = agree = None
    if cross_check:
        if res.matrix is None:
            raise ValueError("cross check needs the full resolvent matrix")
        d2 = _d_from_minors(sample.h, res.matrix, profile.s)
        agree = float(np.max(np.abs(d - d2)) / max(np.max(np.abs(d)), 1e-300))
    ne = n * z.eta
    bound = float(np.sqrt(np.mean(g.imag) / ne) + 1 / np.sqrt(n))
    rho = float(np.mean(g.imag) / np.pi)
    bound_rho = float(np.sqrt(rho / ne) + 1 / np.sqrt(n))
    return PerturbationVector(d, d2, agree, float(np.max(np.abs(d))), bound, bound_rho)


@dataclass
class AnisotropicReport:
    errors: np.ndarray
    bound: float
    verdict: Verdict
    c: float


def anisotropic_errors(sample: MatrixSample, m: np.ndarray, z: complex, pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """``|<w, G v> - sum_i m_i conj(w_i) v_i|`` for each probe pair."""
    lam, u = sample.eigenvalues, sample.eigenvectors
    wgt = 1.0 / (lam - z)
    out = []
    for w, v in pairs:
        a = u.conj().T @ w
        b = u.conj().T @ v
        val = np.sum(np.conj(a) * wgt * b) - np.sum(m * np.conj(w) * v)
        out.append(abs(val))
    return np.asarray(out)


def random_probe_pairs(n: int, count: int, seed: int = 0, orthogonal: bool = True) -> list[tuple[np.ndarray, np.ndarray]]:
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(count):
        w = rng.standard_normal(n)
        w /= np.linalg.norm(w)
        v = rng.standard_normal(n)
        if orthogonal:
            v -= (w @ v) * w
        v /= np.linalg.norm(v)
        pairs.append((w, v))
    return pairs


def anisotropic_check(
    samples: Sequence[MatrixSample],
    m: QveSolution,
    pairs: Sequence[tuple[np.ndarray, np.ndarray]],
    kappa_value: float,
    c: float = DEFAULT_C,
    alpha: float = DEFAULT_ALPHA,
) -> AnisotropicReport:
    """Probe-pair errors against ``C (sqrt(rho/(N eta)) + 1/(N eta) + min(1/sqrt(N eta), kappa/(N eta)))``."""
    for w, v in pairs:
        if not (np.isclose(np.linalg.norm(w), 1) and np.isclose(np.linalg.norm(v), 1)):
            raise ValueError("probe vectors must be l2-normalized")
    z = m.z
    n = samples[0].n
    bound = local_law_bound(m.density, n, z.eta, kappa_value)
    errs = np.concatenate([anisotropic_errors(s, m.m, z.z, pairs) for s in samples])
    return AnisotropicReport(errs, bound, calibrated(errs, bound, c, alpha), c)


@dataclass
class LocalLawReport:
    """Per (sample, z) records of the entrywise and averaged errors and their bounds."""

    records: list[dict]
    entrywise: Verdict
    averaged: Verdict
    ward_max: float

    def to_dict(self) -> dict:
        return {
            "records": self.records,
            "entrywise": self.entrywise.to_dict(),
            "averaged": self.averaged.to_dict(),
            "ward_max": self.ward_max,
        }


def local_law_check(
    samples: Sequence[MatrixSample],
    solutions: Sequence[QveSolution],
    kappas: Sequence[float] | None = None,
    bulk: bool = True,
    c: float = DEFAULT_C,
    alpha: float = DEFAULT_ALPHA,
) -> LocalLawReport:
    """Entrywise and averaged local law over all (sample, z) pairs.

    With ``bulk`` the bounds are ``1/sqrt(N eta)`` (entrywise) and ``1/(N eta)``
    (averaged); otherwise the general bounds with the supplied ``kappas``.
    """
    recs = []
    obs_d, bnd_d, obs_a, bnd_a = [], [], [], []
    ward = 0.0
    for si, smp in enumerate(samples):
        n = smp.n
        for zi, sol in enumerate(solutions):
            z = sol.z
            r = resolvent(smp, z, sol, keep_matrix=False)
            ne = n * z.eta
            if bulk:
                bd, ba = 1 / np.sqrt(ne), 1 / ne
            else:
                k = kappas[zi]
                bd, ba = local_law_bound(sol.density, n, z.eta, k), averaged_law_bound(n, z.eta, k)
            avg = max(r.avg_err)
            recs.append({
                "sample": si, "seed": smp.seed, "tau": z.tau, "eta": z.eta,
                "err_d": r.err_d, "err_o": r.err_o, "avg_err": avg,
                "bound_d": bd, "bound_avg": ba, "ward": r.ward_error,
            })
            obs_d.append(max(r.err_d, r.err_o)); bnd_d.append(bd)
            obs_a.append(avg); bnd_a.append(ba)
            ward = max(ward, r.ward_error)
    return LocalLawReport(recs, calibrated(obs_d, bnd_d, c, alpha), calibrated(obs_a, bnd_a, c, alpha), ward)
