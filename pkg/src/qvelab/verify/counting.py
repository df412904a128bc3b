"""Eigenvalue counting, empty gaps and rigidity against the integrated density of states."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..dos import DosCurve, SupportStructure, local_gap_size
from ..sampler import MatrixSample
from ._common import DEFAULT_ALPHA, DEFAULT_C, Verdict, calibrated, fraction_passing


@dataclass
class CountingReport:
    records: list[dict]
    verdict: Verdict

    def to_dict(self) -> dict:
        return {"records": self.records, "verdict": self.verdict.to_dict()}


def counting_bound(support: SupportStructure, dos: DosCurve, tau: float, n_dim: int, delta: float | None = None) -> float:
    """``min(1/(Delta^{1/3} + rho(tau)), N^{1/5})``."""
    delta = support.delta_star / 2 if delta is None else delta
    gap = local_gap_size(support, tau, delta)
    denom = gap ** (1 / 3) + float(dos.rho_at(tau))
    return float(min(1.0 / denom if denom > 0 else np.inf, n_dim ** 0.2))


def counting_discrepancy(
    samples: Sequence[MatrixSample],
    dos: DosCurve,
    support: SupportStructure,
    tau_grid: Sequence[float],
    c: float = DEFAULT_C,
    alpha: float = DEFAULT_ALPHA,
    delta: float | None = None,
) -> CountingReport:
    """``|#{lambda_i <= tau} - N int_{-inf}^tau rho|`` per sample and ``tau``."""
    recs, obs, bnd = [], [], []
    taus = np.asarray(tau_grid, dtype=float)
    for smp in samples:
        n = smp.n
        lam = smp.eigenvalues
        counts = np.searchsorted(lam, taus, side="right")
        expected = n * dos.cdf(taus)
        for t, cnt, ex in zip(taus, counts, expected):
            b = counting_bound(support, dos, t, n, delta)
            dev = abs(int(cnt) - ex)
            recs.append({"seed": smp.seed, "tau": float(t), "count": int(cnt), "expected": float(ex),
                         "discrepancy": float(dev), "bound": b, "pass": bool(dev <= c * b)})
            obs.append(dev)
            bnd.append(b)
    return CountingReport(recs, calibrated(obs, bnd, c, alpha))


def gap_margins(support: SupportStructure, n_dim: int, gamma: float) -> list[tuple[int, float, float, float]]:
    """Shrunken gaps ``(k, lo, hi, delta_k)`` for ``k = 0..K``; ``k = 0`` and ``k = K``
    are the unbounded regions beyond the extreme edges."""
    iv = support.intervals
    k_count = len(iv)
    outer = n_dim ** (gamma - 2 / 3)
    out = [(0, -np.inf, iv[0][0] - outer, outer)]
    for k in range(1, k_count):
        b, a = iv[k - 1][1], iv[k][0]
        dk = n_dim**gamma / ((a - b) ** (1 / 3) * n_dim ** (2 / 3))
        out.append((k, b + dk, a - dk, dk))
    out.append((k_count, iv[-1][1] + outer, np.inf, outer))
    return out


def rigidity_margins(support: SupportStructure, n_dim: int, gamma: float) -> list[float]:
    """``eps_k`` for ``k = 0..K``."""
    iv = support.intervals
    outer = n_dim ** (gamma - 2 / 3)
    eps = [outer]
    for k in range(1, len(iv)):
        gap = iv[k][0] - iv[k - 1][1]
        eps.append(n_dim**gamma * min(n_dim ** (-3 / 5), 1.0 / (gap ** (1 / 9) * n_dim ** (2 / 3))))
    eps.append(outer)
    return eps


@dataclass
class GapReport:
    records: list[dict]
    internal: Verdict
    outer: Verdict

    def to_dict(self) -> dict:
        return {"records": self.records, "internal": self.internal.to_dict(), "outer": self.outer.to_dict()}


def empty_gap_check(samples: Sequence[MatrixSample], support: SupportStructure, gamma: float = 0.1) -> GapReport:
    """Eigenvalue counts inside every shrunken gap; every sample must show zero.

    Counts come from cached eigenvalues when available, else from matrix inertia.
    """
    recs = []
    inner_ok, outer_ok = [], []
    for smp in samples:
        n = smp.n
        for k, lo, hi, dk in gap_margins(support, n, gamma):
            if hi <= lo:
                continue
            if np.isinf(lo):
                cnt = smp.count_below(hi)
            elif np.isinf(hi):
                cnt = n - smp.count_below(lo) - _count_equal(smp, lo)
            else:
                cnt = smp.count_in(lo, hi)
            outer = k in (0, len(support.intervals))
            recs.append({"seed": smp.seed, "gap": k, "lo": lo, "hi": hi, "delta": dk, "count": int(cnt), "outer": outer})
            (outer_ok if outer else inner_ok).append(cnt == 0)
    return GapReport(recs, fraction_passing(inner_ok, 1.0), fraction_passing(outer_ok, 1.0))


def _count_equal(smp: MatrixSample, x: float) -> int:
    if smp._eigenvalues is not None:
        return int(np.count_nonzero(smp._eigenvalues == x))
    from ..sampler import inertia

    return inertia(smp.h, x)[1]


@dataclass
class RigidityReport:
    records: list[dict]
    skipped: list[dict] = field(default_factory=list)
    gaps: GapReport | None = None

    def verdict(self, regime: str, required: float, tolerance=None) -> Verdict:
        """Fraction of records of ``regime`` that pass, or that satisfy
        ``deviation <= tolerance`` when an explicit absolute tolerance is given."""
        sel = [r for r in self.records if r["regime"] == regime]
        if tolerance is None:
            flags = [r["pass"] for r in sel]
        else:
            flags = [r["deviation"] <= tolerance for r in sel]
        return fraction_passing(flags, required)

    def to_dict(self) -> dict:
        return {
            "records": self.records,
            "skipped": self.skipped,
            "gaps": self.gaps.to_dict() if self.gaps else None,
        }


def classify_tau(support: SupportStructure, tau: float, n_dim: int, gamma: float) -> tuple[str, int]:
    """Regime of ``tau``: ``bulk`` (admissible region), ``extreme-edge``,
    ``internal-edge`` or ``outside``; with the interval/gap index."""
    iv = support.intervals
    eps = rigidity_margins(support, n_dim, gamma)
    k_count = len(iv)
    for k, (a, b) in enumerate(iv):
        if a + eps[k] <= tau <= b - eps[k + 1]:
            return "bulk", k
    if iv[0][0] < tau < iv[0][0] + eps[0] or iv[-1][1] - eps[-1] < tau <= iv[-1][1]:
        return "extreme-edge", 0 if tau < 0.5 * (iv[0][0] + iv[-1][1]) else k_count - 1
    for k in range(1, k_count):
        if iv[k - 1][1] - eps[k] < tau < iv[k][0] + eps[k]:
            return "internal-edge", k
    return "outside", -1


def rigidity_check(
    samples: Sequence[MatrixSample],
    dos: DosCurve,
    support: SupportStructure,
    tau_set: Sequence[float],
    gamma: float = 0.1,
    c: float = DEFAULT_C,
    delta: float | None = None,
    check_gaps: bool = True,
) -> RigidityReport:
    """Per ``tau``, compare ``lambda_{i(tau)}`` with ``tau``.

    Bulk: ``|lambda - tau| <= C min(1/((Delta^{1/3}+rho) rho N), N^{-3/5})``.
    Extreme edge: ``<= C N^{-2/3}``. Internal edge: ``lambda`` must fall in
    ``[beta - 2 eps, beta + delta_k] U [alpha - delta_k, alpha + 2 eps]``.
    ``i(tau)`` is clamped to ``[1, N]``.
    """
    delta = support.delta_star / 2 if delta is None else delta
    recs, skipped = [], []
    for smp in samples:
        n = smp.n
        lam = smp.eigenvalues
        eps = rigidity_margins(support, n, gamma)
        margins = {k: dk for k, _, _, dk in gap_margins(support, n, gamma)}
        idx = dos.classical_index(np.asarray(tau_set, dtype=float), n)
        for tau, i_tau in zip(tau_set, idx):
            regime, k = classify_tau(support, tau, n, gamma)
            if regime == "outside":
                skipped.append({"seed": smp.seed, "tau": float(tau), "note": "outside admissible region"})
                continue
            i_eff = int(min(max(i_tau, 1), n))
            val = float(lam[i_eff - 1])
            dev = abs(val - tau)
            rec = {"seed": smp.seed, "tau": float(tau), "i_tau": int(i_tau), "lambda": val,
                   "deviation": dev, "regime": regime}
            if regime == "bulk":
                rho = float(dos.rho_at(tau))
                gap = local_gap_size(support, tau, delta)
                b = min(1.0 / ((gap ** (1 / 3) + rho) * rho * n) if rho > 0 else np.inf, n ** (-3 / 5))
                rec.update(bound=b, **{"pass": bool(dev <= c * b)})
            elif regime == "extreme-edge":
                b = n ** (-2 / 3)
                rec.update(bound=b, **{"pass": bool(dev <= c * b)})
            else:
                beta, alpha = support.intervals[k - 1][1], support.intervals[k][0]
                ek, dk = eps[k], margins[k]
                inside = (beta - 2 * ek <= val <= beta + dk) or (alpha - dk <= val <= alpha + 2 * ek)
                rec.update(bound=float("nan"), window=[beta - 2 * ek, beta + dk, alpha - dk, alpha + 2 * ek],
                           **{"pass": bool(inside)})
            recs.append(rec)
    gaps = empty_gap_check(samples, support, gamma) if check_gaps else None
    return RigidityReport(recs, skipped, gaps)


def band_quantiles(report: RigidityReport, bands: Sequence[tuple[float, float]], q: float = 0.9) -> list[float]:
    """``q``-quantile of the bulk deviations with ``|tau|`` in each band."""
    out = []
    for lo, hi in bands:
        d = [r["deviation"] for r in report.records if r["regime"] == "bulk" and lo <= abs(r["tau"]) < hi]
        out.append(float(np.quantile(d, q)) if d else float("nan"))
    return out
