"""Bulk gap statistics of a Wigner-type ensemble against its Gaussian reference."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from ..dos import DosCurve, semicircle_dos
from ..sampler import MatrixSample, SymmetryClass, reference_row_sum

BUMP_CENTERS = (0.5, 1.0, 1.5)
BUMP_WIDTH = 0.5


def ks_two_sample(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance ``sup_x |F_a(x) - F_b(x)|``."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    x = np.concatenate([a, b])
    fa = np.searchsorted(a, x, side="right") / a.size
    fb = np.searchsorted(b, x, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def bump(s, center: float, width: float = BUMP_WIDTH) -> np.ndarray:
    """Smooth compactly supported bump ``exp(1 - 1/(1 - u^2))``, ``u = (s - center)/width``."""
    u = (np.asarray(s, dtype=float) - center) / width
    out = np.zeros_like(u)
    inside = np.abs(u) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside] ** 2))
    return out


def _spectrum(sample) -> np.ndarray:
    if isinstance(sample, MatrixSample):
        return sample.eigenvalues
    return np.sort(np.asarray(sample, dtype=float))


def rescaled_gaps(sample, dos: DosCurve, window: tuple[float, float], min_rho: float) -> np.ndarray:
    """``N rho(lambda_i) (lambda_{i+1} - lambda_i)`` for ``lambda_i`` in the window with
    ``rho(lambda_i) >= min_rho``. ``sample`` is a :class:`MatrixSample` or its eigenvalues."""
    lam = _spectrum(sample)
    lo, hi = window
    left = lam[:-1]
    rho = dos.rho_at(left)
    keep = (left >= lo) & (left <= hi) & (rho >= min_rho)
    return lam.size * rho[keep] * np.diff(lam)[keep]


@dataclass
class BumpComparison:
    center: float
    mean_model: float
    mean_reference: float
    stderr: float
    agree: bool


@dataclass
class GapStatistics:
    gaps: np.ndarray = field(repr=False)
    reference_gaps: np.ndarray = field(repr=False)
    ks_distance: float
    ks_scipy: float
    samples: int
    reference_samples: int
    bumps: list[BumpComparison]
    inconclusive: bool = False

    @property
    def counts(self) -> tuple[int, int]:
        return self.gaps.size, self.reference_gaps.size

    def cdf_table(self, points: int = 200) -> np.ndarray:
        """Columns ``(gap, cdf_model, cdf_reference)`` on a uniform gap grid."""
        top = float(np.quantile(np.concatenate([self.gaps, self.reference_gaps]), 0.999))
        g = np.linspace(0.0, top, points)
        fm = np.searchsorted(np.sort(self.gaps), g, side="right") / self.gaps.size
        fr = np.searchsorted(np.sort(self.reference_gaps), g, side="right") / self.reference_gaps.size
        return np.column_stack([g, fm, fr])

    def to_dict(self) -> dict:
        return {
            "ks_distance": self.ks_distance,
            "ks_scipy": self.ks_scipy,
            "gaps": int(self.gaps.size),
            "reference_gaps": int(self.reference_gaps.size),
            "samples": self.samples,
            "reference_samples": self.reference_samples,
            "inconclusive": self.inconclusive,
            "bumps": [b.__dict__ for b in self.bumps],
        }


def _bump_means(pools: Sequence[np.ndarray], center: float) -> np.ndarray:
    return np.array([bump(p, center).mean() for p in pools if p.size])


def gap_statistics(
    samples: Sequence[MatrixSample],
    reference_samples: Sequence[MatrixSample],
    dos: DosCurve,
    window: tuple[float, float],
    min_rho: float,
    reference_dos: DosCurve | None = None,
    min_pool: int = 1000,
    bump_sigmas: float = 3.0,
    symmetry: str | None = None,
) -> GapStatistics:
    """Pool rescaled bulk gaps of both ensembles and compare them.

    The reference pool is rescaled with the semicircle density of the reference
    ensemble unless ``reference_dos`` is given. Bump observables are compared with
    standard errors from per-sample means, since gaps within one sample are correlated.

    Either ensemble may be given as plain eigenvalue arrays (to avoid holding the
    matrices); ``symmetry`` then names the class where the samples cannot.
    """
    if not samples or not reference_samples:
        raise ValueError("both ensembles need samples")
    classes = {s.symmetry for s in (samples[0], reference_samples[0]) if isinstance(s, MatrixSample)}
    if symmetry is not None:
        classes.add(SymmetryClass.parse(symmetry))
    if len(classes) > 1:
        raise ValueError("symmetry classes differ")
    if reference_dos is None:
        if not classes:
            raise ValueError("symmetry class unknown: pass symmetry or reference_dos")
        n_ref = _spectrum(reference_samples[0]).size
        grid = np.linspace(window[0] - 0.1, window[1] + 0.1, 4001)
        reference_dos = semicircle_dos(grid, reference_row_sum(n_ref, classes.pop()))
    pools = [rescaled_gaps(s, dos, window, min_rho) for s in samples]
    ref_pools = [rescaled_gaps(s, reference_dos, window, min_rho) for s in reference_samples]
    gaps = np.concatenate(pools)
    ref = np.concatenate(ref_pools)
    inconclusive = gaps.size < min_pool or ref.size < min_pool
    if gaps.size == 0 or ref.size == 0:
        return GapStatistics(gaps, ref, float("nan"), float("nan"), len(samples), len(reference_samples), [], True)
    ks = ks_two_sample(gaps, ref)
    ks_ref = float(stats.ks_2samp(gaps, ref).statistic)
    bumps = []
    for c in BUMP_CENTERS:
        mm, mr = _bump_means(pools, c), _bump_means(ref_pools, c)
        se = np.sqrt(mm.var(ddof=1) / mm.size + mr.var(ddof=1) / mr.size) if mm.size > 1 and mr.size > 1 else np.inf
        a, b = float(bump(gaps, c).mean()), float(bump(ref, c).mean())
        bumps.append(BumpComparison(c, a, b, float(se), bool(abs(a - b) <= bump_sigmas * se)))
    return GapStatistics(gaps, ref, ks, ks_ref, len(samples), len(reference_samples), bumps, inconclusive)
