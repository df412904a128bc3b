from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..sampler import MatrixSample
from ._common import Verdict, fraction_passing


@dataclass
class DelocalizationReport:
    per_sample: np.ndarray  # sqrt(N) * max_{i,b} |<b, u_i>|
    threshold: float
    verdict: Verdict

    def to_dict(self) -> dict:
        return {"per_sample": self.per_sample.tolist(), "threshold": self.threshold, "verdict": self.verdict.to_dict()}


def random_unit_probes(n: int, count: int, seed: int = 0) -> np.ndarray:
    """``count`` random unit vectors as columns."""
    rng = np.random.default_rng(seed)
    p = rng.standard_normal((n, count))
    return p / np.linalg.norm(p, axis=0)


def max_overlap(sample: MatrixSample, probes: np.ndarray | None = None, basis: bool = True) -> float:
    """``sqrt(N) max_{i,b} |<b, u_i>|`` over the standard basis and the probe columns."""
    u = sample.eigenvectors
    best = float(np.abs(u).max()) if basis else 0.0
    if probes is not None and probes.size:
        best = max(best, float(np.abs(probes.conj().T @ u).max()))
    return np.sqrt(sample.n) * best


def delocalization_check(
    samples: Sequence[MatrixSample],
    probes: np.ndarray | None = None,
    c: float = 3.0,
    required: float = 0.99,
    basis: bool = True,
) -> DelocalizationReport:
    """Every eigenvector must satisfy ``sqrt(N) |<b, u>| <= C log N`` for each probe ``b``
    in at least a ``required`` fraction of samples. Probes are deterministic: the
    standard basis and the fixed columns of ``probes``."""
    if not samples:
        raise ValueError("no samples")
    n = samples[0].n
    vals = np.array([max_overlap(s, probes, basis) for s in samples])
    threshold = c * np.log(n)
    return DelocalizationReport(vals, float(threshold), fraction_passing(vals <= threshold, required))
