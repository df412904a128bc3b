from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

DEFAULT_C = 10.0
DEFAULT_ALPHA = 0.05


@dataclass(frozen=True)
class Verdict:
    """``observed <= C * bound`` must hold for at least a ``1 - alpha`` fraction."""

    fraction: float
    required: float
    count: int
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def calibrated(observed, bound, c: float = DEFAULT_C, alpha: float = DEFAULT_ALPHA) -> Verdict:
    observed = np.asarray(observed, dtype=float).ravel()
    bound = np.broadcast_to(np.asarray(bound, dtype=float), observed.shape).ravel()
    if observed.size == 0:
        return Verdict(float("nan"), 1 - alpha, 0, False)
    ok = observed <= c * bound
    frac = float(ok.mean())
    return Verdict(frac, 1 - alpha, int(observed.size), bool(frac >= 1 - alpha))


def fraction_passing(flags, required: float) -> Verdict:
    flags = np.asarray(flags, dtype=bool).ravel()
    frac = float(flags.mean()) if flags.size else float("nan")
    return Verdict(frac, required, int(flags.size), bool(flags.size and frac >= required))
