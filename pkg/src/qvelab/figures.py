"""Plain CSV tables for plotting.

Columns per kind:

``dos-curve``
    ``tau, rho``
``local-law-scan``
    ``eta, err_d, bound`` at one fixed ``tau`` (one row per sample and ``eta``)
``rigidity-scatter``
    ``tau, lambda, deviation, regime``
``gap-cdf``
    ``gap, cdf_model, cdf_reference``
"""

from __future__ import annotations

import csv
import io

import numpy as np

from .dos import DosCurve
from .verify.counting import RigidityReport
from .verify.local_law import LocalLawReport
from .verify.universality import GapStatistics

FIGURE_KINDS = ("dos-curve", "local-law-scan", "rigidity-scatter", "gap-cdf")
_EXPECTED = {
    "dos-curve": DosCurve,
    "local-law-scan": LocalLawReport,
    "rigidity-scatter": RigidityReport,
    "gap-cdf": GapStatistics,
}


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    x = float(x)
    return repr(x) if np.isfinite(x) else "nan"


def _table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def emit_figure_data(report, kind: str, tau: float | None = None) -> str:
    """CSV text for ``report``. ``tau`` selects the scan line of a local-law report
    (default: the first ``tau`` recorded)."""
    if kind not in _EXPECTED:
        raise ValueError(f"unknown figure kind {kind!r}; expected one of {FIGURE_KINDS}")
    if not isinstance(report, _EXPECTED[kind]):
        raise TypeError(f"{kind} needs a {_EXPECTED[kind].__name__}, got {type(report).__name__}")
    if kind == "dos-curve":
        return _table(["tau", "rho"], zip(report.tau_grid, report.rho))
    if kind == "local-law-scan":
        recs = report.records
        if not recs:
            return _table(["eta", "err_d", "bound"], [])
        t0 = recs[0]["tau"] if tau is None else tau
        sel = sorted((r for r in recs if np.isclose(r["tau"], t0)), key=lambda r: (-r["eta"], r["sample"]))
        return _table(["eta", "err_d", "bound"], ((r["eta"], r["err_d"], r["bound_d"]) for r in sel))
    if kind == "rigidity-scatter":
        return _table(["tau", "lambda", "deviation", "regime"],
                      ((r["tau"], r["lambda"], r["deviation"], r["regime"]) for r in report.records))
    return _table(["gap", "cdf_model", "cdf_reference"], report.cdf_table())
