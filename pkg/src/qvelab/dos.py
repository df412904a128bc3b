"""Density of states: evaluation, harmonic extension, support structure, gap size,
the local-law weight ``kappa`` and shape fits near edges and minima."""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, optimize, signal

from .profile import VarianceProfile
from .qve import SolverConfig, SpectralPoint, solve_many

EXTREME_EDGE = "extreme-edge"
INTERNAL_EDGE = "internal-edge"
INTERNAL_MINIMUM = "internal-minimum"


class SupportError(ValueError):
    pass


class ResolutionError(ValueError):
    """The grid is too coarse for the requested Poisson-kernel width."""


@dataclass
class DosCurve:
    """``rho`` sampled on ``tau_grid``. ``eta_used`` is the imaginary part the values
    correspond to (0 after extrapolation); ``eta_eval`` is the one actually solved at."""

    tau_grid: np.ndarray
    rho: np.ndarray
    eta_used: float
    eta_eval: float | None = None
    failed: np.ndarray | None = None
    profile_digest: str | None = None

    def __post_init__(self) -> None:
        self.tau_grid = np.asarray(self.tau_grid, dtype=float)
        self.rho = np.asarray(self.rho, dtype=float)
        if self.tau_grid.shape != self.rho.shape or self.tau_grid.ndim != 1:
            raise ValueError("tau_grid and rho must be 1-d arrays of equal length")
        if np.any(np.diff(self.tau_grid) <= 0):
            raise ValueError("tau_grid must be strictly increasing")
        if self.failed is None:
            self.failed = ~np.isfinite(self.rho)
        if self.eta_eval is None:
            self.eta_eval = self.eta_used

    @property
    def spacing(self) -> float:
        return float(np.max(np.diff(self.tau_grid)))

    def _clean(self) -> tuple[np.ndarray, np.ndarray]:
        ok = ~self.failed
        return self.tau_grid[ok], self.rho[ok]

    def rho_at(self, tau) -> np.ndarray:
        """Linear interpolation, zero outside the grid."""
        t, r = self._clean()
        return np.interp(tau, t, r, left=0.0, right=0.0)

    @property
    def mass(self) -> float:
        t, r = self._clean()
        return float(integrate.trapezoid(r, t))

    def _raw_cdf(self, tau) -> np.ndarray:
        t, r = self._clean()
        cum = np.concatenate([[0.0], np.cumsum(np.diff(t) * (r[1:] + r[:-1]) / 2)])
        tau = np.asarray(tau, dtype=float)
        k = np.clip(np.searchsorted(t, tau, side="right") - 1, 0, t.size - 2)
        h = t[k + 1] - t[k]
        d = np.clip(tau - t[k], 0.0, h)
        # exact integral of the piecewise linear interpolant
        val = cum[k] + r[k] * d + (r[k + 1] - r[k]) * d * d / (2 * h)
        return val / cum[-1]

    def cdf(self, tau, symmetric: bool = True) -> np.ndarray:
        """Normalized ``int_{-inf}^tau rho``.

        With ``symmetric`` the estimate is averaged with its reflection, which is exact
        for the (always symmetric) density of states and makes ``cdf(0) = 1/2`` exactly.
        """
        tau = np.asarray(tau, dtype=float)
        f = self._raw_cdf(tau)
        if symmetric:
            f = 0.5 + (f - self._raw_cdf(-tau)) / 2
        return np.clip(f, 0.0, 1.0)

    def classical_index(self, tau, n_dim: int) -> np.ndarray:
        """``i(tau)``: smallest integer not below ``N int_{-inf}^tau rho``."""
        return np.ceil(n_dim * self.cdf(tau) - 1e-9).astype(int)

    def quantile(self, p) -> np.ndarray:
        """Inverse of :meth:`cdf` by vectorized bisection."""
        p = np.asarray(p, dtype=float)
        lo = np.full(p.shape, self.tau_grid[0])
        hi = np.full(p.shape, self.tau_grid[-1])
        for _ in range(60):
            mid = (lo + hi) / 2
            below = self.cdf(mid) < p
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return (lo + hi) / 2

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tau", "rho"])
        for t, r in zip(self.tau_grid, self.rho):
            w.writerow([repr(float(t)), "nan" if not np.isfinite(r) else repr(float(r))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "tau": self.tau_grid.tolist(),
            "rho": [None if not np.isfinite(r) else float(r) for r in self.rho],
            "eta_used": self.eta_used,
            "eta_eval": self.eta_eval,
            "failed": int(self.failed.sum()),
            "profile": self.profile_digest,
        }


def density_of_states(
    profile: VarianceProfile,
    tau_grid: Sequence[float],
    eta_small: float = 1e-6,
    extrapolate: bool = False,
    config: SolverConfig | None = None,
) -> DosCurve:
    """``rho(tau) = Im <m(tau + i eta_small)> / pi`` on a grid.

    With ``extrapolate`` a two-point Richardson step ``2 rho(eta/2) - rho(eta)`` is
    taken toward ``eta = 0`` and clipped at zero.
    """
    if not eta_small > 0:
        raise ValueError("eta_small must be positive")
    tau = np.asarray(tau_grid, dtype=float)

    def at(eta):
        batch = solve_many(profile, tau + 1j * eta, config)
        return np.where(batch.converged, batch.density, np.nan), ~batch.converged

    rho, failed = at(eta_small)
    eta_used = eta_small
    if extrapolate:
        rho_half, failed_half = at(eta_small / 2)
        rho = np.maximum(2 * rho_half - rho, 0.0)
        failed = failed | failed_half
        eta_used = 0.0
    rho = np.where(failed, np.nan, np.maximum(rho, 0.0))
    return DosCurve(tau, rho, eta_used, eta_small, failed, profile.digest)


def _poisson_linear(t0, t1, r0, r1, tau, eta):
    """Exact integral of the Poisson kernel against the linear interpolant on [t0, t1]."""
    slope = (r1 - r0) / (t1 - t0)
    base = r0 + slope * (tau - t0)
    u0, u1 = t0 - tau, t1 - tau
    atan_part = np.arctan2(u1, eta) - np.arctan2(u0, eta)
    log_part = 0.5 * eta * np.log((u1 * u1 + eta * eta) / (u0 * u0 + eta * eta))
    return (base * atan_part + slope * log_part) / np.pi


def harmonic_extension(dos: DosCurve, z: SpectralPoint | complex, method: str = "exact") -> float:
    """Poisson-kernel extension of the density to ``z``.

    The stored curve already carries a kernel of width ``eta_used``; by the semigroup
    property only the remaining width ``eta - eta_used`` is applied. ``method`` is
    ``"exact"`` (closed-form integral of the linear interpolant) or ``"quad"``
    (adaptive quadrature of the same interpolant).
    """
    z = z if isinstance(z, SpectralPoint) else SpectralPoint.from_complex(z)
    eta = z.eta - dos.eta_used
    if eta <= 0:
        raise ResolutionError(f"eta={z.eta:g} does not exceed the curve's own eta={dos.eta_used:g}")
    if dos.spacing > eta:
        raise ResolutionError(f"grid spacing {dos.spacing:g} exceeds kernel width {eta:g}")
    t, r = dos._clean()
    if method == "exact":
        return float(np.sum(_poisson_linear(t[:-1], t[1:], r[:-1], r[1:], z.tau, eta)))
    if method == "quad":
        # adaptive quadrature panel by panel, with the interpolant's kinks as break points
        f = lambda s: np.interp(s, t, r) * eta / ((z.tau - s) ** 2 + eta**2) / np.pi
        edges = np.unique(np.r_[t[::20], t[-1]])
        val = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            inner = t[(t > a) & (t < b)]
            val += integrate.quad(f, a, b, points=inner if inner.size else None, limit=200, epsabs=1e-13)[0]
        return float(val)
    raise ValueError(f"unknown method {method!r}")


# --------------------------------------------------------------------------- #
# Support structure

@dataclass(frozen=True)
class Minimum:
    """A point of the minima set: a support edge or an interior local minimum.

    ``theta`` points from the support into the adjacent gap for edges (-1 at a left
    edge, +1 at a right edge) and is +1 for interior minima.
    """

    tau: float
    kind: str
    theta: int
    rho: float = 0.0
    interval: int = 0


@dataclass
class SupportStructure:
    intervals: list[tuple[float, float]]
    minima: list[Minimum]
    delta_star: float = 0.05
    c_star: float = 0.25
    threshold: float = 0.0
    warnings: list[str] = field(default_factory=list)

    @property
    def gaps(self) -> list[tuple[float, float]]:
        return [(self.intervals[k][1], self.intervals[k + 1][0]) for k in range(len(self.intervals) - 1)]

    @property
    def short_intervals(self) -> list[int]:
        """Indices of intervals shorter than ``2 delta_star``."""
        return [k for k, (a, b) in enumerate(self.intervals) if b - a < 2 * self.delta_star]

    def distance(self, tau) -> np.ndarray:
        """Distance from real ``tau`` to the support."""
        tau = np.asarray(tau, dtype=float)
        d = np.full(tau.shape, np.inf)
        for a, b in self.intervals:
            d = np.minimum(d, np.maximum(0.0, np.maximum(a - tau, tau - b)))
        return d

    def gap_at(self, tau: float) -> float:
        """Length of the gap adjacent to the edge nearest to ``tau`` (1 beyond extreme edges)."""
        return local_gap_size(self, tau, self.delta_star)

    def to_dict(self) -> dict:
        return {
            "intervals": [list(iv) for iv in self.intervals],
            "gaps": [list(g) for g in self.gaps],
            "minima": [
                {"tau": m.tau, "kind": m.kind, "theta": m.theta, "rho": m.rho, "interval": m.interval}
                for m in self.minima
            ],
            "delta_star": self.delta_star,
            "c_star": self.c_star,
            "threshold": self.threshold,
            "short_intervals": self.short_intervals,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _refine_crossing(profile, eta, threshold, lo, hi, config, xtol=1e-12):
    """Bisection for the point between ``lo`` (below threshold) and ``hi`` (above)."""

    def g(tau):
        b = solve_many(profile, [tau + 1j * eta], config)
        return float(b.density[0]) - threshold

    glo, ghi = g(lo), g(hi)
    if not (glo < 0 <= ghi):
        return None
    return optimize.brentq(g, lo, hi, xtol=xtol) if glo * ghi < 0 else hi


def detect_support(
    dos: DosCurve,
    threshold: float | None = None,
    *,
    profile: VarianceProfile | None = None,
    delta_star: float = 0.05,
    c_star: float = 0.25,
    smoothing: int = 3,
    config: SolverConfig | None = None,
    refine_eta: float | None = None,
) -> SupportStructure:
    """Maximal runs of ``rho >= threshold`` and the minima set.

    Gaps resolved by fewer than two grid points are merged into the surrounding
    interval with a warning. When ``profile`` is given, every edge is refined by
    bisection on the threshold crossing of ``Im <m> / pi`` at ``refine_eta`` (default
    ``min(eta, 1e-4 * threshold)``, small enough that the in-gap tail of order
    ``eta / sqrt(omega)`` does not shift the crossing), and every interior minimum by
    a bounded scalar minimization at the curve's ``eta``.
    """
    eta = dos.eta_eval or dos.eta_used
    if threshold is None:
        threshold = max(10 * (dos.eta_used or eta), 1e-4)
    t, r = dos._clean()
    above = r >= threshold
    if not above.any():
        raise SupportError("no grid point exceeds the support threshold")
    notes: list[str] = []

    edges = np.flatnonzero(np.diff(above.astype(int)))
    starts = list(edges[above[edges + 1]] + 1)
    ends = list(edges[~above[edges + 1]])
    if above[0]:
        starts.insert(0, 0)
        notes.append("density above threshold at the left end of the grid")
    if above[-1]:
        ends.append(t.size - 1)
        notes.append("density above threshold at the right end of the grid")
    runs = [[s, e] for s, e in zip(starts, ends)]
    merged = [runs[0]]
    for s, e in runs[1:]:
        if s - merged[-1][1] - 1 < 2:
            notes.append(f"gap near tau={t[s]:.6g} is unresolved on the grid; intervals merged")
            merged[-1][1] = e
        else:
            merged.append([s, e])

    if refine_eta is None:
        refine_eta = min(eta, 1e-4 * threshold) if eta else None
    intervals = []
    for s, e in merged:
        a, b = t[s], t[e]
        if profile is not None and eta:
            if s > 0:
                a = _refine_crossing(profile, refine_eta, threshold, t[s - 1], t[s], config) or a
            if e < t.size - 1:
                b_ref = _refine_crossing(profile, refine_eta, threshold, t[e + 1], t[e], config)
                b = b_ref if b_ref is not None else b
        else:
            # linear interpolation of the threshold crossing
            if s > 0:
                a = np.interp(threshold, [r[s - 1], r[s]], [t[s - 1], t[s]])
            if e < t.size - 1:
                b = np.interp(threshold, [r[e + 1], r[e]], [t[e + 1], t[e]])
        intervals.append((float(a), float(b)))

    minima: list[Minimum] = []
    n_iv = len(intervals)
    for k, ((a, b), (s, e)) in enumerate(zip(intervals, merged)):
        kind_a = EXTREME_EDGE if k == 0 else INTERNAL_EDGE
        kind_b = EXTREME_EDGE if k == n_iv - 1 else INTERNAL_EDGE
        minima.append(Minimum(a, kind_a, -1, 0.0, k))
        seg = r[s : e + 1]
        if seg.size >= 3:
            smooth = np.convolve(seg, np.ones(smoothing) / smoothing, mode="same") if smoothing > 1 else seg
            smooth[0], smooth[-1] = seg[0], seg[-1]
            peaks, _ = signal.find_peaks(-smooth, prominence=max(threshold, 1e-3 * seg.max()))
            for p in peaks:
                j = s + p
                tau0, rho0 = float(t[j]), float(r[j])
                if profile is not None and eta:
                    lo, hi = t[max(j - 2, s)], t[min(j + 2, e)]
                    res = optimize.minimize_scalar(
                        lambda x: float(solve_many(profile, [x + 1j * eta], config).density[0]),
                        bounds=(lo, hi), method="bounded", options={"xatol": 1e-10},
                    )
                    tau0, rho0 = float(res.x), float(res.fun)
                minima.append(Minimum(tau0, INTERNAL_MINIMUM, 1, rho0, k))
        minima.append(Minimum(b, kind_b, 1, 0.0, k))

    for msg in notes:
        warnings.warn(msg, stacklevel=2)
    out = SupportStructure(intervals, minima, delta_star, c_star, threshold, notes)
    for k in out.short_intervals:
        out.warnings.append(f"interval {k} is shorter than 2*delta_star={2 * delta_star:g}")
    return out


def local_gap_size(support: SupportStructure, tau: float, delta: float) -> float:
    """Length of the gap near ``tau``: 1 beyond the extreme edges (up to ``delta``
    inside), the gap length within ``delta`` of a gap, 0 otherwise."""
    iv = support.intervals
    if tau <= iv[0][0] + delta or tau >= iv[-1][1] - delta:
        return 1.0
    for (_, b), (a_next, _) in zip(iv[:-1], iv[1:]):
        if b - delta <= tau <= a_next + delta:
            return float(a_next - b)
    return 0.0


@dataclass(frozen=True)
class KappaValue:
    value: float
    branch: str
    default: float
    improved: float | None


def kappa(
    support: SupportStructure,
    z: SpectralPoint | complex,
    n_dim: int,
    *,
    rho_z: float | None = None,
    dos: DosCurve | None = None,
    gamma: float = 0.1,
    delta: float | None = None,
) -> KappaValue:
    """Local-law weight at ``z``.

    Default ``1/(Delta^{1/3} + rho(z))``; when ``(Delta^{1/3}+rho) dist(z, supp) >=
    N^gamma/(N eta)^2`` half of the improved bound is used instead, unless that is
    larger than the default. ``rho(z)`` is taken from ``rho_z`` or from the harmonic
    extension of ``dos``; ``delta`` defaults to ``delta_star/2``.
    """
    z = z if isinstance(z, SpectralPoint) else SpectralPoint.from_complex(z)
    if rho_z is None:
        if dos is None:
            raise ValueError("need rho_z or dos")
        rho_z = harmonic_extension(dos, z)
    delta = support.delta_star / 2 if delta is None else delta
    gap = local_gap_size(support, z.tau, delta)
    w = gap ** (1 / 3) + rho_z
    default = 1.0 / w
    dist = float(np.hypot(support.distance(z.tau), z.eta))
    n_eta = n_dim * z.eta
    if w * dist >= n_dim**gamma / n_eta**2:
        improved = 0.5 * (z.eta / (dist * w) + 1.0 / (n_eta * np.sqrt(dist * w)))
        if improved <= default:
            return KappaValue(improved, "improved", default, improved)
        return KappaValue(default, "default-fallback", default, improved)
    return KappaValue(default, "default", default, None)


def local_law_bound(rho_z: float, n_dim: int, eta: float, kappa_value: float) -> float:
    """Entrywise bound ``sqrt(rho/(N eta)) + 1/(N eta) + min(1/sqrt(N eta), kappa/(N eta))``."""
    ne = n_dim * eta
    return float(np.sqrt(rho_z / ne) + 1 / ne + min(1 / np.sqrt(ne), kappa_value / ne))


def averaged_law_bound(n_dim: int, eta: float, kappa_value: float) -> float:
    ne = n_dim * eta
    return float(min(1 / np.sqrt(ne), kappa_value / ne))


# --------------------------------------------------------------------------- #
# Shapes

def predicted_shape(regime: str, omega, eta: float, gap: float = 1.0, rho_min: float = 0.0):
    """Size of ``rho(tau0 + theta*omega + i eta)`` up to constants.

    ``regime`` is one of ``extreme-edge``/``internal-edge`` (``omega <= 0`` inside the
    support), ``in-gap`` (``omega >= 0`` measured from the edge into a gap of length
    ``gap``), ``internal-minimum`` or ``away``.
    """
    w = np.abs(np.asarray(omega, dtype=float))
    if regime == EXTREME_EDGE:
        return np.sqrt(w + eta)
    if regime == INTERNAL_EDGE:
        return np.sqrt(w + eta) / (gap + w + eta) ** (1 / 6)
    if regime == "in-gap":
        return eta / ((gap + eta) ** (1 / 6) * np.sqrt(w + eta))
    if regime == INTERNAL_MINIMUM:
        return rho_min + (w + eta) ** (1 / 3)
    if regime == "away":
        return eta / (w**2 + eta**2)
    raise ValueError(f"unknown regime {regime!r}")


@dataclass
class ShapeFit:
    minimum: Minimum
    regime: str
    exponent: float
    prefactor: float
    residual: float
    n_points: int
    reliable: bool
    omega_range: tuple[float, float] = (0.0, 0.0)


def fit_edge_shapes(
    dos: DosCurve,
    support: SupportStructure,
    *,
    profile: VarianceProfile | None = None,
    eta: float | None = None,
    omega_min: float | None = None,
    omega_max: float | None = None,
    n_omega: int = 40,
    min_points: int = 8,
    config: SolverConfig | None = None,
) -> list[ShapeFit]:
    """Log-log least-squares fits of the density near every minimum.

    Edges are probed on the support side, ``omega`` in ``[10 h, delta_star]`` with
    ``h`` the grid spacing (capped at ``c_star * gap`` for internal edges); interior
    minima on both sides after subtracting ``rho(tau0)``. With ``profile`` the density
    is re-evaluated on a logarithmic ``omega`` grid at ``eta`` (default: the curve's
    own ``eta``); otherwise the curve is interpolated.
    """
    lo_default = 10 * dos.spacing if omega_min is None else omega_min
    hi_default = support.delta_star if omega_max is None else omega_max
    eta = eta or dos.eta_eval or 1e-9
    fits = []
    for mn in support.minima:
        hi = hi_default
        if mn.kind == INTERNAL_EDGE:
            hi = min(hi, support.c_star * local_gap_size(support, mn.tau, 0.0))
        lo = lo_default
        if hi <= lo:
            fits.append(ShapeFit(mn, mn.kind, np.nan, np.nan, np.nan, 0, False, (lo, hi)))
            continue
        if profile is not None:
            omega = np.geomspace(lo, hi, n_omega)
        else:
            grid_w = np.abs(dos.tau_grid - mn.tau)
            omega = np.unique(grid_w[(grid_w >= lo) & (grid_w <= hi)])
        if mn.kind == INTERNAL_MINIMUM:
            taus = np.concatenate([mn.tau - omega, mn.tau + omega])
            ws = np.concatenate([omega, omega])
        else:
            taus = mn.tau - mn.theta * omega
            ws = omega
        if profile is not None:
            vals = solve_many(profile, taus + 1j * eta, config).density
            base = float(solve_many(profile, [mn.tau + 1j * eta], config).density[0])
        else:
            vals = dos.rho_at(taus)
            base = float(dos.rho_at(mn.tau))
        if mn.kind == INTERNAL_MINIMUM:
            vals = vals - base
        ok = np.isfinite(vals) & (vals > 0)
        if ok.sum() < min_points:
            fits.append(ShapeFit(mn, mn.kind, np.nan, np.nan, np.nan, int(ok.sum()), False, (lo, hi)))
            continue
        x, y = np.log(ws[ok]), np.log(vals[ok])
        coef, res, *_ = np.polyfit(x, y, 1, full=True)
        rms = float(np.sqrt(res[0] / ok.sum())) if res.size else 0.0
        fits.append(ShapeFit(mn, mn.kind, float(coef[0]), float(np.exp(coef[1])), rms, int(ok.sum()), True, (lo, hi)))
    return fits


# --------------------------------------------------------------------------- #
# Closed forms for (rescaled) semicircle ensembles

def semicircle_density(tau, variance: float = 1.0) -> np.ndarray:
    """Semicircle density of radius ``2 sqrt(variance)``."""
    r2 = 4.0 * variance
    tau = np.asarray(tau, dtype=float)
    return np.sqrt(np.maximum(r2 - tau * tau, 0.0)) / (2 * np.pi * variance)


def semicircle_dos(tau_grid: Sequence[float], variance: float = 1.0) -> DosCurve:
    """Exact density of states (``eta_used = 0``) for the profile whose row sums all
    equal ``variance``; e.g. ``variance = 1 + 1/N`` for the real Gaussian reference
    with its doubled diagonal."""
    tau = np.asarray(tau_grid, dtype=float)
    return DosCurve(tau, semicircle_density(tau, variance), 0.0, 0.0, None, f"semicircle-{variance!r}")


def scaled_semicircle_stieltjes(z, variance: float = 1.0):
    """Stieltjes transform ``m`` solving ``-1/m = z + variance * m`` in the upper half-plane."""
    from .qve import semicircle_stieltjes

    sigma = np.sqrt(variance)
    return semicircle_stieltjes(np.asarray(z, dtype=complex) / sigma) / sigma


def semicircle_support(variance: float = 1.0, delta_star: float = 0.05, c_star: float = 0.25) -> SupportStructure:
    edge = 2.0 * np.sqrt(variance)
    minima = [Minimum(-edge, EXTREME_EDGE, -1, 0.0, 0), Minimum(edge, EXTREME_EDGE, 1, 0.0, 0)]
    return SupportStructure([(-edge, edge)], minima, delta_star, c_star, 0.0)
