"""Solver for the quadratic vector equation ``-1/m_i = z + (S m)_i`` on the upper half-plane.

All heavy lifting happens on the row classes of ``S`` (see
:attr:`VarianceProfile.row_classes`): rows that coincide produce identical
solution components, so a block profile of any size reduces to a ``K x K`` system.
The iteration is vectorised over a batch of spectral parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .profile import VarianceProfile


class QveConvergenceError(RuntimeError):
    def __init__(self, message: str, eta: float | None = None, partial: list | None = None):
        super().__init__(message)
        self.eta = eta
        self.partial = partial or []


@dataclass(frozen=True)
class SpectralPoint:
    tau: float
    eta: float

    def __post_init__(self) -> None:
        if not self.eta > 0:
            raise ValueError(f"spectral parameter needs eta > 0, got {self.eta}")

    @property
    def z(self) -> complex:
        return complex(self.tau, self.eta)

    @classmethod
    def from_complex(cls, z: complex) -> "SpectralPoint":
        return cls(float(np.real(z)), float(np.imag(z)))


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 5000
    damping: float = 0.5
    newton_fallback: bool = True
    stall_window: int = 50
    polish: bool = True

    def __post_init__(self) -> None:
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")


@dataclass
class QveSolution:
    z: SpectralPoint
    m: np.ndarray
    residual: float
    iterations: int
    converged: bool
    status: str = "converged"

    @property
    def mean(self) -> complex:
        return complex(self.m.mean())

    @property
    def density(self) -> float:
        """Harmonic extension of the density of states at ``z``: ``Im <m> / pi``."""
        return float(self.m.imag.mean() / np.pi)

    def to_dict(self) -> dict:
        return {
            "tau": self.z.tau,
            "eta": self.z.eta,
            "re_m": self.m.real.tolist(),
            "im_m": self.m.imag.tolist(),
            "residual": self.residual,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def sweep_to_jsonl(solutions: Iterable[QveSolution]) -> str:
    return "".join(json.dumps(s.to_dict()) + "\n" for s in solutions)


@dataclass
class StabilityOperator:
    matrix: np.ndarray
    smallest_singular_value: float
    inverse_sup_norm: float | None
    near_singular: bool = False


class BoundedCheck(NamedTuple):
    ok: bool | None
    observed_max: float
    failures: int


# --------------------------------------------------------------------------- #
# Reduced operator

class _ClassOperator:
    """The reduced matrix ``R`` with batched products and Newton solves."""

    _LOWRANK_MIN_K = 256

    def __init__(self, r: np.ndarray):
        self.r = r
        self.k = r.shape[0]
        self.u = self.vt = None
        if self.k > self._LOWRANK_MIN_K:
            self._try_lowrank()

    def _try_lowrank(self) -> None:
        k = self.k
        width = min(96, k // 4)
        omega = np.random.default_rng(0).standard_normal((k, width))
        q, _ = np.linalg.qr(self.r @ omega)
        qtr = q.T @ self.r
        if np.abs(self.r - q @ qtr).max() > 1e-13 * np.abs(self.r).max():
            return
        u_s, sig, vt = np.linalg.svd(qtr, full_matrices=False)
        rank = int(np.sum(sig > 1e-14 * sig[0]))
        if rank > k // 8:
            return
        self.u = q @ (u_s[:, :rank] * sig[:rank])
        self.vt = vt[:rank]

    @property
    def lowrank(self) -> bool:
        return self.u is not None

    def matvec(self, mu: np.ndarray) -> np.ndarray:
        if self.lowrank:
            return (mu @ self.vt.T) @ self.u.T
        return mu @ self.r.T

    def solve(self, w2: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        """Solve ``(I - diag(w2) R) x = rhs`` for each batch row."""
        b, k = rhs.shape
        if self.lowrank:
            du = w2[:, :, None] * self.u[None]
            small = np.eye(self.vt.shape[0])[None] - np.einsum("rk,bks->brs", self.vt, du)
            y = np.linalg.solve(small, (rhs @ self.vt.T)[..., None])[..., 0]
            return rhs + np.einsum("bkr,br->bk", du, y)
        out = np.empty_like(rhs)
        chunk = max(1, int(2e7 // max(k * k, 1)))
        eye = np.eye(k)
        for s in range(0, b, chunk):
            sl = slice(s, s + chunk)
            jac = eye[None] - w2[sl, :, None] * self.r[None]
            out[sl] = np.linalg.solve(jac, rhs[sl][..., None])[..., 0]
        return out


def _operator(profile: VarianceProfile) -> _ClassOperator:
    op = profile.__dict__.get("_qve_operator")
    if op is None:
        op = _ClassOperator(profile.reduced_matrix)
        profile.__dict__["_qve_operator"] = op
    return op


# --------------------------------------------------------------------------- #
# Batched iteration on the reduced system

def _residual(op: _ClassOperator, z: np.ndarray, mu: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        r = np.abs(1.0 / mu + z[:, None] + op.matvec(mu)).max(axis=1)
    return np.where(np.isfinite(r), r, np.inf)


def _newton(op, z, mu, res, iters, tol, active, max_steps, status, halvings=60):
    """Damped Newton on ``F(mu) = mu + 1/(z + R mu)``; steps must stay in the upper
    half-plane and strictly reduce the residual."""
    for _ in range(max_steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        zz, m0, r0 = z[idx], mu[idx], res[idx]
        w = 1.0 / (zz[:, None] + op.matvec(m0))
        step = -op.solve(w * w, m0 + w)
        alpha = np.ones(idx.size)
        accepted = np.zeros(idx.size, dtype=bool)
        for _ in range(halvings):
            todo = ~accepted
            if not todo.any():
                break
            cand = m0[todo] + alpha[todo, None] * step[todo]
            cres = _residual(op, zz[todo], cand)
            ok = (cand.imag > 0).all(axis=1) & (cres < r0[todo])
            sel = np.flatnonzero(todo)[ok]
            mu[idx[sel]] = cand[ok]
            res[idx[sel]] = cres[ok]
            accepted[sel] = True
            alpha[todo] *= 0.5
        iters[idx] += 1
        stuck = idx[~accepted]
        active[stuck] = False
        status[stuck] = "newton-stalled"
        active &= res > tol
    return mu


def _iterate(op: _ClassOperator, z: np.ndarray, mu: np.ndarray, cfg: SolverConfig, newton_first: bool = False):
    b = z.size
    mu = mu.astype(complex, copy=True)
    res = _residual(op, z, mu)
    iters = np.zeros(b, dtype=int)
    if newton_first and cfg.newton_fallback:
        # warm starts are usually inside the quadratic basin; whatever is left goes
        # through the damped iteration below
        scratch = np.full(b, "", dtype=object)
        _newton(op, z, mu, res, iters, cfg.tol, res > cfg.tol, 30, scratch)
    theta = np.full(b, cfg.damping)
    streak = np.zeros(b, dtype=int)
    best = res.copy()
    best_it = np.zeros(b, dtype=int)
    status = np.full(b, "max-iter", dtype=object)
    fp = res > cfg.tol
    newton = np.zeros(b, dtype=bool)

    for it in range(cfg.max_iter):
        idx = np.flatnonzero(fp)
        if idx.size == 0:
            break
        zz, m0 = z[idx], mu[idx]
        th = theta[idx]
        f = -1.0 / (zz[:, None] + op.matvec(m0))
        cand = (1 - th[:, None]) * m0 + th[:, None] * f
        cres = _residual(op, zz, cand)
        left = ~(cand.imag > 0).all(axis=1) | ~np.isfinite(cres)
        worse = ~left & (cres > res[idx])
        keep = ~left
        mu[idx[keep]] = cand[keep]
        res[idx[keep]] = cres[keep]
        iters[idx] += 1

        bad = left | worse
        theta[idx[bad]] *= 0.5
        streak[idx[bad]] = 0
        good = idx[~bad]
        streak[good] += 1
        bump = good[streak[good] >= 5]
        theta[bump] = np.minimum(1.0, theta[bump] * 1.2)
        streak[bump] = 0

        improved = res[idx] < 0.5 * best[idx]
        best[idx[improved]] = res[idx[improved]]
        best_it[idx[improved]] = it

        done = res[idx] <= cfg.tol
        fp[idx[done]] = False
        underflow = theta[idx] < 1e-12
        stalled = (it - best_it[idx]) >= cfg.stall_window
        handoff = ~done & (underflow | stalled)
        if cfg.newton_fallback:
            newton[idx[handoff]] = True
            fp[idx[handoff]] = False
        else:
            status[idx[~done & underflow]] = "damping-underflow"
            fp[idx[~done & underflow]] = False

    if newton.any():
        remaining = max(cfg.max_iter - int(iters.max(initial=0)), 50)
        mu = _newton(op, z, mu, res, iters, cfg.tol, newton, remaining, status)

    converged = (res <= cfg.tol) & (mu.imag > 0).all(axis=1)
    if cfg.polish and converged.any():
        dummy = np.full(b, "", dtype=object)
        for _ in range(3):
            _newton(op, z, mu, res, iters, 0.0, converged.copy(), 1, dummy, halvings=2)
    converged = (res <= cfg.tol) & (mu.imag > 0).all(axis=1)
    status[converged] = "converged"
    return mu, res, iters, converged, status


def _initial(z: np.ndarray, k: int) -> np.ndarray:
    return np.repeat((1j * np.minimum(1.0, 1.0 / np.abs(z)))[:, None], k, axis=1)


# --------------------------------------------------------------------------- #
# Public API

def full_residual(profile: VarianceProfile, z: complex, m: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.abs(1.0 / m + z + profile.s @ m).max()
    return float(r) if np.isfinite(r) else float("inf")


def solve_point(
    profile: VarianceProfile,
    z: SpectralPoint | complex,
    config: SolverConfig | None = None,
    warm_start: np.ndarray | None = None,
) -> QveSolution:
    """Solve the QVE at one spectral parameter.

    Damped fixed-point iteration ``m <- (1-theta) m + theta (-1/(z + S m))`` starting
    from ``warm_start`` or ``i min(1, 1/|z|)``; falls back to Newton's method when the
    residual stalls. The returned residual is evaluated on the full ``N``-dimensional
    system.
    """
    cfg = config or SolverConfig()
    point = z if isinstance(z, SpectralPoint) else SpectralPoint.from_complex(z)
    op = _operator(profile)
    labels, reps = profile.row_classes
    zz = np.array([point.z])
    if warm_start is None:
        mu0 = _initial(zz, op.k)
    else:
        warm = np.asarray(warm_start, dtype=complex)
        if warm.shape != (profile.n,):
            raise ValueError("warm start has the wrong shape")
        if not (warm.imag > 0).all():
            raise ValueError("warm start must lie in the upper half-plane")
        mu0 = warm[reps][None]
    mu, _, iters, _, status = _iterate(op, zz, mu0, cfg)
    m = mu[0][labels]
    res = full_residual(profile, point.z, m)
    ok = bool(res <= cfg.tol and (m.imag > 0).all())
    return QveSolution(point, m, res, int(iters[0]), ok, "converged" if ok else str(status[0]))


def solve_sweep(
    profile: VarianceProfile,
    tau: float,
    eta_grid: Sequence[float],
    config: SolverConfig | None = None,
    strict: bool = True,
) -> list[QveSolution]:
    """Solve top-down along a strictly decreasing ``eta_grid``, warm-starting each level.

    On failure raises :class:`QveConvergenceError` (``strict``) carrying the partial
    results and the offending ``eta``; otherwise returns the partial list with the
    failed solution last.
    """
    etas = [float(e) for e in eta_grid]
    if not etas or etas[-1] <= 0 or any(a <= b for a, b in zip(etas, etas[1:])):
        raise ValueError("eta_grid must be strictly decreasing and positive")
    out: list[QveSolution] = []
    warm = None
    for eta in etas:
        sol = solve_point(profile, SpectralPoint(tau, eta), config, warm)
        out.append(sol)
        if not sol.converged:
            if strict:
                raise QveConvergenceError(f"sweep failed at eta={eta:g} ({sol.status})", eta, out[:-1])
            return out
        warm = sol.m
    return out


@dataclass
class BatchSolution:
    """Solutions at many spectral parameters, stored per row class."""

    z: np.ndarray
    mu: np.ndarray
    residual: np.ndarray
    converged: np.ndarray
    labels: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def full(self) -> np.ndarray:
        return self.mu[:, self.labels]

    @property
    def mean(self) -> np.ndarray:
        """``<m>`` at every spectral parameter."""
        return self.mu @ self.weights

    @property
    def density(self) -> np.ndarray:
        return self.mean.imag / np.pi


def solve_many(
    profile: VarianceProfile,
    zs: Sequence[complex] | np.ndarray,
    config: SolverConfig | None = None,
    continuation: bool = True,
    eta_top: float = 1.0,
    ratio: float = 0.25,
) -> BatchSolution:
    """Solve at many spectral parameters at once.

    With ``continuation`` every point whose ``eta`` lies below ``eta_top`` is reached
    through a geometric ladder ``eta_top, eta_top*ratio, ...`` with warm starts.
    """
    cfg = config or SolverConfig()
    z = np.asarray(zs, dtype=complex).reshape(-1)
    if np.any(z.imag <= 0):
        raise ValueError("all spectral parameters need eta > 0")
    op = _operator(profile)
    labels, _ = profile.row_classes
    weights = np.bincount(labels, minlength=op.k) / profile.n

    target = z.imag
    cur = np.maximum(target, eta_top) if continuation else target.copy()
    zc = z.real + 1j * cur
    mu, res, _, conv, _ = _iterate(op, zc, _initial(zc, op.k), cfg)
    alive = conv.copy()
    while continuation:
        step = alive & (cur > target)
        if not step.any():
            break
        idx = np.flatnonzero(step)
        cur[idx] = np.maximum(target[idx], cur[idx] * ratio)
        zc = z[idx].real + 1j * cur[idx]
        m2, r2, _, c2, _ = _iterate(op, zc, mu[idx], cfg, newton_first=True)
        mu[idx], res[idx] = m2, r2
        alive[idx] = c2
    conv = alive & (cur == target) & (res <= cfg.tol)
    return BatchSolution(z, mu, res, conv, labels, weights)


def stability_operator(
    profile: VarianceProfile, solution: QveSolution, floor: float = 1e-13
) -> StabilityOperator:
    """``B = Id - diag(m)^2 S`` with its smallest singular value and ``||B^-1||_{inf->inf}``."""
    if not solution.converged:
        raise ValueError("stability operator needs a converged solution")
    m = solution.m
    b = np.eye(profile.n) - (m * m)[:, None] * profile.s
    smin = float(np.linalg.svd(b, compute_uv=False)[-1])
    if smin <= floor:
        return StabilityOperator(b, smin, None, near_singular=True)
    inv_norm = float(np.abs(np.linalg.inv(b)).sum(axis=1).max())
    return StabilityOperator(b, smin, inv_norm)


def check_bounded_solution(
    profile: VarianceProfile,
    grid: Sequence[SpectralPoint | complex],
    big_p: float | None = None,
    config: SolverConfig | None = None,
) -> BoundedCheck:
    """Check ``max_i |m_i(z)| <= P`` over ``grid``; any solver failure makes it inconclusive."""
    if len(grid) == 0:
        raise ValueError("grid must be nonempty")
    bound = profile.big_p if big_p is None else big_p
    zs = [g.z if isinstance(g, SpectralPoint) else complex(g) for g in grid]
    batch = solve_many(profile, zs, config)
    failures = int((~batch.converged).sum())
    observed = float(np.abs(batch.mu[batch.converged]).max()) if failures < len(zs) else float("nan")
    if failures:
        return BoundedCheck(None, observed, failures)
    return BoundedCheck(bool(observed <= bound), observed, 0)


def semicircle_stieltjes(z: complex | np.ndarray) -> complex | np.ndarray:
    """``m_sc(z) = (-z + sqrt(z^2 - 4))/2`` on the branch mapping the upper half-plane to itself."""
    z = np.asarray(z, dtype=complex)
    return (-z + np.sqrt(z - 2) * np.sqrt(z + 2)) / 2
