"""Variance profiles of Wigner-type matrices and checks of their standing assumptions."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Callable, Mapping, Sequence

import numpy as np

PROFILE_SCHEMA = "qvelab.profile/1"
KINDS = ("stochastic-constant", "block-constant", "kernel-discretized", "custom-matrix")

# Names usable inside kernel expressions given as strings, e.g. "(1 + x*y)/2".
_KERNEL_NAMESPACE = {
    name: getattr(np, name)
    for name in ("exp", "sin", "cos", "abs", "sqrt", "minimum", "maximum", "where", "pi", "cosh", "log1p")
}


class ProfileError(ValueError):
    """A profile specification cannot be turned into a valid variance matrix."""


@dataclass(frozen=True)
class ProfileSpec:
    kind: str
    n: int
    params: Mapping[str, Any] = field(default_factory=dict)
    p: float = 0.1
    big_p: float = 10.0
    l: int = 1
    q: float = 0.0

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ProfileSpec":
        return cls(
            kind=data["kind"],
            n=int(data["n"]),
            params=dict(data.get("params", {})),
            p=float(data.get("p", 0.1)),
            big_p=float(data.get("P", data.get("big_p", 10.0))),
            l=int(data.get("L", data.get("l", 1))),
            q=float(data.get("q", 0.0)),
        )


@dataclass(frozen=True, eq=False)
class VarianceProfile:
    """Symmetric nonnegative variance matrix ``s`` together with the model parameters.

    ``s`` is stored read-only. ``scale`` records the factor applied when a kernel was
    rescaled so that its largest entry equals ``1/n``.
    """

    n: int
    s: np.ndarray
    kind: str = "custom-matrix"
    params: Mapping[str, Any] = field(default_factory=dict)
    p_param: float = 0.1
    big_p: float = 10.0
    l_param: int = 1
    q_param: float = 0.0
    scale: float = 1.0

    def __post_init__(self) -> None:
        s = np.array(self.s, dtype=float)
        s.setflags(write=False)
        object.__setattr__(self, "s", s)

    @cached_property
    def row_classes(self) -> tuple[np.ndarray, np.ndarray]:
        """Group identical rows of ``s``.

        Returns ``(labels, reps)`` where ``labels[i]`` is the class of row ``i`` and
        ``reps[c]`` a representative row index. Identical rows force identical
        components of the QVE solution, so the solver works on the classes only.
        """
        _, reps, labels = np.unique(self.s, axis=0, return_index=True, return_inverse=True)
        return labels.reshape(-1), reps

    @cached_property
    def reduced_matrix(self) -> np.ndarray:
        """``R[a, c] = sum_{j in class c} s[rep_a, j]``, the QVE matrix acting on classes."""
        labels, reps = self.row_classes
        order = np.argsort(labels, kind="stable")
        starts = np.flatnonzero(np.r_[True, np.diff(labels[order]) != 0])
        return np.add.reduceat(self.s[reps][:, order], starts, axis=1)

    @cached_property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.n).encode())
        h.update(np.ascontiguousarray(self.s).tobytes())
        return h.hexdigest()[:16]

    def to_dict(self, include_entries: bool | None = None) -> dict[str, Any]:
        serializable = _params_serializable(self.params)
        if include_entries is None:
            include_entries = self.kind == "custom-matrix" or not serializable
        out: dict[str, Any] = {
            "schema": PROFILE_SCHEMA,
            "n": self.n,
            "kind": self.kind,
            "params": _jsonable(self.params) if serializable else {},
            "p": self.p_param,
            "P": self.big_p,
            "L": self.l_param,
            "q": self.q_param,
            "scale": self.scale,
        }
        if include_entries:
            out["entries"] = self.s.reshape(-1).tolist()
        return out

    def to_json(self, include_entries: bool | None = None) -> str:
        return json.dumps(self.to_dict(include_entries))


@dataclass(frozen=True)
class AssumptionReport:
    flat_ok: bool
    flat_margin: float
    primitive_ok: bool
    primitive_worst: float
    q_full_ok: bool | None
    q_full_margin: float | None
    bounded_solution_ok: bool | None = None
    max_abs_m: float | None = None
    notes: tuple[str, ...] = ()

    def with_bounded(self, ok: bool | None, observed: float) -> "AssumptionReport":
        return replace(self, bounded_solution_ok=ok, max_abs_m=observed)

    def to_dict(self) -> dict[str, Any]:
        return {
            "flat_ok": self.flat_ok,
            "flat_margin": self.flat_margin,
            "primitive_ok": self.primitive_ok,
            "primitive_worst": self.primitive_worst,
            "q_full_ok": self.q_full_ok,
            "q_full_margin": self.q_full_margin,
            "bounded_solution_ok": self.bounded_solution_ok,
            "max_abs_m": self.max_abs_m,
            "notes": list(self.notes),
        }


def _params_serializable(params: Mapping[str, Any]) -> bool:
    try:
        json.dumps(_jsonable(params))
    except TypeError:
        return False
    return True


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Mapping):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _kernel_callable(kernel: Callable | str) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    if callable(kernel):
        return kernel
    code = compile(kernel, "<kernel>", "eval")
    for name in code.co_names:
        if name not in _KERNEL_NAMESPACE and name not in ("x", "y"):
            raise ProfileError(f"kernel expression uses unknown name {name!r}")

    def f(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return eval(code, {"__builtins__": {}}, {**_KERNEL_NAMESPACE, "x": x, "y": y})

    return f


def _block_matrix(n: int, params: Mapping[str, Any]) -> np.ndarray:
    sizes = [int(b) for b in params["sizes"]]
    if sum(sizes) != n:
        raise ProfileError(f"block sizes {sizes} do not sum to n={n}")
    if any(b <= 0 for b in sizes):
        raise ProfileError("block sizes must be positive")
    k = len(sizes)
    if "variances" in params:
        v = np.asarray(params["variances"], dtype=float)
    elif "scaled_variances" in params:
        v = np.asarray(params["scaled_variances"], dtype=float) / n
    elif "intra" in params:
        v = np.full((k, k), float(params["inter"]))
        np.fill_diagonal(v, float(params["intra"]))
    else:
        raise ProfileError("block-constant needs 'variances', 'scaled_variances' or 'intra'/'inter'")
    if v.shape != (k, k):
        raise ProfileError(f"variance table has shape {v.shape}, expected {(k, k)}")
    if not np.array_equal(v, v.T):
        raise ProfileError("block variance table is not symmetric")
    labels = np.repeat(np.arange(k), sizes)
    return v[np.ix_(labels, labels)]


def build_profile(spec: ProfileSpec) -> VarianceProfile:
    """Construct a validated :class:`VarianceProfile` from a :class:`ProfileSpec`."""
    n = spec.n
    if n < 2:
        raise ProfileError("n must be at least 2")
    if spec.kind not in KINDS:
        raise ProfileError(f"unknown profile kind {spec.kind!r}")
    params = dict(spec.params)
    scale = 1.0

    if spec.kind == "stochastic-constant":
        s = np.full((n, n), 1.0 / n)
    elif spec.kind == "block-constant":
        s = _block_matrix(n, params)
    elif spec.kind == "kernel-discretized":
        f = _kernel_callable(params["kernel"])
        x = np.arange(1, n + 1) / n
        fx = np.asarray(f(x[:, None], x[None, :]), dtype=float) * np.ones((n, n))
        if not np.allclose(fx, fx.T, rtol=1e-12, atol=1e-14):
            raise ProfileError("kernel is not symmetric")
        if np.any(fx < 0):
            raise ProfileError("kernel takes negative values")
        if np.any(np.diag(fx) <= 0):
            raise ProfileError("kernel must have a positive diagonal")
        fx = (fx + fx.T) / 2
        s = fx / n
        if params.get("rescale", True):
            scale = 1.0 / (n * s.max())
            s = s * scale
    else:
        s = np.array(params.pop("entries"), dtype=float).reshape(n, n)
        if params.get("rescale", False) and s.max() > 0:
            scale = 1.0 / (n * s.max())
            s = s * scale

    if not np.array_equal(s, s.T):
        raise ProfileError("variance matrix is not symmetric")
    if np.any(s < 0):
        raise ProfileError("variance matrix has negative entries")
    if s.max() > 1.0 / n * (1 + 1e-12):
        raise ProfileError(f"entries exceed the flatness bound 1/n (max*n = {s.max() * n:.6g})")
    if spec.kind != "custom-matrix" and np.any(s.sum(axis=1) == 0):
        raise ProfileError("profile has an all-zero row")

    return VarianceProfile(
        n=n,
        s=s,
        kind=spec.kind,
        params=params,
        p_param=spec.p,
        big_p=spec.big_p,
        l_param=spec.l,
        q_param=spec.q,
        scale=scale,
    )


def profile_from_dict(data: Mapping[str, Any]) -> VarianceProfile:
    """Inverse of :meth:`VarianceProfile.to_dict`."""
    if data.get("schema", PROFILE_SCHEMA) != PROFILE_SCHEMA:
        raise ProfileError(f"unsupported profile schema {data.get('schema')!r}")
    spec = ProfileSpec.from_dict(data)
    if "entries" in data:
        params = dict(spec.params)
        params["entries"] = data["entries"]
        params["rescale"] = False
        prof = build_profile(replace(spec, kind="custom-matrix", params=params))
        return replace(prof, kind=spec.kind, params=dict(spec.params), scale=float(data.get("scale", 1.0)))
    return build_profile(spec)


def profile_from_json(text: str) -> VarianceProfile:
    return profile_from_dict(json.loads(text))


def complex_covariance(s: np.ndarray, re_fraction: float = 0.5, correlation: float = 0.0) -> np.ndarray:
    """Covariance matrices of (Re h_ij, Im h_ij), shape ``s.shape + (2, 2)``."""
    r = re_fraction
    off = correlation * np.sqrt(r * (1 - r))
    base = np.array([[r, off], [off, 1 - r]])
    return s[..., None, None] * base


def check_assumptions(
    profile: VarianceProfile,
    *,
    symmetry: str = "real-symmetric",
    re_fraction: float = 0.5,
    correlation: float = 0.0,
) -> AssumptionReport:
    """Evaluate flatness, uniform primitivity and q-fullness; never raises."""
    n = profile.n
    s = profile.s
    notes: list[str] = []

    flat_margin = 1.0 / n - float(s.max())
    flat_ok = flat_margin >= -1e-15 / n

    sl = np.linalg.matrix_power(s, max(int(profile.l_param), 1))
    worst = float(sl.min() * n)
    primitive_ok = worst >= profile.p_param
    if not primitive_ok:
        notes.append(f"min (S^L)_ij * N = {worst:.4g} < p = {profile.p_param}")
    if np.any(s.sum(axis=1) == 0):
        notes.append("all-zero row present")

    q_ok: bool | None = None
    q_margin: float | None = None
    if profile.q_param > 0:
        if symmetry == "real-symmetric":
            q_margin = float(s.min() * n - profile.q_param)
        else:
            # min eigenvalue of the 2x2 (Re, Im) covariance is s * lambda_min(base)
            r = re_fraction
            off = correlation * np.sqrt(r * (1 - r))
            lam_min = 0.5 - np.sqrt((r - 0.5) ** 2 + off**2)
            offdiag = ~np.eye(n, dtype=bool)
            q_margin = float(s[offdiag].min() * lam_min * n - profile.q_param)
            notes.append("q-fullness checked on off-diagonal Re/Im covariance; diagonal is real")
        q_ok = q_margin >= 0
    return AssumptionReport(
        flat_ok=bool(flat_ok),
        flat_margin=flat_margin,
        primitive_ok=bool(primitive_ok),
        primitive_worst=worst,
        q_full_ok=q_ok,
        q_full_margin=q_margin,
        notes=tuple(notes),
    )


# Ready-made profiles used throughout the examples and tests.

def constant_profile(n: int, **kw: Any) -> VarianceProfile:
    return build_profile(ProfileSpec("stochastic-constant", n, {}, **kw))


def two_block_profile(
    n: int,
    fraction: float = 0.85,
    intra: Sequence[float] = (0.02, 0.02),
    inter: float = 1.0,
    **kw: Any,
) -> VarianceProfile:
    """Two blocks of sizes ``fraction*n`` and the rest; variances in units of ``1/n``.

    With the defaults the density of states has a symmetric pair of gaps of length
    about 0.3 around ``|tau| ~ 0.24 .. 0.54``.
    """
    n1 = int(round(fraction * n))
    params = {
        "sizes": [n1, n - n1],
        "scaled_variances": [[intra[0], inter], [inter, intra[1]]],
    }
    kw.setdefault("p", min(min(intra), inter) * 0.99)
    return build_profile(ProfileSpec("block-constant", n, params, **kw))
