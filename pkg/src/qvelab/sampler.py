"""Wigner-type random matrices with a prescribed variance profile.

Entries are generated by a counter-based generator (Philox 4x64): the upper-triangle
entry ``(i, j)``, ``i <= j``, is the ``k``-th 64-bit word of the stream keyed by
``(seed, stream)``, where ``k = j(j+1)/2 + i`` does not depend on ``N``. Stream 0
feeds the real parts and the diagonal, stream 1 the imaginary parts (a correlated
Re/Im pair is built from both). Any single entry can therefore be regenerated
without drawing the rest of the matrix (see :func:`entry`).

Binary dump layout (little-endian): magic ``b"QVLB"``, ``uint32`` version, ``uint64``
n, ``uint8`` class (0 real, 1 complex), ``uint64`` seed, then the ``n*n`` matrix
row-major as ``float64`` (real) or ``complex128`` (complex).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import linalg, special

from .profile import VarianceProfile

DISTRIBUTIONS = ("gaussian", "bounded-uniform", "rademacher-scaled")
_MAGIC = b"QVLB"
_MASK64 = (1 << 64) - 1


class SamplerError(ValueError):
    pass


class SymmetryClass(str, Enum):
    REAL = "real-symmetric"
    COMPLEX = "complex-hermitian"

    @classmethod
    def parse(cls, value) -> "SymmetryClass":
        if isinstance(value, cls):
            return value
        aliases = {"real": cls.REAL, "goe": cls.REAL, "complex": cls.COMPLEX, "gue": cls.COMPLEX}
        try:
            return aliases.get(str(value).lower()) or cls(value)
        except ValueError:
            raise SamplerError(f"unknown symmetry class {value!r}") from None


def _key(seed: int, stream: int) -> int:
    return (int(seed) & _MASK64) + (int(stream) << 64)


def _raw_words(seed: int, stream: int, count: int) -> np.ndarray:
    return np.random.Philox(key=_key(seed, stream)).random_raw(count)


def _raw_word(seed: int, stream: int, k: int) -> int:
    # Philox emits words in blocks of four; advance() skips whole blocks
    bg = np.random.Philox(key=_key(seed, stream))
    bg.advance(k // 4)
    return int(bg.random_raw(k % 4 + 1)[-1])


def _unit_variates(raw: np.ndarray, dist: str) -> np.ndarray:
    """Centered unit-variance variates from 64-bit words."""
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    if dist == "gaussian":
        return special.ndtri(u)
    if dist == "bounded-uniform":
        return (2.0 * u - 1.0) * np.sqrt(3.0)
    if dist == "rademacher-scaled":
        return np.where(u < 0.5, -1.0, 1.0)
    raise SamplerError(f"unknown distribution {dist!r}; expected one of {DISTRIBUTIONS}")


def realized_moment(dist: str, k: int) -> float:
    """``E|X|^k`` of the unit-variance law, i.e. the ratio ``E|h|^k / s^{k/2}``."""
    if dist == "gaussian":
        return float(2 ** (k / 2) * special.gamma((k + 1) / 2) / np.sqrt(np.pi))
    if dist == "bounded-uniform":
        return float(3 ** (k / 2) / (k + 1))
    if dist == "rademacher-scaled":
        return 1.0
    raise SamplerError(f"unknown distribution {dist!r}")


def _upper_index(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    iu, ju = np.triu_indices(n)
    return iu, ju, ju * (ju + 1) // 2 + iu


@dataclass
class MatrixSample:
    h: np.ndarray
    symmetry: SymmetryClass
    seed: int
    distribution: str
    profile_digest: str | None = None
    _eigenvalues: np.ndarray | None = field(default=None, repr=False)
    _eigenvectors: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.h.shape[0]

    @property
    def eigenvalues(self) -> np.ndarray:
        if self._eigenvalues is None:
            self._eigenvalues = linalg.eigvalsh(self.h, check_finite=False)
        return self._eigenvalues

    @property
    def eigenvectors(self) -> np.ndarray:
        if self._eigenvectors is None:
            self._eigenvalues, self._eigenvectors = linalg.eigh(self.h, check_finite=False)
        return self._eigenvectors

    def count_below(self, x: float) -> int:
        """``#{i : lambda_i < x}``; uses cached eigenvalues or the inertia of ``H - x``."""
        if self._eigenvalues is not None:
            return int(np.searchsorted(self._eigenvalues, x, side="left"))
        return inertia_below(self.h, x)

    def count_in(self, a: float, b: float) -> int:
        """Number of eigenvalues in the open interval ``(a, b)`` (up to ties at ``a``)."""
        if b <= a:
            return 0
        if self._eigenvalues is not None:
            w = self._eigenvalues
            return int(np.count_nonzero((w > a) & (w < b)))
        neg_a, zero_a = inertia(self.h, a)
        return inertia(self.h, b)[0] - neg_a - zero_a

    def dump(self, path) -> None:
        cls_code = 0 if self.symmetry == SymmetryClass.REAL else 1
        body = self.h.astype("<f8" if cls_code == 0 else "<c16", copy=False)
        with open(path, "wb") as fh:
            fh.write(_MAGIC + struct.pack("<IQBQ", 1, self.n, cls_code, self.seed & _MASK64))
            fh.write(np.ascontiguousarray(body).tobytes())


def load_dump(path) -> MatrixSample:
    with open(path, "rb") as fh:
        head = fh.read(4 + struct.calcsize("<IQBQ"))
        if head[:4] != _MAGIC:
            raise SamplerError("not a sample dump")
        _, n, cls_code, seed = struct.unpack("<IQBQ", head[4:])
        dtype = "<f8" if cls_code == 0 else "<c16"
        h = np.frombuffer(fh.read(), dtype=dtype).reshape(n, n).copy()
    sym = SymmetryClass.REAL if cls_code == 0 else SymmetryClass.COMPLEX
    return MatrixSample(h, sym, int(seed), "unknown")


def _ldl_eigs(a: np.ndarray) -> np.ndarray:
    _, d, _ = linalg.ldl(a, lower=True, hermitian=True, check_finite=False)
    n = d.shape[0]
    sub = np.abs(np.diag(d, -1)) > 0
    out = []
    i = 0
    diag = np.diag(d).real
    while i < n:
        if i < n - 1 and sub[i]:
            out.extend(np.linalg.eigvalsh(d[i : i + 2, i : i + 2]))
            i += 2
        else:
            out.append(diag[i])
            i += 1
    return np.asarray(out)


def inertia(h: np.ndarray, x: float) -> tuple[int, int]:
    """Numbers of eigenvalues of ``h`` below and equal to ``x`` (Sylvester's law of inertia)."""
    e = _ldl_eigs(h - x * np.eye(h.shape[0], dtype=h.dtype))
    return int(np.count_nonzero(e < 0)), int(np.count_nonzero(e == 0))


def inertia_below(h: np.ndarray, x: float) -> int:
    return inertia(h, x)[0]


def _fill(n, var, diag_var, symmetry, dist, seed, re_fraction=0.5, correlation=0.0):
    """Hermitian matrix with independent upper-triangle entries of variance ``var``."""
    iu, ju, k = _upper_index(n)
    count = int(k.max()) + 1
    v = var[iu, ju].astype(float)
    on_diag = iu == ju
    v[on_diag] = diag_var
    x = _unit_variates(_raw_words(seed, 0, count)[k], dist)
    if symmetry == SymmetryClass.REAL:
        vals = np.sqrt(v) * x
        h = np.zeros((n, n))
    else:
        y = _unit_variates(_raw_words(seed, 1, count)[k], dist)
        r, c = re_fraction, correlation
        re = np.sqrt(v * r) * x
        im = np.sqrt(v * (1 - r)) * (c * x + np.sqrt(1 - c * c) * y) if c else np.sqrt(v * (1 - r)) * y
        re[on_diag] = np.sqrt(v[on_diag]) * x[on_diag]
        im[on_diag] = 0.0
        vals = re + 1j * im
        h = np.zeros((n, n), dtype=complex)
    h[iu, ju] = vals
    strict = np.triu(h, 1)
    h = np.triu(h) + strict.conj().T
    return h


def sample(
    profile: VarianceProfile,
    symmetry: SymmetryClass | str = SymmetryClass.REAL,
    dist: str = "gaussian",
    seed: int = 0,
    *,
    re_fraction: float = 0.5,
    correlation: float = 0.0,
) -> MatrixSample:
    """Draw ``H`` with ``E h_ij = 0`` and ``E|h_ij|^2 = s_ij``; the diagonal is real.

    Complex entries split the variance as ``re_fraction`` / ``1 - re_fraction`` between
    real and imaginary part with the given correlation (default: isotropic).
    """
    symmetry = SymmetryClass.parse(symmetry)
    if dist not in DISTRIBUTIONS:
        raise SamplerError(f"unknown distribution {dist!r}; expected one of {DISTRIBUTIONS}")
    if profile.s.max() > 1.0 / profile.n * (1 + 1e-12):
        raise SamplerError("variance exceeds the flatness bound 1/N")
    if not (0 < re_fraction < 1 and -1 < correlation < 1):
        raise SamplerError("re_fraction must lie in (0,1) and correlation in (-1,1)")
    s = profile.s
    h = _fill(profile.n, s, np.diag(s), symmetry, dist, seed, re_fraction, correlation)
    return MatrixSample(h, symmetry, int(seed), dist, profile.digest)


def entry(
    profile: VarianceProfile,
    i: int,
    j: int,
    symmetry: SymmetryClass | str = SymmetryClass.REAL,
    dist: str = "gaussian",
    seed: int = 0,
    *,
    re_fraction: float = 0.5,
    correlation: float = 0.0,
) -> complex | float:
    """Entry ``(i, j)`` of ``sample(profile, ...)`` computed without building the matrix."""
    symmetry = SymmetryClass.parse(symmetry)
    a, b = min(i, j), max(i, j)
    k = b * (b + 1) // 2 + a
    s = float(profile.s[a, b])
    x = float(_unit_variates(np.array([_raw_word(seed, 0, k)], dtype=np.uint64), dist)[0])
    if symmetry == SymmetryClass.REAL:
        return float(np.sqrt(s) * x)
    if a == b:
        return complex(np.sqrt(s) * x, 0.0)
    y = float(_unit_variates(np.array([_raw_word(seed, 1, k)], dtype=np.uint64), dist)[0])
    r, c = re_fraction, correlation
    re = np.sqrt(s * r) * x
    im = np.sqrt(s * (1 - r)) * (c * x + np.sqrt(1 - c * c) * y) if c else np.sqrt(s * (1 - r)) * y
    val = complex(re, im)
    return val if i <= j else val.conjugate()


def gaussian_reference_variances(n: int, symmetry: SymmetryClass | str) -> tuple[np.ndarray, float]:
    """Off-diagonal variance matrix and diagonal variance of the Gaussian reference ensemble."""
    symmetry = SymmetryClass.parse(symmetry)
    off = np.full((n, n), 1.0 / n)
    diag = 2.0 / n if symmetry == SymmetryClass.REAL else 1.0 / n
    return off, diag


def gaussian_reference_profile(n: int, symmetry: SymmetryClass | str = SymmetryClass.REAL) -> VarianceProfile:
    """Variance matrix of the Gaussian reference ensemble.

    The real case has a doubled diagonal (``2/N``), so this profile is not flat; it is
    built directly, without :func:`build_profile` validation. Every row sums to
    ``1 + 1/N`` (real) or ``1`` (complex), hence the density of states is a semicircle
    of variance equal to that row sum.
    """
    off, diag = gaussian_reference_variances(n, symmetry)
    s = off.copy()
    np.fill_diagonal(s, diag)
    return VarianceProfile(n, s, kind="custom-matrix", params={"reference": SymmetryClass.parse(symmetry).value})


def reference_row_sum(n: int, symmetry: SymmetryClass | str = SymmetryClass.REAL) -> float:
    return 1.0 + 1.0 / n if SymmetryClass.parse(symmetry) == SymmetryClass.REAL else 1.0


def sample_gaussian_reference(n: int, symmetry: SymmetryClass | str = SymmetryClass.REAL, seed: int = 0) -> MatrixSample:
    """GOE (off-diagonal variance 1/N, diagonal 2/N) or GUE (Re/Im each 1/(2N) off the
    diagonal, diagonal 1/N); both have spectrum converging to the semicircle on [-2, 2]."""
    if n < 2:
        raise SamplerError("n must be at least 2")
    symmetry = SymmetryClass.parse(symmetry)
    off, diag = gaussian_reference_variances(n, symmetry)
    h = _fill(n, off, diag, symmetry, "gaussian", seed)
    return MatrixSample(h, symmetry, int(seed), "gaussian", f"gaussian-reference-{symmetry.value}")


def dbm_interpolate(h0: MatrixSample, u: MatrixSample, t: float) -> MatrixSample:
    """``e^{-t/2} H0 + (1 - e^{-t})^{1/2} U``; variance profile ``e^{-t} S0 + (1-e^{-t}) S_G``."""
    if h0.symmetry != u.symmetry:
        raise SamplerError("symmetry classes differ")
    if h0.n != u.n:
        raise SamplerError("dimensions differ")
    if t < 0:
        raise SamplerError("t must be nonnegative")
    if t == 0:
        h = h0.h.copy()
    else:
        h = np.exp(-t / 2) * h0.h + np.sqrt(-np.expm1(-t)) * u.h
        # restore bit-exact self-adjointness
        h = np.triu(h) + np.triu(h, 1).conj().T
        if h0.symmetry == SymmetryClass.COMPLEX:
            np.fill_diagonal(h, np.diag(h).real)
    return MatrixSample(h, h0.symmetry, h0.seed, h0.distribution, None)


@dataclass
class MomentReport:
    k_max: int
    classes: list[dict]
    worst_ratio: dict[int, float]
    samples: int


def verify_moments(samples: Sequence[MatrixSample], profile: VarianceProfile, k_max: int = 4) -> MomentReport:
    """Empirical ``E|h_ij|^k / s_ij^{k/2}`` and signed ``E h_ij^k / s_ij^{k/2}`` per variance class.

    Entries sharing the same variance are pooled (the upper triangle only); zero-variance
    entries are checked to be exactly zero.
    """
    if not samples:
        raise SamplerError("no samples")
    s = profile.s
    iu, ju = np.triu_indices(profile.n)
    sv = s[iu, ju]
    stack = np.stack([smp.h[iu, ju] for smp in samples])
    classes = []
    worst: dict[int, float] = {}
    for val in np.unique(sv):
        cols = sv == val
        x = stack[:, cols].ravel()
        rec = {"variance": float(val), "entries": int(cols.sum()), "moments": {}, "signed": {}}
        if val == 0:
            rec["all_zero"] = bool(np.all(x == 0))
        else:
            for k in range(1, k_max + 1):
                ratio = float(np.mean(np.abs(x) ** k) / val ** (k / 2))
                signed = float(np.mean(x.real**k) / val ** (k / 2))
                rec["moments"][k] = ratio
                rec["signed"][k] = signed
                worst[k] = max(worst.get(k, 0.0), ratio)
        classes.append(rec)
    return MomentReport(k_max, classes, worst, len(samples))
