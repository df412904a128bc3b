"""Command-line experiment driver.

Exit status: 0 when every enabled check passes, 1 on a check failure, 2 on a
configuration error (nothing is written), 3 when the QVE solver does not converge.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .dos import (
    DosCurve,
    SupportStructure,
    density_of_states,
    detect_support,
    kappa,
    scaled_semicircle_stieltjes,
    semicircle_dos,
    semicircle_support,
)
from .envelope import EnvelopeDomainError, error_envelope
from .figures import emit_figure_data
from .profile import ProfileError, ProfileSpec, build_profile
from .qve import QveConvergenceError, QveSolution, SolverConfig, SpectralPoint, full_residual, solve_many
from .sampler import (
    DISTRIBUTIONS,
    MatrixSample,
    SamplerError,
    SymmetryClass,
    gaussian_reference_profile,
    reference_row_sum,
    sample,
    sample_gaussian_reference,
)
from .verify import (
    anisotropic_errors,
    calibrated,
    delocalization_check,
    gap_statistics,
    local_law_check,
    random_probe_pairs,
    random_unit_probes,
    rigidity_check,
    stieltjes_measure_distance,
)
from .verify.local_law import local_law_bound
from .verify.measure import profile_stieltjes

COMMANDS = (
    "qve-solve", "dos", "support", "verify-local-law", "rigidity", "delocalization",
    "anisotropic", "universality", "envelope", "measure-distance",
)
REPORT_SCHEMA = "qvelab.report/1"
MANIFEST_SCHEMA = "qvelab.manifest/1"


def _plain(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to ``None``."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, complex):
        return [_plain(obj.real), _plain(obj.imag)]
    return obj


def dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


class Context:
    """Validated inputs of one run: profile or reference ensemble, solver, samples."""

    def __init__(self, cfg: ExperimentConfig, workers: int = 1):
        self.cfg = cfg
        self.workers = max(1, int(workers))
        prof = dict(cfg.profile)
        s = cfg["samples"]
        try:
            self.symmetry = SymmetryClass.parse(s["symmetry"])
        except (ValueError, SamplerError) as exc:
            raise ConfigError(f"samples.symmetry: {exc}") from exc
        if s["distribution"] not in DISTRIBUTIONS:
            raise ConfigError(f"samples.distribution must be one of {DISTRIBUTIONS}")
        try:
            self.solver = SolverConfig(
                tol=cfg["solver"]["tol"], max_iter=cfg["solver"]["max_iter"], damping=cfg["solver"]["damping"],
                newton_fallback=cfg["solver"]["newton_fallback"], polish=cfg["solver"]["polish"],
            )
        except ValueError as exc:
            raise ConfigError(f"[solver] {exc}") from exc
        if "reference" in prof:
            if set(prof) - {"reference", "n"}:
                raise ConfigError("a reference [profile] takes only reference and n")
            try:
                self.symmetry = SymmetryClass.parse(prof["reference"])
            except (ValueError, SamplerError) as exc:
                raise ConfigError(f"profile.reference: {exc}") from exc
            self.n = int(prof["n"])
            if self.n < 2:
                raise ConfigError("profile.n must be at least 2")
            self.reference = True
            self.variance = reference_row_sum(self.n, self.symmetry)
            self.profile = None
        else:
            try:
                self.profile = build_profile(ProfileSpec.from_dict(prof))
            except (ProfileError, KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"[profile] {exc}") from exc
            self.n = self.profile.n
            self.reference = False
            self.variance = None
        self._dos: DosCurve | None = None
        self._support: SupportStructure | None = None
        self._samples: list[MatrixSample] | None = None
        self.warnings: list[str] = []

    @property
    def digest(self) -> str:
        return f"gaussian-reference-{self.symmetry.value}-{self.n}" if self.reference else self.profile.digest

    def pmap(self, fn: Callable, items) -> list:
        if self.workers == 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(self.workers) as pool:
            return list(pool.map(fn, items))

    def dos(self) -> DosCurve:
        if self._dos is None:
            grid = self.cfg.grid("dos_tau")
            if self.reference:
                self._dos = semicircle_dos(grid, self.variance)
            else:
                g = self.cfg["grid"]
                self._dos = density_of_states(self.profile, grid, g["eta_small"], g["extrapolate"], self.solver)
                if self._dos.failed.any():
                    raise QveConvergenceError(f"{int(self._dos.failed.sum())} density points did not converge")
        return self._dos

    def support(self) -> SupportStructure:
        if self._support is None:
            c = self.cfg["checks"]
            if self.reference:
                self._support = semicircle_support(self.variance, c["delta_star"], c["c_star"])
            else:
                self._support = detect_support(
                    self.dos(), profile=self.profile, delta_star=c["delta_star"], c_star=c["c_star"], config=self.solver
                )
                self.warnings.extend(self._support.warnings)
        return self._support

    def _draw(self, seed: int) -> MatrixSample:
        if self.reference:
            return sample_gaussian_reference(self.n, self.symmetry, seed)
        s = self.cfg["samples"]
        return sample(self.profile, self.symmetry, s["distribution"], seed,
                      re_fraction=s["re_fraction"], correlation=s["correlation"])

    def samples(self) -> list[MatrixSample]:
        if self._samples is None:
            self._samples = self.pmap(self._draw, self.cfg.seeds)
        return self._samples

    def stieltjes(self) -> Callable:
        if self.reference:
            return lambda z: scaled_semicircle_stieltjes(z, self.variance)
        return profile_stieltjes(self.profile, self.solver)

    def solutions(self, zs, strict: bool = True) -> list[QveSolution]:
        zs = np.asarray(zs, dtype=complex)
        if self.reference:
            ref = gaussian_reference_profile(self.n, self.symmetry)
            out = []
            for z in zs:
                m = np.full(self.n, complex(scaled_semicircle_stieltjes(z, self.variance)))
                res = full_residual(ref, z, m)
                out.append(QveSolution(SpectralPoint.from_complex(z), m, res, 0, bool(res <= self.solver.tol)))
        else:
            batch = solve_many(self.profile, zs, self.solver)
            full = batch.full()
            out = [
                QveSolution(SpectralPoint.from_complex(z), full[k], float(batch.residual[k]), 0,
                            bool(batch.converged[k]), "converged" if batch.converged[k] else "not-converged")
                for k, z in enumerate(zs)
            ]
        bad = [s for s in out if not s.converged]
        if bad and strict:
            raise QveConvergenceError(f"{len(bad)} of {len(out)} spectral points did not converge", bad[0].z.eta, out)
        return out

    def z_grid(self) -> np.ndarray:
        tau, eta = self.cfg.grid("tau"), self.cfg.grid("eta")
        return (tau[:, None] + 1j * eta[None, :]).ravel()


class Artifacts:
    """Writes files under the output directory and keeps the inventory."""

    def __init__(self, root: Path):
        self.root = root
        self.files: list[str] = []

    def write(self, name: str, text: str) -> None:
        (self.root / name).write_text(text, encoding="utf-8", newline="\n")
        if name not in self.files:
            self.files.append(name)


# --------------------------------------------------------------------------- #
# Commands. Each returns (result dict, checks dict name -> bool).

def _qve_solve(ctx: Context, art: Artifacts):
    try:
        sols = ctx.solutions(ctx.z_grid(), strict=False)
    except QveConvergenceError as exc:  # pragma: no cover - strict=False never raises
        sols = exc.partial
    rows = ["tau,eta,re_mean,im_mean,density,residual,converged\n"]
    for s in sols:
        rows.append(f"{s.z.tau!r},{s.z.eta!r},{s.mean.real!r},{s.mean.imag!r},{s.density!r},{s.residual!r},"
                    f"{str(s.converged).lower()}\n")
    art.write("qve.csv", "".join(rows))
    art.write("qve.jsonl", "".join(dumps(s.to_dict()).replace("\n", "") + "\n" for s in sols))
    failed = [s for s in sols if not s.converged]
    if failed:
        raise QveConvergenceError(f"{len(failed)} of {len(sols)} spectral points did not converge")
    return {"points": len(sols), "max_residual": max(s.residual for s in sols)}, {}


def _dos(ctx: Context, art: Artifacts):
    dos = ctx.dos()
    art.write("dos.csv", emit_figure_data(dos, "dos-curve"))
    tol = ctx.cfg["checks"]["mass_tol"]
    result = {"mass": dos.mass, "eta_used": dos.eta_used, "rho_at_zero": float(dos.rho_at(0.0))}
    return result, {"normalization": abs(dos.mass - 1) <= tol}


def _support(ctx: Context, art: Artifacts):
    result, checks = _dos(ctx, art)
    sup = ctx.support()
    result["support"] = sup.to_dict()
    return result, checks


def _local_law(ctx: Context, art: Artifacts):
    c = ctx.cfg["checks"]
    sols = ctx.solutions(ctx.z_grid())
    kappas = None
    if not c["bulk"]:
        sup = ctx.support()
        kappas = [kappa(sup, s.z, ctx.n, rho_z=s.density, gamma=c["gamma"]).value for s in sols]
    rep = local_law_check(ctx.samples(), sols, kappas, bulk=c["bulk"], c=c["c"], alpha=c["alpha"])
    art.write("local_law_scan.csv", emit_figure_data(rep, "local-law-scan"))
    checks = {"entrywise": rep.entrywise.passed, "averaged": rep.averaged.passed, "ward": rep.ward_max <= c["ward_tol"]}
    return rep.to_dict(), checks


def _rigidity(ctx: Context, art: Artifacts):
    c, r = ctx.cfg["checks"], ctx.cfg["rigidity"]
    taus = r["tau"] if r["tau"] else ctx.cfg.grid("tau").tolist()
    rep = rigidity_check(ctx.samples(), ctx.dos(), ctx.support(), [float(t) for t in taus], c["gamma"], c["c"],
                         check_gaps=r["empty_gaps"])
    art.write("rigidity_scatter.csv", emit_figure_data(rep, "rigidity-scatter"))
    tol = r["bulk_tolerance"] / ctx.n if r["bulk_tolerance"] > 0 else None
    checks = {}
    result = rep.to_dict()
    for regime, req, t in (("bulk", r["bulk_required"], tol), ("extreme-edge", r["edge_required"], None),
                           ("internal-edge", r["edge_required"], None)):
        v = rep.verdict(regime, req, t)
        result[f"verdict_{regime}"] = v.to_dict()
        if v.count:
            checks[regime] = v.passed
    if rep.gaps is not None:
        if rep.gaps.internal.count:
            checks["empty-internal-gaps"] = rep.gaps.internal.passed
        checks["empty-outer-gaps"] = rep.gaps.outer.passed
    return result, checks


def _delocalization(ctx: Context, art: Artifacts):
    d = ctx.cfg["delocalization"]
    probes = random_unit_probes(ctx.n, d["probes"], d["probe_seed"]) if d["probes"] else None
    rep = delocalization_check(ctx.samples(), probes, d["c"], d["required"])
    return rep.to_dict(), {"delocalization": rep.verdict.passed}


def _anisotropic(ctx: Context, art: Artifacts):
    c, a = ctx.cfg["checks"], ctx.cfg["anisotropic"]
    sols = ctx.solutions(ctx.z_grid())
    sup = ctx.support()
    pairs = random_probe_pairs(ctx.n, a["pairs"], a["probe_seed"])
    errs, bounds, per_z = [], [], []
    for sol in sols:
        k = kappa(sup, sol.z, ctx.n, rho_z=sol.density, gamma=c["gamma"]).value
        b = local_law_bound(sol.density, ctx.n, sol.z.eta, k)
        e = np.concatenate([anisotropic_errors(s, sol.m, sol.z.z, pairs) for s in ctx.samples()])
        errs.append(e)
        bounds.append(np.full(e.shape, b))
        per_z.append({"tau": sol.z.tau, "eta": sol.z.eta, "bound": b, "max_error": float(e.max()), "kappa": k})
    v = calibrated(np.concatenate(errs), np.concatenate(bounds), c["c"], c["alpha"])
    return {"points": per_z, "verdict": v.to_dict()}, {"anisotropic": v.passed}


def _universality(ctx: Context, art: Artifacts):
    u = ctx.cfg["universality"]
    ref = ctx.pmap(lambda sd: sample_gaussian_reference(ctx.n, ctx.symmetry, sd),
                   [int(u["reference_seed"]) ^ i for i in range(int(u["reference_count"]))])
    stats = gap_statistics(ctx.samples(), ref, ctx.dos(), tuple(u["window"]), u["min_rho"],
                           min_pool=u["min_pool"], bump_sigmas=u["bump_sigmas"])
    if stats.gaps.size and stats.reference_gaps.size:
        art.write("gap_cdf.csv", emit_figure_data(stats, "gap-cdf"))
    if stats.inconclusive:
        ctx.warnings.append("gap pool smaller than min_pool: inconclusive")
        return stats.to_dict(), {}
    checks = {"ks": stats.ks_distance <= u["ks_max"], "bumps": all(b.agree for b in stats.bumps)}
    return stats.to_dict(), checks


def _envelope(ctx: Context, art: Artifacts):
    c, e = ctx.cfg["checks"], ctx.cfg["envelope"]
    sup = ctx.support()
    dos = None if ctx.reference else ctx.dos()
    etas = np.sort(ctx.cfg.grid("eta"))
    eps_t = e["eps_tilde"] if e["eps_tilde"] > 0 else None
    rows, monotone = [], True
    for mn in sup.minima:
        env = error_envelope(sup, dos, mn.tau, ctx.n, c["gamma"], eps_t)
        for om in e["omega"]:
            try:
                vals = env.evaluate(float(om), etas)
            except EnvelopeDomainError as exc:
                rows.append({"tau0": mn.tau, "kind": mn.kind, "omega": om, "skipped": str(exc)})
                continue
            dec = bool(np.all(np.diff(vals) < 0))
            monotone &= dec
            rows.append({"tau0": mn.tau, "kind": mn.kind, "omega": om, "eta": etas, "envelope": vals, "decreasing": dec})
    return {"envelopes": rows}, {"monotone": monotone}


def _measure(ctx: Context, art: Artifacts):
    m = ctx.cfg["measure"]
    n = ctx.n
    eta1 = m["eta1"] or n ** -0.8
    eta2 = m["eta2"] or n ** -0.8
    eps = m["eps"] or max(n ** -0.5, eta1, eta2)
    f = ctx.stieltjes()
    recs = []
    for smp in ctx.samples():
        for a, b in m["intervals"]:
            r = stieltjes_measure_distance(smp.eigenvalues, ctx.dos(), (float(a), float(b)), eta1, eta2, eps, f)
            recs.append({"seed": smp.seed, "interval": [a, b], **r.to_dict()})
    return {"eta1": eta1, "eta2": eta2, "eps": eps, "records": recs}, {"bound": all(r["holds"] for r in recs)}


RUNNERS = {
    "qve-solve": _qve_solve, "dos": _dos, "support": _support, "verify-local-law": _local_law,
    "rigidity": _rigidity, "delocalization": _delocalization, "anisotropic": _anisotropic,
    "universality": _universality, "envelope": _envelope, "measure-distance": _measure,
}
REPORT_FILES = {
    "qve-solve": "qve_report.json", "dos": "dos.json", "support": "support.json",
    "verify-local-law": "local_law.json", "rigidity": "rigidity.json", "delocalization": "delocalization.json",
    "anisotropic": "anisotropic.json", "universality": "universality.json", "envelope": "envelope.json",
    "measure-distance": "measure.json",
}


def _stamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def run(command: str, cfg: ExperimentConfig, workers: int = 1, strict: bool = False) -> int:
    """Execute ``command``; writes the manifest before and after. Returns the exit code."""
    ctx = Context(cfg, workers)  # may raise ConfigError before anything is written
    root = Path(cfg["output"]["dir"])
    root.mkdir(parents=True, exist_ok=True)
    art = Artifacts(root)
    manifest = {
        "schema": MANIFEST_SCHEMA, "command": command, "config_hash": cfg.digest, "code_version": __version__,
        "started": _stamp(), "finished": None, "status": "running", "exit_code": None,
        "stages": {command: "running"}, "files": [],
    }
    mpath = root / "manifest.json"
    mpath.write_text(dumps(manifest), encoding="utf-8")
    code, result, checks, error = 0, {}, {}, None
    try:
        result, checks = RUNNERS[command](ctx, art)
        failed = [k for k, ok in checks.items() if not ok]
        if failed or (strict and ctx.warnings):
            code = 1
        status = "ok" if code == 0 else "check-failed"
    except QveConvergenceError as exc:
        code, status, error = 3, "not-converged", str(exc)
    report = {
        "schema": REPORT_SCHEMA, "command": command, "config": cfg.raw, "config_hash": cfg.digest,
        "profile": ctx.digest, "seeds": cfg.seeds, "result": result, "checks": checks,
        "warnings": ctx.warnings, "error": error, "pass": code == 0,
    }
    art.write(REPORT_FILES[command], dumps(report))
    manifest.update(finished=_stamp(), status=status, exit_code=code, stages={command: status}, files=art.files)
    mpath.write_text(dumps(manifest), encoding="utf-8")
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qvelab", description="QVE solver and Wigner-type matrix verification runs.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="TOML experiment config")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.add_argument("--workers", type=int, default=1, help="max worker threads for per-sample work")
    p.add_argument("--seed", type=int, help="base seed (overrides [samples] seed)")
    p.add_argument("--strict", action="store_true", help="treat warnings and inconclusive results as failures")
    p.add_argument("--version", action="version", version=f"qvelab {__version__}")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        return run(args.command, cfg, args.workers, args.strict)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
