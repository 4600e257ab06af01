"""Command line driver and staged pipeline.

Every stage writes its artifact to disk and the next stage reads it back,
so each stage can be rerun on its own.  Reports are JSON; tables are also
written as CSV.  Exit codes: 0 success, 2 invalid input, 3 numeric
failure, 4 certification failure.

Model files (JSON or TOML) have the keys

``sites``
    number of oscillators ``n``.
``onsite``
    polynomial coefficients ``[c0, c1, c2, ...]`` of ``h(I) = sum c_k I^k``,
    either one list shared by all sites or one list per site.
``I_star``
    resonant actions (scalar or one value per site).
``couplings``
    list of ``{sites: [a, b], coef, amplitude: sqrt|product|const,
    trig: cos|sin, eps_power, phase}`` giving
    ``coef eps^eps_power amp(I_a, I_b) trig(phi_b - phi_a + phase)``.
``nearest_neighbour``
    optional list of coupling templates applied to every neighbouring pair.
``boundary``, ``k_res``, ``chart_mode``, ``name``
    optional.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import re
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .candidates import DEDUP_RADIUS, CandidateSet, solve_candidates, torus_distance, wrap
from .chart import EpsExpansion, ModelSpec, dnls_square_cell, expand_hamiltonian
from .continuation import (ModelField, PeriodMap, PeriodMapConfig, candidate_state, continue_candidate,
                           gamma_analysis, polish_candidate, spectrum)
from .errors import CertificationFailure, InvalidInputError, NumericFailure
from .estimates import EstimateParams, params_for, verify_lemmone
from .normal_form import (Caps, NormalFormResult, candidate_system, load_normal_form, normalize,
                          save_normal_form)

log = logging.getLogger("resonant_nf")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_CERT = 0, 2, 3, 4
NO_CANDIDATES = "no candidates; torus persists trivially"


# ------------------------------------------------------------------ io
def _clean(obj):
    """Make ``obj`` JSON-safe: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), sort_keys=True, indent=1) + "\n")


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def read_mapping(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"file {path} not found")
    text = path.read_text()
    if path.suffix == ".toml":
        try:
            import tomllib  # type: ignore[import-not-found]
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise InvalidInputError(f"bad TOML in {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"bad JSON in {path}: {exc}") from exc


_PI_TOKEN = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)?)\*?pi(?:/(\d+(?:\.\d*)?))?$")


def parse_angle(tok: str) -> float:
    """Float, or a multiple of pi such as ``pi``, ``-pi/2``, ``3pi/2``, ``0.5*pi``."""
    tok = tok.strip().lower()
    m = _PI_TOKEN.match(tok)
    try:
        if m:
            c = m.group(1)
            coef = 1.0 if c in ("", "+") else -1.0 if c == "-" else float(c)
            val = coef * math.pi / (float(m.group(2)) if m.group(2) else 1.0)
        else:
            val = float(tok)
    except (ValueError, ZeroDivisionError):
        raise InvalidInputError(f"cannot parse angle {tok!r}") from None
    if not math.isfinite(val):
        raise InvalidInputError(f"angle {tok!r} is not finite")
    return val


def parse_point(text: str) -> np.ndarray:
    return np.array([parse_angle(t) for t in text.split(",")])


def parse_eps_range(text: str) -> np.ndarray:
    """``a:b:n`` -> ``n`` geometrically spaced values from ``a`` to ``b``."""
    try:
        a, b, n = text.split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError:
        raise InvalidInputError(f"eps range must look like a:b:n, got {text!r}") from None
    if not (a > 0 and b > 0 and n >= 1):
        raise InvalidInputError("eps range needs positive bounds and n >= 1")
    return np.geomspace(a, b, n)


def load_model(spec: str | Path) -> ModelSpec:
    """Model from a file, or the built-in ``builtin:dnls`` cell."""
    if str(spec) == "builtin:dnls":
        return dnls_square_cell()
    return ModelSpec.from_file(spec)


def _nf_model(nf_dir: Path, override: str | None) -> ModelSpec:
    if override:
        return load_model(override)
    path = Path(nf_dir) / "model.json"
    if not path.exists():
        raise InvalidInputError(f"{nf_dir} has no model.json; pass --model")
    return ModelSpec.from_dict(read_mapping(path))


# ------------------------------------------------------------ stages
def stage_expand(model: ModelSpec, degree_cap: int, eps_cap: int, out: Path) -> Path:
    H0 = expand_hamiltonian(model, None, degree_cap, eps_cap)
    write_json(out / "model.json", model.to_dict())
    write_json(out / "H0.json", H0.to_dict())
    return out / "H0.json"


def stage_normalize(H0_path: Path, model: ModelSpec, order: int, rho: float, sigma: float, d: float,
                    out: Path, qstar: Sequence[float] | None = None) -> NormalFormResult:
    H0 = EpsExpansion.from_dict(read_mapping(H0_path))
    nf = normalize(H0, order, Caps(H0.degree_cap, H0.eps_cap), rho=rho, sigma=sigma, d=d, qstar=qstar)
    save_normal_form(nf, out)
    write_json(out / "model.json", model.to_dict())
    return nf


def _candidate_rows(cs: CandidateSet) -> list:
    rows = []
    for r in cs.isolated:
        rows.append({"kind": "isolated", "q": wrap(r.q).tolist(), "residual": r.residual, "det": r.det,
                     "kernel_dim": r.kernel_dim})
    for r in cs.polished:
        rows.append({"kind": "family-zero", "q": wrap(r.q).tolist(), "residual": r.residual, "det": r.det,
                     "kernel_dim": r.kernel_dim})
    if not cs.polished:
        for fam in cs.families:
            if fam.identically_zero:
                continue
            for z in fam.zeros:
                if any(torus_distance(z["q"], r["q"]) < DEDUP_RADIUS for r in rows):
                    continue  # family crossings are zeros of several families
                rows.append({"kind": "family-zero", "q": wrap(z["q"]).tolist(), "residual": None, "det": None,
                             "kernel_dim": None})
    return rows


def stage_candidates(nf_dir: Path, eps: float, grid: int, out: Path) -> dict:
    nf = load_normal_form(nf_dir)
    F = candidate_system(nf)
    if F.is_identically_zero():
        report = {"epsilon": eps, "candidates": [], "message": NO_CANDIDATES, "isolated": [], "families": [],
                  "intersections": []}
    else:
        cs = solve_candidates(F, eps, grid_per_angle=grid)
        report = cs.to_dict()
        report["candidates"] = _candidate_rows(cs)
        if not report["candidates"]:
            report["message"] = "no candidates found"
    write_json(out / "candidates.json", report)
    n = nf.H_r.n_dyn - 1
    write_csv(out / "candidates.csv", ["index", "kind"] + [f"q{j + 2}" for j in range(n)] +
              ["residual", "det", "kernel_dim"],
              [[i, c["kind"], *c["q"], c["residual"], c["det"], c["kernel_dim"]]
               for i, c in enumerate(report["candidates"])])
    return report


def _resolve_candidate(token: str, nf_dir: Path, candidates_file: str | None = None) -> np.ndarray:
    if re.fullmatch(r"\d+", token.strip()):
        path = Path(candidates_file) if candidates_file else Path(nf_dir) / "candidates.json"
        if not path.exists():
            raise InvalidInputError(f"candidate index given but {path} does not exist; run `candidates` first")
        cands = read_mapping(path).get("candidates", [])
        idx = int(token)
        if idx >= len(cands):
            raise InvalidInputError(f"candidate index {idx} out of range ({len(cands)} candidates)")
        return np.asarray(cands[idx]["q"], dtype=float)
    return parse_point(token)


def _cont_row(rec: dict) -> list:
    c = rec["certificate"]
    return [rec["epsilon"], *rec["candidate"], rec["residual"], rec["distance"], rec["iterations"],
            c["mu"], c["M"], c.get("C3"), c.get("h"), c["certified"]]


def stage_continue(nf_dir: Path, model: ModelSpec, points: Sequence, eps_list: Sequence[float], certify: bool,
                   out: Path) -> list:
    nf = load_normal_form(nf_dir)
    records = []
    for eps in eps_list:
        for idx, q in enumerate(points):
            try:
                rec = continue_candidate(model, nf, q, float(eps), certify=certify)
                rec["index"] = idx
            except NumericFailure as exc:
                rec = {"index": idx, "epsilon": float(eps), "candidate": [float(x) for x in q],
                       "error": type(exc).__name__, "message": str(exc)}
            records.append(rec)
    write_json(out / "continuation.json", records)
    n = nf.H_r.n_dyn - 1
    write_csv(out / "continuation.csv",
              ["index", "epsilon"] + [f"q{j + 2}" for j in range(n)] +
              ["residual", "distance", "iterations", "mu", "M", "C3", "h", "certified"],
              [[r["index"], *_cont_row(r)] for r in records if "error" not in r])
    return records


def stage_gamma(nf_dir: Path, model: ModelSpec, points: Sequence, eps0: float, out: Path) -> list:
    nf = load_normal_form(nf_dir)
    samples = [eps0 * 2 ** j for j in range(4)]
    rows = []
    for idx, q in enumerate(points):
        try:
            g = gamma_analysis(model, nf, q, samples)
        except NumericFailure as exc:
            g = {"q": [float(x) for x in q], "error": type(exc).__name__, "message": str(exc)}
        g["index"] = idx
        rows.append(g)
    write_json(out / "gamma.json", rows)
    write_csv(out / "gamma.csv", ["index", "det_B0_over_T", "gamma", "gamma_over_T", "fit_residual"],
              [[g["index"], g.get("det_B0_over_T"), g.get("gamma"), g.get("gamma_over_T"), g.get("fit_residual")]
               for g in rows])
    return rows


def stage_estimates(nf_dir: Path, out: Path, params: dict | None = None) -> dict:
    nf = load_normal_form(nf_dir)
    base = params_for(nf).to_dict()
    base.update(params or {})
    p = EstimateParams.from_dict(base)
    rep = verify_lemmone(nf, p, strict=False)
    report = rep.to_dict()
    write_json(out / "estimates.json", report)
    write_csv(out / "estimates.csv", ["r", "s", "l", "actual", "bound", "margin"],
              [[row["r"], row["s"], row["l"], row["actual"], row["bound"], row["margin"]] for row in rep.rows])
    return report


# ------------------------------------------------------------ manifest
@dataclass
class RunManifest:
    """Inputs of a full pipeline run."""

    model: str
    out: str
    order: int = 2
    chart_mode: str | None = None
    degree_cap: int = 3
    eps_cap: int = 3
    rho: float = 0.1
    sigma: float = 0.5
    d: float = 0.25
    eps: list = field(default_factory=lambda: [1e-3])
    grid: int = 16
    certify: bool = True
    gamma: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.order < 1:
            raise InvalidInputError("order must be at least 1")
        if not self.eps or any(not (float(e) > 0) for e in self.eps):
            raise InvalidInputError("eps values must be positive")
        if self.model != "builtin:dnls" and not Path(self.model).exists():
            raise InvalidInputError(f"model file {self.model} not found")
        if self.eps_cap < self.order:
            raise InvalidInputError("eps_cap must be at least the normalization order")
        self.eps = [float(e) for e in self.eps]

    @classmethod
    def from_file(cls, path: str | Path) -> "RunManifest":
        path = Path(path)
        data = read_mapping(path)
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise InvalidInputError(f"unknown manifest keys {unknown}")
        # relative paths are taken relative to the manifest
        for key in ("model", "out"):
            val = str(known.get(key, ""))
            if val and not val.startswith("builtin:") and not Path(val).is_absolute():
                known[key] = str(path.parent / val)
        try:
            return cls(**known)
        except TypeError as exc:
            raise InvalidInputError(f"incomplete manifest: {exc}") from None

    def to_dict(self) -> dict:
        return asdict(self)


def run_pipeline(manifest: RunManifest) -> tuple[int, dict]:
    """expand -> normalize -> candidates -> continue (+ gamma) -> verify-estimates.

    Returns the exit status and the summary; artifacts go to ``manifest.out``.
    A failing stage writes ``error.json`` and stops the run.
    """
    out = Path(manifest.out)
    out.mkdir(parents=True, exist_ok=True)
    np.random.seed(manifest.seed)
    write_json(out / "manifest.json", manifest.to_dict())
    summary: dict = {"manifest": manifest.to_dict(), "stages": []}
    stage = "expand"
    try:
        model = load_model(manifest.model)
        if manifest.chart_mode:
            model = replace(model, chart_mode=manifest.chart_mode)
        H0_path = stage_expand(model, manifest.degree_cap, manifest.eps_cap, out / "expand")
        summary["stages"].append(stage)

        stage = "normalize"
        nf = stage_normalize(H0_path, model, manifest.order, manifest.rho, manifest.sigma, manifest.d,
                             out / "normal_form")
        summary["normal_form"] = {"order": nf.order, "omega": nf.omega, "twist_m": nf.twist[1],
                                  "twist_C": nf.twist[0]}
        summary["stages"].append(stage)

        stage = "candidates"
        cand = stage_candidates(out / "normal_form", manifest.eps[0], manifest.grid, out / "candidates")
        # degenerate roots lie on orbit families the order cannot resolve; Newton needs isolated ones
        points = [np.asarray(c["q"]) for c in cand["candidates"] if not c["kernel_dim"]]
        summary["candidates"] = cand["candidates"]
        summary["skipped_degenerate"] = [c["q"] for c in cand["candidates"] if c["kernel_dim"]]
        summary["families"] = [{"length": f["length"], "closed": f["closed"],
                                "identically_zero": f["identically_zero"],
                                "zeros": [z["q"] for z in f["zeros"]]} for f in cand["families"]]
        summary["intersections"] = cand["intersections"]
        if "message" in cand:
            summary["message"] = cand["message"]
        summary["stages"].append(stage)

        status = EXIT_OK
        if points:
            stage = "continue"
            recs = stage_continue(out / "normal_form", model, points, manifest.eps, manifest.certify,
                                  out / "continuation")
            summary["continuation"] = [{k: r.get(k) for k in ("index", "epsilon", "candidate", "residual",
                                                               "distance", "converged", "error")}
                                       | {"certificate": r.get("certificate")} for r in recs]
            failed = [r for r in recs if "error" in r or not r["converged"]]
            uncertified = [r for r in recs if manifest.certify and "error" not in r
                           and not r["certificate"]["certified"]]
            if failed:
                status = EXIT_NUMERIC
            elif uncertified:
                status = EXIT_CERT
            summary["stages"].append(stage)
            if manifest.gamma:
                stage = "gamma"
                rows = stage_gamma(out / "normal_form", model, points, min(manifest.eps), out / "gamma")
                summary["gamma"] = [{k: g.get(k) for k in ("index", "q", "det_B0_over_T", "gamma", "gamma_over_T",
                                                           "error")} for g in rows]
                summary["stages"].append(stage)

        stage = "verify-estimates"
        est = stage_estimates(out / "normal_form", out / "estimates")
        summary["estimates"] = {"ok": est["ok"], "min_margin": est["min_margin"],
                                "epsilon_star_rough": est["epsilon_star_rough"]}
        if not est["ok"] and status == EXIT_OK:
            status = EXIT_CERT
        summary["stages"].append(stage)
    except (InvalidInputError, NumericFailure, CertificationFailure) as exc:
        code = exit_code(exc)
        err = {"stage": stage, "error": type(exc).__name__, "message": str(exc), "exit_code": code}
        write_json(out / "error.json", err)
        summary["error"] = err
        write_json(out / "summary.json", summary)
        return code, summary
    summary["exit_code"] = status
    write_json(out / "summary.json", summary)
    return status, summary


def example_manifest(out: str | Path) -> RunManifest:
    """Built-in four-site dNLS cell; order 3 so the Newton-Kantorovich test certifies at eps = 1e-3."""
    return RunManifest(model="builtin:dnls", out=str(out), order=3, degree_cap=3, eps_cap=3, eps=[1e-3])


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, InvalidInputError):
        return EXIT_INPUT
    if isinstance(exc, CertificationFailure):
        return EXIT_CERT
    if isinstance(exc, NumericFailure):
        return EXIT_NUMERIC
    return 1


# ------------------------------------------------------------ commands
def _emit(obj, out: str | None, name: str) -> None:
    if out:
        write_json(Path(out) / name, obj)
        print(str(Path(out) / name))
    else:
        print(json.dumps(_clean(obj), sort_keys=True, indent=1))


def cmd_normalize(a) -> int:
    model = load_model(a.model)
    out = Path(a.out)
    H0_path = stage_expand(model, a.degree_cap, a.eps_cap, out)
    qstar = parse_point(a.qstar) if a.qstar else None
    nf = stage_normalize(H0_path, model, a.order, a.rho, a.sigma, a.d, out, qstar)
    print(json.dumps(_clean({"out": str(out), "order": nf.order, "omega": nf.omega, "twist_m": nf.twist[1],
                             "norm_rows": len(nf.norm_report)}), sort_keys=True))
    return EXIT_OK


def cmd_candidates(a) -> int:
    out = Path(a.out) if a.out else Path(a.nf)
    rep = stage_candidates(Path(a.nf), a.eps, a.grid, out)
    print(json.dumps(_clean({"candidates": rep["candidates"], "n_families": len(rep["families"]),
                             "intersections": rep["intersections"], "message": rep.get("message")}),
                     sort_keys=True, indent=1))
    return EXIT_OK


def cmd_continue(a) -> int:
    nf = load_normal_form(a.nf)
    model = _nf_model(Path(a.nf), a.model)
    q = _resolve_candidate(a.candidate, Path(a.nf), a.candidates)
    rec = continue_candidate(model, nf, q, a.eps, certify=a.certify, rtol=a.rtol, atol=a.rtol * 1e-2)
    keys = ("x0", "x_star", "residual", "certificate", "floquet_spectrum", "candidate", "epsilon", "q1_0",
            "converged", "iterations", "distance", "reverify_residual", "period", "integrator")
    out = {k: rec[k] for k in keys}
    _emit(out, a.out, "continuation.json")
    if a.out:
        write_csv(Path(a.out) / "continuation.csv",
                  ["epsilon"] + [f"q{j + 2}" for j in range(len(q))] +
                  ["residual", "distance", "iterations", "mu", "M", "C3", "h", "certified"], [_cont_row(rec)])
    if not rec["converged"]:
        return EXIT_NUMERIC
    if a.certify and not rec["certificate"]["certified"]:
        return EXIT_CERT
    return EXIT_OK


def cmd_spectrum(a) -> int:
    nf = load_normal_form(a.nf)
    model = _nf_model(Path(a.nf), a.model)
    q = _resolve_candidate(a.candidate, Path(a.nf), a.candidates)
    F = candidate_system(nf)
    rows = []
    for eps in parse_eps_range(a.eps_range):
        qs = polish_candidate(F, q, eps) if a.polish else q
        q1, z = candidate_state(nf, qs, eps)
        pm = PeriodMap(ModelField(model, eps), PeriodMapConfig(epsilon=eps, omega=nf.omega, q1_0=q1,
                                                               rtol=a.rtol, atol=a.rtol * 1e-2))
        rows.append([float(eps), *spectrum(pm.jacobian(z))])
    header = ["eps"] + [f"abs_lambda_{j + 1}" for j in range(len(rows[0]) - 1)]
    if a.out:
        out = Path(a.out)
        write_csv(out / "spectrum.csv", header, rows)
        write_json(out / "spectrum.json", {"candidate": q, "rtol": a.rtol, "rows": rows})
        print(str(out / "spectrum.csv"))
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(x) for x in r])
    return EXIT_OK


def cmd_verify(a) -> int:
    params = read_mapping(a.params) if a.params else None
    out = Path(a.out) if a.out else Path(a.nf)
    rep = stage_estimates(Path(a.nf), out, params)
    print(json.dumps(_clean({"ok": rep["ok"], "min_margin": rep["min_margin"], "rows": len(rep["rows"]),
                             "csv": str(out / "estimates.csv")}), sort_keys=True))
    return EXIT_OK if rep["ok"] else EXIT_CERT


def cmd_example(a) -> int:
    m = example_manifest(a.out)
    write_json(Path(a.out) / "example_manifest.json", m.to_dict())
    status, summary = run_pipeline(m)
    print(str(Path(a.out) / "summary.json"))
    return status


def cmd_run(a) -> int:
    status, _ = run_pipeline(RunManifest.from_file(a.manifest))
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="resonant-nf", description=__doc__.split("\n\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("normalize", help="expand a model and build its resonant normal form")
    s.add_argument("--model", required=True, help="model file (JSON/TOML) or builtin:dnls")
    s.add_argument("--order", type=int, required=True)
    s.add_argument("--rho", type=float, default=0.1)
    s.add_argument("--sigma", type=float, default=0.5)
    s.add_argument("--d", type=float, default=0.25)
    s.add_argument("--degree-cap", type=int, default=3)
    s.add_argument("--eps-cap", type=int, default=None, help="defaults to max(order, 3)")
    s.add_argument("--qstar", default=None, help="numeric phase shifts, e.g. 0,0,pi (default: symbolic)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_normalize)

    s = sub.add_parser("candidates", help="solve the candidate system on the torus")
    s.add_argument("--nf", required=True)
    s.add_argument("--eps", type=float, default=0.0)
    s.add_argument("--grid", type=int, default=16)
    s.add_argument("--out", default=None, help="output directory (default: the normal form directory)")
    s.set_defaults(func=cmd_candidates)

    for name, func, hlp in (("continue", cmd_continue, "continue a candidate to a periodic orbit"),
                            ("spectrum", cmd_spectrum, "eigenvalue moduli of M(eps) over a range of eps")):
        s = sub.add_parser(name, help=hlp)
        s.add_argument("--nf", required=True)
        s.add_argument("--candidate", required=True, help="index into candidates.json or a point like 0,0,pi")
        s.add_argument("--candidates", default=None, help="candidates.json (default: inside --nf)")
        s.add_argument("--model", default=None, help="override the model stored with the normal form")
        s.add_argument("--rtol", type=float, default=1e-12)
        s.add_argument("--out", default=None)
        if name == "continue":
            s.add_argument("--eps", type=float, required=True)
            s.add_argument("--certify", action="store_true")
        else:
            s.add_argument("--eps-range", required=True, help="a:b:n, geometric spacing")
            s.add_argument("--no-polish", dest="polish", action="store_false")
        s.set_defaults(func=func)

    s = sub.add_parser("verify-estimates", help="check the norm bounds on a normalization run")
    s.add_argument("--nf", required=True)
    s.add_argument("--params", default=None, help="JSON/TOML overriding E, omega, m, rho, sigma, d")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("example-dnls", help="run the full pipeline on the four-site dNLS cell")
    s.add_argument("--out", default="dnls_run")
    s.set_defaults(func=cmd_example)

    s = sub.add_parser("run", help="run the pipeline described by a manifest")
    s.add_argument("--manifest", required=True)
    s.set_defaults(func=cmd_run)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(a, "eps_cap", "absent") is None:
        a.eps_cap = max(a.order, 3)
    try:
        return a.func(a)
    except (InvalidInputError, NumericFailure, CertificationFailure) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": exit_code(exc)}),
              file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
