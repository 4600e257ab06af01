"""Two-stage Lie-transform normalization around a completely resonant torus.

Each order ``r`` uses a generator ``chi0 = X0 + <zeta, q>`` (first stage:
average the constant term, translate the actions so the frequency stays
``omega``) and a generator ``chi2`` (second stage: average the part linear
in the actions).  The Hamiltonian is kept on the ``(l, s)`` grid of
``EpsExpansion``; ``l`` is the degree in the actions, ``s`` the power of
the small parameter.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .chart import EpsExpansion
from .errors import InvalidInputError, TwistError
from .ftseries import (DEFAULT_TERM_BUDGET, FTSeries, LieGenerator, average_q1, lie_series_apply,
                       partial_derivative, substitute_parameter_diagonal, substitute_slow_by_parameters,
                       substitute_slow_numeric, weighted_norm)


@dataclass(frozen=True)
class Caps:
    degree_cap: int
    eps_cap: int
    term_budget: int = DEFAULT_TERM_BUDGET


@dataclass
class GeneratingStep:
    """Generators of normalization order ``r``.

    ``zeta`` is the action translation: the transformation maps
    ``p_old = p_new - eps^r zeta(q*)`` at leading order, so the normalized
    torus ``p_new = 0`` sits at the original actions ``action_offset()``.
    """

    r: int
    X0: FTSeries
    zeta: list
    chi2: FTSeries

    @property
    def chi0(self) -> LieGenerator | None:
        has_x = not self.X0.is_zero()
        has_z = any(not z.is_zero() for z in self.zeta)
        if not (has_x or has_z):
            return None
        return LieGenerator(self.X0 if has_x else None, self.zeta if has_z else None)

    def action_offset(self) -> list:
        """Components ``-zeta_j``: where ``p_new = 0`` lies in the old actions (per unit ``eps^r``)."""
        return [z.scale(-1.0) for z in self.zeta]

    def is_trivial(self) -> bool:
        return self.chi0 is None and self.chi2.is_zero()

    def to_dict(self) -> dict:
        return {"r": self.r, "X0": self.X0.to_dict(), "zeta": [z.to_dict() for z in self.zeta],
                "chi2": self.chi2.to_dict()}

    @classmethod
    def from_dict(cls, data) -> "GeneratingStep":
        return cls(int(data["r"]), FTSeries.from_dict(data["X0"]),
                   [FTSeries.from_dict(z) for z in data["zeta"]], FTSeries.from_dict(data["chi2"]))


@dataclass
class NormalFormResult:
    H_r: EpsExpansion
    steps: list
    twist: tuple
    potential_terms: list
    norm_report: list
    history: list = field(default_factory=list)
    stage_one: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    @property
    def order(self) -> int:
        return len(self.steps)

    @property
    def omega(self) -> float:
        return self.H_r.omega


# ----------------------------------------------------------------- twist
def twist_matrix(H0: EpsExpansion) -> tuple[np.ndarray, float]:
    """Hessian ``C`` of the quadratic action term and ``m = 1 / ||C^{-1}||_1``."""
    f4 = H0.get(2, 0)
    n = H0.n_dyn
    C = np.zeros((n, n))
    for (i, k, m), c in f4:
        if any(k) or any(m):
            raise InvalidInputError("quadratic unperturbed term depends on the angles")
        idx = [j for j, e in enumerate(i) for _ in range(e)]
        a, b = idx
        if a == b:
            C[a, a] += 2 * c.real
        else:
            C[a, b] += c.real
            C[b, a] += c.real
    if f4.is_zero() or np.linalg.cond(C) > 1e12:
        raise TwistError("quadratic action matrix is singular: twist condition fails")
    m = 1.0 / np.linalg.norm(np.linalg.inv(C), 1)
    return C, float(m)


# ------------------------------------------------------ homological equations
def _divide_by_fast_frequency(f: FTSeries, omega: float) -> FTSeries:
    if omega == 0:
        raise InvalidInputError("resonant frequency must be nonzero")
    return f.with_terms({key: c / (1j * key[1][0] * omega) for key, c in f if key[1][0] != 0})


def solve_X0(f0_rr: FTSeries, omega: float) -> FTSeries:
    """Solve ``L_X0(omega p_1) + f = <f>_{q_1}`` for ``f`` independent of the actions."""
    if f0_rr.grade != 0:
        raise InvalidInputError("X0 is defined for grade-0 terms")
    return _divide_by_fast_frequency(f0_rr, omega)


def solve_chi2(f2_I: FTSeries, omega: float) -> FTSeries:
    """Solve ``L_chi2(omega p_1) + f = <f>_{q_1}`` for ``f`` linear in the actions."""
    if f2_I.grade != 1:
        raise InvalidInputError("chi2 is defined for grade-1 terms")
    return _divide_by_fast_frequency(f2_I, omega)


def solve_zeta(f2_rr: FTSeries, C: np.ndarray, qstar: Sequence[float] | None = None) -> list:
    """Translation cancelling the averaged linear term at ``q = q*``.

    Solves ``L_<zeta,q> f_4 + <f_2|_{q=q*}>_{q_1} = 0``, i.e.
    ``C zeta = grad_p <f_2|_{q=q*}>``.  With ``qstar=None`` the result is a
    trigonometric polynomial in the parameter angles, otherwise constant.
    """
    n = f2_rr.n_dyn
    C = np.asarray(C, dtype=float)
    if C.shape != (n, n):
        raise InvalidInputError("twist matrix has the wrong shape")
    if np.linalg.cond(C) > 1e12:
        raise TwistError("singular twist matrix")
    if f2_rr.is_zero():
        return [FTSeries.zero(n, f2_rr.n_par, 0) for _ in range(n)]
    if qstar is None:
        g = average_q1(substitute_slow_by_parameters(f2_rr))
    else:
        g = average_q1(substitute_slow_numeric(f2_rr, qstar))
    grads = [partial_derivative(g, "p", i) for i in range(n)]
    Cinv = np.linalg.inv(C)
    zeta = []
    for j in range(n):
        z = FTSeries.zero(n, f2_rr.n_par, 0)
        for i in range(n):
            if Cinv[j, i] != 0 and not grads[i].is_zero():
                z = z + grads[i].scale(Cinv[j, i])
        zeta.append(z)
    return zeta


# ------------------------------------------------------------- transforms
def transform_expansion(H: EpsExpansion, chi: LieGenerator | None, r: int, caps: Caps) -> EpsExpansion:
    """``exp(L_chi) H`` on the grid, with ``chi`` of order ``eps^r``."""
    if chi is None or chi.is_zero():
        return H.copy_with(dict(H.terms))
    out: dict[tuple, FTSeries] = {}
    for (l, s), f in sorted(H.terms.items()):
        pieces = lie_series_apply(chi, f, r, caps.eps_cap, caps.degree_cap, order_of_f=s,
                                  term_budget=caps.term_budget)
        for s2, g in enumerate(pieces):
            if g is None or g.is_zero():
                continue
            key = (g.grade, s2)
            out[key] = out[key] + g if key in out else g
    return H.copy_with(out)


def first_stage(H_prev: EpsExpansion, step: GeneratingStep, caps: Caps) -> EpsExpansion:
    """``exp(L_chi0) H``; the order-``r`` constant term becomes ``<f_0^{(r-1,r)}>_{q_1}``.

    The pure-parameter constant ``-omega zeta_1(q*)`` produced by the
    translation acting on ``omega p_1`` carries no dynamics and is dropped.
    """
    out = transform_expansion(H_prev, step.chi0, step.r, caps)
    terms = dict(out.terms)
    terms[(0, step.r)] = average_q1(H_prev.get(0, step.r))
    return out.copy_with(terms)


def second_stage(H_I: EpsExpansion, chi2: FTSeries, r: int, caps: Caps) -> EpsExpansion:
    """``exp(L_chi2) H``; the order-``r`` linear term becomes its ``q_1``-average."""
    gen = None if chi2.is_zero() else LieGenerator(chi2)
    out = transform_expansion(H_I, gen, r, caps)
    terms = dict(out.terms)
    terms[(1, r)] = average_q1(H_I.get(1, r))
    return out.copy_with(terms)


# --------------------------------------------------------------- driver
def normalize(H0: EpsExpansion, r_max: int, caps: Caps | None = None, rho: float = 0.1,
              sigma: float = 0.5, d: float = 0.25, qstar: Sequence[float] | None = None) -> NormalFormResult:
    """Normalize ``H0`` up to order ``r_max``.

    ``qstar=None`` keeps the phase shifts as free parameters (the default);
    a numeric ``qstar`` evaluates the translations at that point.
    """
    from .estimates import restriction_sequence

    if r_max < 1:
        raise InvalidInputError("normalization order must be at least 1")
    caps = caps or Caps(H0.degree_cap, H0.eps_cap)
    if r_max > caps.eps_cap:
        raise InvalidInputError(f"order {r_max} exceeds eps_cap {caps.eps_cap}")
    if qstar is None and H0.n_par != H0.n_dyn - 1:
        raise InvalidInputError("parametric mode needs one parameter angle per slow angle")
    C, m = twist_matrix(H0)
    omega = H0.omega
    H = H0.copy_with({key: f for key, f in H0.terms.items()
                      if key[0] <= caps.degree_cap and key[1] <= caps.eps_cap})
    d_seq = restriction_sequence(d, r_max)
    history = [H]
    stage_one = []
    steps = []
    report = []
    for r in range(1, r_max + 1):
        X0 = solve_X0(H.get(0, r), omega)
        zeta = solve_zeta(H.get(1, r), C, qstar)
        step = GeneratingStep(r, X0, zeta, FTSeries.zero(H.n_dyn, H.n_par, 1))
        H_I = first_stage(H, step, caps)
        chi2 = solve_chi2(H_I.get(1, r), omega)
        step.chi2 = chi2
        H = second_stage(H_I, chi2, r, caps)
        steps.append(step)
        stage_one.append(H_I)
        history.append(H)
        alpha = 1.0 - d_seq[r]
        for (l, s) in H.keys():
            report.append({"r": r, "s": s, "l": l, "norm": weighted_norm(H.terms[(l, s)], rho, sigma, alpha)})
    potential = [substitute_parameter_diagonal(H.get(0, s)) if qstar is None else H.get(0, s)
                 for s in range(1, r_max + 1)]
    return NormalFormResult(H_r=H, steps=steps, twist=(C, m), potential_terms=potential, norm_report=report,
                            history=history, stage_one=stage_one,
                            params={"rho": rho, "sigma": sigma, "d": d, "degree_cap": caps.degree_cap,
                                    "eps_cap": caps.eps_cap,
                                    "qstar": None if qstar is None else [float(x) for x in qstar]})


def normal_form_defect(nf: NormalFormResult) -> float:
    """Largest coefficient of ``f - <f>_{q_1}`` over the normalized slots ``s <= r``."""
    worst = 0.0
    for r, H in enumerate(nf.history[1:], start=1):
        for s in range(1, r + 1):
            for l in (0, 1):
                f = H.get(l, s)
                worst = max(worst, f.max_difference(average_q1(f)))
    return worst


def linear_term_at_qstar(nf: NormalFormResult) -> FTSeries:
    """``sum_{s<=r} f_2^{(r,s)}`` with the slow angles set to ``q*`` (vanishes in normal form)."""
    H = nf.H_r
    total = FTSeries.zero(H.n_dyn, H.n_par, 1)
    for s in range(1, nf.order + 1):
        f = H.get(1, s)
        if nf.params.get("qstar") is None:
            total = total + substitute_slow_by_parameters(f)
        else:
            total = total + substitute_slow_numeric(f, nf.params["qstar"])
    return total


# --------------------------------------------------------- candidate system
class CandidateSystem:
    """``F(q, eps) = sum_s eps^s F_s(q)`` on the torus of slow angles."""

    def __init__(self, components: Sequence[Sequence[FTSeries]]):
        self.components = [list(c) for c in components]
        if not self.components:
            raise InvalidInputError("empty candidate system")
        self.n_slow = len(self.components[0])
        self._compiled = [self._compile(c) for c in self.components]

    def _compile(self, comps):
        K_rows, C_rows, idx = [], [], []
        for j, f in enumerate(comps):
            if f.is_zero():
                continue
            _, K, _, C = f.arrays()
            K_rows.append(K[:, 1:].astype(float))
            C_rows.append(C)
            idx.append(np.full(len(C), j))
        if not C_rows:
            return None
        return np.vstack(K_rows), np.concatenate(C_rows), np.concatenate(idx)

    @property
    def order(self) -> int:
        return len(self.components)

    def truncated(self, n_orders: int) -> "CandidateSystem":
        return CandidateSystem(self.components[:n_orders])

    def part(self, s: int) -> "CandidateSystem":
        return CandidateSystem([self.components[s]])

    def is_identically_zero(self) -> bool:
        return all(f.is_zero() for comps in self.components for f in comps)

    def _terms(self, q, eps):
        q = np.atleast_2d(np.asarray(q, dtype=float))
        out = []
        for s, comp in enumerate(self._compiled):
            if comp is None:
                continue
            K, C, idx = comp
            out.append((K, C * eps ** s, idx))
        return q, out

    def value(self, q, eps: float = 0.0) -> np.ndarray:
        single = np.ndim(q) == 1
        q, parts = self._terms(q, eps)
        F = np.zeros((len(q), self.n_slow))
        for K, C, idx in parts:
            e = np.exp(1j * (q @ K.T)) * C[None, :]
            for j in range(self.n_slow):
                F[:, j] += e[:, idx == j].sum(axis=1).real
        return F[0] if single else F

    def jacobian(self, q, eps: float = 0.0) -> np.ndarray:
        single = np.ndim(q) == 1
        q, parts = self._terms(q, eps)
        Jm = np.zeros((len(q), self.n_slow, self.n_slow))
        for K, C, idx in parts:
            e = np.exp(1j * (q @ K.T)) * C[None, :]
            for j in range(self.n_slow):
                sel = idx == j
                Jm[:, j, :] += (1j * e[:, sel] @ K[sel]).real
        return Jm[0] if single else Jm

    def to_dict(self) -> dict:
        return {"components": [[f.to_dict() for f in comps] for comps in self.components]}

    @classmethod
    def from_dict(cls, data) -> "CandidateSystem":
        return cls([[FTSeries.from_dict(f) for f in comps] for comps in data["components"]])


def candidate_system(nf: NormalFormResult) -> CandidateSystem:
    """``F_s = grad_q f_0^{(r,s+1)}`` (gradient in the dynamic slow angles), then ``q* -> q``."""
    H = nf.H_r
    comps = []
    for s in range(nf.order):
        f = H.get(0, s + 1)
        row = []
        for j in range(1, H.n_dyn):
            g = partial_derivative(f, "q", j)
            if nf.params.get("qstar") is None and H.n_par == H.n_dyn - 1:
                g = substitute_parameter_diagonal(g)
            row.append(g)
        comps.append(row)
    return CandidateSystem(comps)


# ------------------------------------------------------------ persistence
def save_normal_form(nf: NormalFormResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for r, H in enumerate(nf.history):
        (out / f"H_order{r}.json").write_text(json.dumps(H.to_dict(), sort_keys=True))
    (out / "steps.json").write_text(json.dumps([s.to_dict() for s in nf.steps], sort_keys=True))
    C, m = nf.twist
    meta = {"order": nf.order, "twist_C": C.tolist(), "twist_m": m, "params": nf.params,
            "omega": nf.omega}
    (out / "normal_form.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
    for r, H in enumerate(nf.stage_one, start=1):
        (out / f"H_stage_one{r}.json").write_text(json.dumps(H.to_dict(), sort_keys=True))
    with open(out / "norm_report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "s", "l", "norm"])
        for row in nf.norm_report:
            w.writerow([row["r"], row["s"], row["l"], repr(float(row["norm"]))])


def load_normal_form(in_dir: str | Path) -> NormalFormResult:
    d = Path(in_dir)
    meta_path = d / "normal_form.json"
    if not meta_path.exists():
        raise InvalidInputError(f"{d} does not contain a normal form (normal_form.json missing)")
    meta = json.loads(meta_path.read_text())
    r_max = int(meta["order"])
    history = [EpsExpansion.from_dict(json.loads((d / f"H_order{r}.json").read_text())) for r in range(r_max + 1)]
    stage_one = [EpsExpansion.from_dict(json.loads((d / f"H_stage_one{r}.json").read_text()))
                 for r in range(1, r_max + 1)]
    steps = [GeneratingStep.from_dict(s) for s in json.loads((d / "steps.json").read_text())]
    report = []
    with open(d / "norm_report.csv") as fh:
        for row in csv.DictReader(fh):
            report.append({"r": int(row["r"]), "s": int(row["s"]), "l": int(row["l"]), "norm": float(row["norm"])})
    H = history[-1]
    qs = meta["params"].get("qstar")
    potential = [substitute_parameter_diagonal(H.get(0, s)) if qs is None else H.get(0, s)
                 for s in range(1, r_max + 1)]
    return NormalFormResult(H_r=H, steps=steps, twist=(np.asarray(meta["twist_C"]), float(meta["twist_m"])),
                            potential_terms=potential, norm_report=report, history=history,
                            stage_one=stage_one, params=meta["params"])
