"""Resonant action-angle charts and lattice models expanded around a resonant torus."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, InvalidInputError, UnsupportedResonanceError
from .ftseries import FTSeries, evaluate, multiply

CHART_MODES = ("first-angle-differences", "consecutive-differences", "custom")


@dataclass(frozen=True)
class ResonantChart:
    """Unimodular linear chart ``q = A phi``, ``p = A^{-T} J``.

    ``p_1 = <k_res, J>`` is conjugate to the fast angle, the remaining
    angles are constant along the unperturbed resonant flow.
    """

    n: int
    k_res: tuple
    A: np.ndarray
    A_inv: np.ndarray
    mode: str
    I_star: np.ndarray | None = None
    omega: float | None = None

    @property
    def A_invT(self) -> np.ndarray:
        return self.A_inv.T

    def actions_from_p(self, p) -> np.ndarray:
        """``J = A^T p``."""
        return self.A.T @ np.asarray(p, dtype=float)

    def p_from_actions(self, J) -> np.ndarray:
        return self.A_invT @ np.asarray(J, dtype=float)

    def angles_from_q(self, q) -> np.ndarray:
        """``phi = A^{-1} q``."""
        return self.A_inv @ np.asarray(q, dtype=float)

    def q_from_angles(self, phi) -> np.ndarray:
        return self.A @ np.asarray(phi, dtype=float)

    def to_dict(self) -> dict:
        return {"n": self.n, "k_res": list(self.k_res), "A": self.A.tolist(), "mode": self.mode,
                "I_star": None if self.I_star is None else [float(x) for x in self.I_star],
                "omega": self.omega}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ResonantChart":
        ch = build_chart(data["k_res"], mode="custom", matrix=data["A"])
        I_star = None if data.get("I_star") is None else np.asarray(data["I_star"], dtype=float)
        return replace(ch, mode=data.get("mode", "custom"), I_star=I_star, omega=data.get("omega"))


def _integer_inverse(A: np.ndarray) -> np.ndarray:
    det = round(float(np.linalg.det(A)))
    if abs(det) != 1:
        raise InvalidInputError(f"matrix is not unimodular (det = {np.linalg.det(A):.6g})")
    A_inv = np.rint(np.linalg.inv(A)).astype(np.int64)
    if not np.array_equal(A @ A_inv, np.eye(len(A), dtype=np.int64)):
        raise InvalidInputError("integer inverse check failed")
    return A_inv


def build_chart(k_res: Sequence[int], mode: str = "consecutive-differences",
                matrix: Sequence[Sequence[int]] | None = None,
                I_star=None, omega: float | None = None) -> ResonantChart:
    """Build a unimodular resonant chart for the resonance vector ``k_res``.

    Modes: ``first-angle-differences`` (``q_j = k_j phi_1 - phi_j``),
    ``consecutive-differences`` (``q_j = phi_j - phi_{j-1}``, needs
    ``k_res = (1, ..., 1)``) or ``custom`` with an explicit integer matrix.
    """
    k = tuple(int(x) for x in k_res)
    n = len(k)
    if n < 1:
        raise InvalidInputError("empty resonance vector")
    if k[0] != 1:
        raise UnsupportedResonanceError(f"first resonance component must be 1, got {k[0]}")
    if mode == "first-angle-differences":
        A = np.zeros((n, n), dtype=np.int64)
        A[0, 0] = 1
        for j in range(1, n):
            A[j, 0] = k[j]
            A[j, j] = -1
    elif mode == "consecutive-differences":
        if any(x != 1 for x in k):
            raise InvalidInputError("consecutive differences need k_res = (1, ..., 1)")
        A = np.eye(n, dtype=np.int64)
        for j in range(1, n):
            A[j, j - 1] = -1
    elif mode == "custom":
        if matrix is None:
            raise InvalidInputError("custom chart needs a matrix")
        arr = np.asarray(matrix)
        if arr.shape != (n, n) or not np.all(np.equal(np.mod(arr, 1), 0)):
            raise InvalidInputError("custom matrix must be an integer n x n matrix")
        A = arr.astype(np.int64)
    else:
        raise InvalidInputError(f"unknown chart mode {mode!r}")
    A_inv = _integer_inverse(A)
    if tuple(A_inv[:, 0]) != k:
        raise InvalidInputError("chart is not adapted to k_res: first row of A^{-T} must equal k_res")
    return ResonantChart(n=n, k_res=k, A=A, A_inv=A_inv, mode=mode,
                         I_star=None if I_star is None else np.asarray(I_star, dtype=float),
                         omega=omega)


# ------------------------------------------------------------------ models
AMPLITUDES = ("sqrt", "product", "const")
TRIGS = ("cos", "sin")


@dataclass(frozen=True)
class Coupling:
    """``coef * eps^eps_power * amp(I_a, I_b) * trig(phi_b - phi_a + phase)``."""

    sites: tuple
    coef: float = 1.0
    amplitude: str = "sqrt"
    trig: str = "cos"
    eps_power: int = 1
    phase: float = 0.0

    def to_dict(self) -> dict:
        return {"sites": list(self.sites), "coef": self.coef, "amplitude": self.amplitude,
                "trig": self.trig, "eps_power": self.eps_power, "phase": self.phase}


@dataclass(frozen=True)
class ModelSpec:
    """Lattice of action-angle oscillators with angle-difference couplings.

    ``onsite[j]`` holds polynomial coefficients of ``h_j(I) = sum_n c_n I^n``.
    ``amp`` is ``sqrt(I_a I_b)``, ``I_a I_b`` or ``1``.
    """

    onsite: tuple
    couplings: tuple
    I_star: np.ndarray
    boundary: str = "periodic"
    k_res: tuple | None = None
    chart_mode: str = "consecutive-differences"
    name: str = "model"

    @property
    def n(self) -> int:
        return len(self.onsite)

    def __post_init__(self):
        n = len(self.onsite)
        if n < 1:
            raise InvalidInputError("model needs at least one site")
        if self.boundary not in ("periodic", "open"):
            raise InvalidInputError(f"unknown boundary {self.boundary!r}")
        if np.shape(self.I_star) != (n,):
            raise InvalidInputError("I_star needs one value per site")
        for c in self.couplings:
            a, b = c.sites
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise InvalidInputError(f"coupling sites {c.sites} out of range or repeated")
            if c.amplitude not in AMPLITUDES or c.trig not in TRIGS:
                raise InvalidInputError(f"unsupported coupling {c}")
            if c.eps_power < 1:
                raise InvalidInputError("couplings must carry a positive power of eps")
        if self.k_res is not None and len(self.k_res) != n:
            raise InvalidInputError("k_res length differs from the number of sites")

    def resonance(self) -> tuple:
        return tuple(self.k_res) if self.k_res is not None else (1,) * self.n

    def frequencies(self) -> np.ndarray:
        return np.array([sum(nn * c * I ** (nn - 1) for nn, c in enumerate(h) if nn >= 1)
                         for h, I in zip(self.onsite, self.I_star)])

    def to_dict(self) -> dict:
        return {"name": self.name, "sites": self.n, "onsite": [list(h) for h in self.onsite],
                "I_star": [float(x) for x in self.I_star], "boundary": self.boundary,
                "k_res": list(self.resonance()), "chart_mode": self.chart_mode,
                "couplings": [c.to_dict() for c in self.couplings]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelSpec":
        try:
            n = int(data["sites"])
            onsite = data["onsite"]
            if onsite and not isinstance(onsite[0], (list, tuple)):
                onsite = [onsite] * n
            I_star = data["I_star"]
            I_star = np.full(n, float(I_star)) if np.isscalar(I_star) else np.asarray(I_star, dtype=float)
            boundary = data.get("boundary", "periodic")
            couplings = [Coupling(tuple(c["sites"]), float(c.get("coef", 1.0)), c.get("amplitude", "sqrt"),
                                  c.get("trig", "cos"), int(c.get("eps_power", 1)), float(c.get("phase", 0.0)))
                         for c in data.get("couplings", [])]
            for nn in data.get("nearest_neighbour", []):
                pairs = [(j, j + 1) for j in range(n - 1)]
                if boundary == "periodic" and n > 2:
                    pairs.append((n - 1, 0))
                for a, b in pairs:
                    couplings.append(Coupling((a, b), float(nn.get("coef", 1.0)), nn.get("amplitude", "sqrt"),
                                              nn.get("trig", "cos"), int(nn.get("eps_power", 1)),
                                              float(nn.get("phase", 0.0))))
            return cls(onsite=tuple(tuple(float(x) for x in h) for h in onsite), couplings=tuple(couplings),
                       I_star=I_star, boundary=boundary,
                       k_res=tuple(data["k_res"]) if data.get("k_res") is not None else None,
                       chart_mode=data.get("chart_mode", "consecutive-differences"),
                       name=data.get("name", "model"))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidInputError):
                raise
            raise InvalidInputError(f"malformed model description: {exc}") from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "ModelSpec":
        path = Path(path)
        if not path.exists():
            raise InvalidInputError(f"model file {path} not found")
        text = path.read_text()
        if path.suffix == ".toml":
            try:
                import tomllib  # type: ignore[import-not-found]
            except ModuleNotFoundError:
                import tomli as tomllib
            try:
                data = tomllib.loads(text)
            except tomllib.TOMLDecodeError as exc:
                raise InvalidInputError(f"bad TOML in {path}: {exc}") from exc
        else:
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise InvalidInputError(f"bad JSON in {path}: {exc}") from exc
        return cls.from_dict(data)


def dnls_square_cell(I_star: float = 0.5, extra_couplings: Sequence[Coupling] = ()) -> ModelSpec:
    """Four-site periodic dNLS cell: ``h(I) = I + I^2``, hopping ``2 sqrt(I_j I_{j+1}) cos(phi_{j+1} - phi_j)``."""
    if not I_star > 0:
        raise DomainError("I_star must be positive")
    pairs = [(0, 1), (1, 2), (2, 3), (3, 0)]
    couplings = tuple(Coupling(p, 2.0, "sqrt", "cos", 1) for p in pairs) + tuple(extra_couplings)
    return ModelSpec(onsite=((0.0, 1.0, 1.0),) * 4, couplings=couplings, I_star=np.full(4, float(I_star)),
                     boundary="periodic", k_res=(1, 1, 1, 1), chart_mode="consecutive-differences",
                     name="dnls-square-cell")


def _amp_value(c: Coupling, I: np.ndarray) -> float:
    a, b = c.sites
    if c.amplitude == "sqrt":
        return math.sqrt(I[a] * I[b])
    if c.amplitude == "product":
        return I[a] * I[b]
    return 1.0


def _trig_value(c: Coupling, phi: np.ndarray) -> float:
    a, b = c.sites
    th = phi[b] - phi[a] + c.phase
    return math.cos(th) if c.trig == "cos" else math.sin(th)


def model_hamiltonian(model: ModelSpec, I, phi, eps: float) -> float:
    """Direct evaluation in the original action-angle variables."""
    I = np.asarray(I, dtype=float)
    phi = np.asarray(phi, dtype=float)
    h = sum(sum(cn * Ij ** nn for nn, cn in enumerate(hj)) for hj, Ij in zip(model.onsite, I))
    for c in model.couplings:
        h += c.coef * eps ** c.eps_power * _amp_value(c, I) * _trig_value(c, phi)
    return float(h)


# --------------------------------------------------------------- expansion
@dataclass
class EpsExpansion:
    """Hamiltonian as the grid ``(l, s) -> f_{2l}^{(s)}`` (coefficient of ``eps^s``)."""

    omega: float
    terms: dict
    degree_cap: int
    eps_cap: int
    chart: ResonantChart | None
    n_dyn: int
    n_par: int

    def get(self, l: int, s: int) -> FTSeries:
        f = self.terms.get((l, s))
        return f if f is not None else FTSeries.zero(self.n_dyn, self.n_par, l)

    def keys(self):
        return sorted(self.terms)

    def copy_with(self, terms: dict) -> "EpsExpansion":
        return replace(self, terms={key: f for key, f in terms.items() if f is not None and not f.is_zero()})

    def evaluate(self, p, q, qstar, eps: float) -> float:
        total = 0j
        for (l, s), f in self.terms.items():
            total += eps ** s * evaluate(f, p, q, qstar)
        return total.real

    def to_dict(self) -> dict:
        return {"omega": self.omega, "degree_cap": self.degree_cap, "eps_cap": self.eps_cap,
                "n_dyn": self.n_dyn, "n_par": self.n_par,
                "chart": None if self.chart is None else self.chart.to_dict(),
                "terms": [{"l": l, "s": s, "series": self.terms[(l, s)].to_dict()} for l, s in self.keys()]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "EpsExpansion":
        terms = {(int(t["l"]), int(t["s"])): FTSeries.from_dict(t["series"]) for t in data["terms"]}
        chart = None if data.get("chart") is None else ResonantChart.from_dict(data["chart"])
        return cls(omega=float(data["omega"]), terms=terms, degree_cap=int(data["degree_cap"]),
                   eps_cap=int(data["eps_cap"]), chart=chart, n_dyn=int(data["n_dyn"]),
                   n_par=int(data["n_par"]))


def _binom(a: float, k: int) -> float:
    out = 1.0
    for j in range(k):
        out *= (a - j) / (j + 1)
    return out


class _Monomials:
    """Cache of products of ``J_j = sum_i A_ij p_i`` as grade-l series."""

    def __init__(self, chart: ResonantChart, n_par: int):
        self.n = chart.n
        self.n_par = n_par
        self.J = [FTSeries(self.n, n_par, 1,
                           {(tuple(int(r == i) for r in range(self.n)), (0,) * self.n, (0,) * n_par):
                            float(chart.A[i, j]) for i in range(self.n) if chart.A[i, j] != 0}, real=True)
                  for j in range(self.n)]
        self.cache: dict[tuple, FTSeries] = {}

    def get(self, expo: tuple) -> FTSeries:
        if expo in self.cache:
            return self.cache[expo]
        if sum(expo) == 0:
            out = FTSeries.monomial(self.n, self.n_par, (0,) * self.n, coeff=1.0, real=True)
        else:
            j = next(r for r, e in enumerate(expo) if e)
            rest = list(expo)
            rest[j] -= 1
            out = multiply(self.get(tuple(rest)), self.J[j])
        self.cache[expo] = out
        return out


def expand_hamiltonian(model: ModelSpec, chart: ResonantChart | None = None, degree_cap: int = 3,
                       eps_cap: int = 3) -> EpsExpansion:
    """Expand the model around the resonant torus ``I = I*`` in the chart's variables.

    The constant energy is dropped and the linear unperturbed part is set
    to exactly ``omega * p_1`` after checking that the other components
    vanish.  Square-root amplitudes are expanded by the binomial series up
    to ``degree_cap``.
    """
    if degree_cap < 1 or eps_cap < 1:
        raise InvalidInputError("degree_cap and eps_cap must be at least 1")
    I_star = np.asarray(model.I_star, dtype=float)
    if np.any(I_star <= 0):
        raise DomainError("resonant actions must be positive (the action-angle chart is singular at 0)")
    n = model.n
    if chart is None:
        chart = build_chart(model.resonance(), mode=model.chart_mode)
    if chart.n != n:
        raise InvalidInputError("chart dimension differs from the model")
    freqs = model.frequencies()
    k = np.asarray(chart.k_res, dtype=float)
    omega = float(freqs[0])
    if not np.allclose(freqs, omega * k, rtol=1e-12, atol=1e-12):
        raise InvalidInputError(f"frequencies {freqs} are not resonant with k_res {chart.k_res}")
    if omega == 0:
        raise InvalidInputError("zero resonant frequency")
    chart = replace(chart, I_star=I_star, omega=omega)
    n_par = n - 1
    mono = _Monomials(chart, n_par)
    terms: dict[tuple, FTSeries] = {}

    def add(l: int, s: int, f: FTSeries) -> None:
        if f.is_zero() or l > degree_cap or s > eps_cap:
            return
        terms[(l, s)] = terms[(l, s)] + f if (l, s) in terms else f

    # unperturbed part: Taylor coefficients of each onsite polynomial
    for j, h in enumerate(model.onsite):
        for d in range(2, len(h)):
            coeff = sum(cn * math.comb(nn, d) * I_star[j] ** (nn - d) for nn, cn in enumerate(h) if nn >= d)
            if coeff != 0:
                expo = tuple(d if r == j else 0 for r in range(n))
                add(d, 0, mono.get(expo).scale(coeff))
    lin = sum((mono.J[j].scale(freqs[j]) for j in range(n)), FTSeries.zero(n, n_par, 1))
    for (i, kk, m), c in lin:
        if i != (1,) + (0,) * (n - 1) and abs(c) > 1e-12 * max(1.0, abs(omega)):
            raise InvalidInputError("linear part is not resonant in this chart")
    terms[(1, 0)] = FTSeries.action(n, 0, n_par, coeff=omega)

    # couplings
    for c in model.couplings:
        a, b = c.sites
        kvec = tuple(int(x) for x in chart.A_inv[b] - chart.A_inv[a])
        zero_m = (0,) * n_par
        phase = np.exp(1j * c.phase)
        if c.trig == "cos":
            trig = {(kvec, zero_m): 0.5 * phase}
            neg = (tuple(-x for x in kvec), zero_m)
            trig[neg] = trig.get(neg, 0) + 0.5 * np.conj(phase)
        else:
            trig = {(kvec, zero_m): -0.5j * phase}
            neg = (tuple(-x for x in kvec), zero_m)
            trig[neg] = trig.get(neg, 0) + 0.5j * np.conj(phase)
        # amplitude polynomial in (J_a, J_b): {(u, v): coefficient}
        poly: dict[tuple, float] = {}
        if c.amplitude == "sqrt":
            base = math.sqrt(I_star[a] * I_star[b])
            for u in range(degree_cap + 1):
                for v in range(degree_cap + 1 - u):
                    poly[(u, v)] = base * _binom(0.5, u) * _binom(0.5, v) / (I_star[a] ** u * I_star[b] ** v)
        elif c.amplitude == "product":
            poly = {(0, 0): I_star[a] * I_star[b], (1, 0): I_star[b], (0, 1): I_star[a], (1, 1): 1.0}
        else:
            poly = {(0, 0): 1.0}
        for (u, v), pc in poly.items():
            l = u + v
            if l > degree_cap or pc == 0:
                continue
            expo = [0] * n
            expo[a] += u
            expo[b] += v
            P = mono.get(tuple(expo))
            f = FTSeries(n, n_par, l, {(i, kk, m): coef * pc * c.coef * tc
                                       for (i, _, m), coef in P for (kk, _), tc in trig.items()}, real=True)
            add(l, c.eps_power, f)
    return EpsExpansion(omega=omega, terms=terms, degree_cap=degree_cap, eps_cap=eps_cap, chart=chart,
                        n_dyn=n, n_par=n_par)
