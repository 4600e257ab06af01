"""Analytic estimates for the resonant normalization scheme.

Combinatorial sequences (``nu``, ``theta``), the exponent tables for the
``Xi_r`` factors, the restriction schedule ``delta_r``/``d_r`` and checkers
that compare an actual normalization run against the proved bounds.

Norms follow :func:`resonant_nf.ftseries.weighted_norm`; a class index ``l``
always means ``2 * grade`` so that the bound for a term of grade ``g`` carries
``E / 2**(2 g)``.  Stored series are coefficients of ``eps**s`` so the checks
are independent of ``eps``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Callable


from .errors import CertificationFailure, InvalidInputError
from .ftseries import FTSeries, weighted_norm

__all__ = [
    "nu", "nu_I", "theta", "b_exponent", "delta_sequence", "restriction_sequence",
    "EstimateParams", "xi", "epsilon_star_rough", "measure_E", "params_for",
    "cauchy_bound", "lie_power_bound", "zeta_norm", "verify_lemmone", "LemmoneReport",
]


# ---------------------------------------------------------------- sequences
@lru_cache(maxsize=None)
def nu(r: int, s: int) -> int:
    """``nu_{r,s}`` as an exact integer."""
    if r < 0 or s < 0:
        raise InvalidInputError(f"nu needs r, s >= 0, got ({r}, {s})")
    if r == 0:
        return 1
    lead = 3 * nu(r - 1, r)
    return sum(lead ** j * nu_I(r, s - j * r) for j in range(s // r + 1))


@lru_cache(maxsize=None)
def nu_I(r: int, s: int) -> int:
    """``nu^(I)_{r,s}`` (first-stage sequence), defined for ``r >= 1``."""
    if r < 1 or s < 0:
        raise InvalidInputError(f"nu_I needs r >= 1, s >= 0, got ({r}, {s})")
    lead = nu(r - 1, r)
    return sum(lead ** j * nu(r - 1, s - j * r) for j in range(s // r + 1))


def theta(j: int) -> int:
    """``(3**(j+1) - 1) / 2``."""
    if j < 0:
        raise InvalidInputError("theta needs j >= 0")
    return (3 ** (j + 1) - 1) // 2


# ---------------------------------------------------------------- exponents
def _w(l: int) -> int:
    return {0: 2, 2: 1}.get(l, 0)


def b_exponent(r: int, s: int, l: int, stage: str = "II") -> int:
    """Exponent of ``Xi_r`` in the bound of a class-``l`` term of order ``s``.

    ``stage="I"`` gives ``b(I; r, s, l)`` (after the first stage of step
    ``r``), ``stage="II"`` gives ``b(r, s, l)``.  Cases are matched top-down.
    """
    if stage not in ("I", "II"):
        raise InvalidInputError(f"stage must be 'I' or 'II', got {stage!r}")
    if r < 1 or s < 0 or l < 0 or l % 2:
        raise InvalidInputError(f"no exponent defined for (r, s, l) = ({r}, {s}, {l})")
    if stage == "I" and r == 1:
        return s
    if s == 0:
        return 0
    if stage == "II" and r == 1:
        return 3 * s - (s + r - 1) // r - _w(l)
    base = 3 * s - (s + r - 1) // r - (s + r - 2) // r
    if s <= r and l == 0:
        return base - 2
    if r < s <= 2 * r and l == 0:
        return base - 1
    if s <= r and l == 2:
        return base - 1
    return base


# ------------------------------------------------------------ restrictions
def _inverse_square(d: float, r: int) -> float:
    return 3.0 * d / (math.pi ** 2 * r ** 2)


DELTA_RULES: dict[str, Callable[[float, int], float]] = {"inverse-square": _inverse_square}


def delta_sequence(d: float, r: int, rule: str = "inverse-square") -> float:
    """Restriction ``delta_r``; the default ``3 d / (pi^2 r^2)`` sums to ``d/2``."""
    if not 0 < d <= 0.25:
        raise InvalidInputError(f"restriction budget d must lie in (0, 1/4], got {d}")
    if r < 1:
        raise InvalidInputError("delta_r is defined for r >= 1")
    try:
        return DELTA_RULES[rule](d, r)
    except KeyError:
        raise InvalidInputError(f"unknown delta rule {rule!r}") from None


def restriction_sequence(d: float, r_max: int, rule: str = "inverse-square") -> list[float]:
    """``[d_0, ..., d_rmax]`` with ``d_0 = 0`` and ``d_r = d_{r-1} + 2 delta_r``."""
    out = [0.0]
    for r in range(1, r_max + 1):
        out.append(out[-1] + 2.0 * delta_sequence(d, r, rule))
    return out


# --------------------------------------------------------------- parameters
@dataclass(frozen=True)
class EstimateParams:
    """Constants entering the bounds.

    Parameters
    ----------
    E : float
        Size of the initial expansion, ``||f_l^(0,s)||_1 <= E / 2**l``.
    omega, m : float
        Fast frequency and twist constant ``1 / ||C^{-1}||_1``.
    rho, sigma : float
        Action and angle widths of the reference domain.
    d : float
        Total restriction budget in ``(0, 1/4]``.
    delta_rule : str
        Name of the ``delta_r`` profile.
    """

    E: float
    omega: float
    m: float
    rho: float
    sigma: float
    d: float = 0.25
    delta_rule: str = "inverse-square"

    def __post_init__(self):
        if not self.E >= 0:
            raise InvalidInputError("E must be nonnegative")
        for name in ("omega", "m", "rho", "sigma"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        if not 0 < self.d <= 0.25:
            raise InvalidInputError(f"d must lie in (0, 1/4], got {self.d}")
        if self.delta_rule not in DELTA_RULES:
            raise InvalidInputError(f"unknown delta rule {self.delta_rule!r}")

    def delta(self, r: int) -> float:
        return delta_sequence(self.d, r, self.delta_rule)

    def d_r(self, r: int) -> float:
        return restriction_sequence(self.d, r, self.delta_rule)[r]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EstimateParams":
        known = {k: data[k] for k in ("E", "omega", "m", "rho", "sigma", "d", "delta_rule") if k in data}
        try:
            return cls(**known)
        except TypeError as exc:
            raise InvalidInputError(f"incomplete estimate parameters: {exc}") from None


def xi(r: int, params: EstimateParams) -> float:
    """``Xi_r``, the growth factor of the ``r``-th step."""
    E, om, m, rho, sg = params.E, params.omega, params.m, params.rho, params.sigma
    dl = params.delta(r)
    return max(1.0,
               E / (om * dl ** 2 * rho * sg) + math.e * E / (4 * m * dl * rho ** 2),
               2.0 + E / (2 * math.e * om * dl * rho * sg),
               E / (4 * om * dl ** 2 * rho * sg))


def epsilon_star_rough(r: int, params: EstimateParams) -> float:
    """Rough smallness threshold ``1 / (100 Xi_r^4)`` (reported, not enforced)."""
    return 1.0 / (100.0 * xi(r, params) ** 4)


def measure_E(H0, rho: float, sigma: float) -> float:
    """Smallest ``E`` with ``||f_l^(0,s)||_1 <= E / 2**l`` for every stored term.

    The unperturbed frequency term ``omega p_1`` is excluded.
    """
    E = 0.0
    for (g, s), f in H0.terms.items():
        if (g, s) == (1, 0):
            fast = FTSeries.action(H0.n_dyn, 0, H0.n_par, H0.omega)
            f = f - fast
        if f.is_zero():
            continue
        E = max(E, 2.0 ** (2 * g) * weighted_norm(f, rho, sigma, 1.0))
    return E


def params_for(nf, E: float | None = None) -> EstimateParams:
    """Estimate parameters matching a normalization run."""
    p = nf.params
    if E is None:
        E = measure_E(nf.history[0], p["rho"], p["sigma"])
    return EstimateParams(E=E, omega=nf.omega, m=nf.twist[1], rho=p["rho"], sigma=p["sigma"], d=p["d"])


# -------------------------------------------------------------- norm bounds
def cauchy_bound(g: FTSeries, kind: str, d: float, rho: float, sigma: float) -> float:
    """Upper bound for ``||d g / d p_j||_{1-d}`` (``kind="p"``) or ``d/dq_j``."""
    n1 = weighted_norm(g, rho, sigma, 1.0)
    if kind == "p":
        return n1 / (d * rho)
    if kind == "q":
        return n1 / (math.e * d * sigma)
    raise InvalidInputError(f"kind must be 'p' or 'q', got {kind!r}")


def zeta_norm(zeta, rho: float, sigma: float, alpha: float) -> float:
    """``|zeta|``: sum over components of the weighted norm (numbers by modulus)."""
    if zeta is None:
        return 0.0
    total = 0.0
    for z in zeta:
        total += weighted_norm(z, rho, sigma, alpha) if isinstance(z, FTSeries) else abs(complex(z))
    return total


def lie_power_bound(j: int, f_norm: float, d: float, rho: float, sigma: float,
                    X0_norm: float = 0.0, zeta_abs: float = 0.0, chi2_norm: float | None = None) -> float:
    """Bound on ``||L_chi^j f||_{1-d-d'}`` from norms on ``1-d'``.

    With ``chi2_norm`` given the generator is of grade one, otherwise it is
    ``X0 + <zeta, q>``.
    """
    if j < 0:
        raise InvalidInputError("j must be nonnegative")
    if j == 0:
        return f_norm
    if chi2_norm is not None:
        base = chi2_norm / (d ** 2 * rho * sigma)
    else:
        base = X0_norm / (d ** 2 * rho * sigma) + math.e * zeta_abs / (d * rho)
    return math.factorial(j) / math.e * base ** j * f_norm


# ---------------------------------------------------------------- lemmone
@dataclass
class LemmoneReport:
    """Rows ``{kind, r, s, l, alpha, actual, bound, margin, ok}`` and the constants used."""

    params: EstimateParams
    xi: dict
    rows: list

    @property
    def ok(self) -> bool:
        return all(row["ok"] for row in self.rows)

    @property
    def min_margin(self) -> float:
        margins = [row["margin"] for row in self.rows if row["actual"] > 0]
        return min(margins) if margins else math.inf

    def violations(self) -> list:
        return [row for row in self.rows if not row["ok"]]

    def to_dict(self) -> dict:
        def clean(x):
            return None if isinstance(x, float) and not math.isfinite(x) else x
        return {"params": self.params.to_dict(),
                "xi": {str(k): v for k, v in self.xi.items()},
                "epsilon_star_rough": {str(r): 1.0 / (100.0 * x ** 4) for r, x in self.xi.items()},
                "min_margin": clean(self.min_margin),
                "ok": self.ok,
                "rows": [{k: clean(v) for k, v in row.items()} for row in self.rows]}


def _row(kind, r, s, l, alpha, actual, bound, rtol=1e-10):
    margin = math.inf if actual == 0 else bound / actual
    return {"kind": kind, "r": r, "s": s, "l": l, "alpha": alpha, "actual": actual, "bound": bound,
            "margin": margin, "ok": bool(actual <= bound * (1 + rtol) + 1e-300)}


def _expansion_rows(kind, H, r, alpha, p, X, seq, stage, skip_fast=True):
    rows = []
    for (g, s) in sorted(H.keys()):
        if skip_fast and (g, s) == (1, 0):
            continue
        l = 2 * g
        actual = weighted_norm(H.terms[(g, s)], p.rho, p.sigma, alpha)
        bound = float(seq(r, s)) * X ** b_exponent(r, s, l, stage) * p.E / 2.0 ** l
        rows.append(_row(kind, r, s, l, alpha, actual, bound))
    return rows


def verify_lemmone(nf, params: EstimateParams | None = None, strict: bool = True) -> LemmoneReport:
    """Compare a normalization run against the step-by-step bounds.

    Checked for every step ``r``: the generating functions ``X0``, ``zeta``
    and ``chi2``, every term after the first stage (on ``1 - d_{r-1} -
    delta_r``) and every term of the normal form of order ``r`` (on
    ``1 - d_r``).  The first step also checks ``||f_0^(I;0,1)|| <= E``.

    Raises
    ------
    CertificationFailure
        If ``strict`` and any inequality fails; the report is attached as
        ``exc.report``.
    """
    p = params or params_for(nf)
    d_seq = restriction_sequence(p.d, nf.order, p.delta_rule)
    rows = []
    xis = {}
    for r in range(1, nf.order + 1):
        X = xi(r, p)
        xis[r] = X
        step = nf.steps[r - 1]
        a_prev = 1.0 - d_seq[r - 1]
        a_mid = a_prev - p.delta(r)
        lead = float(nu(r - 1, r))
        eX, ez, ec = (0, 0, 1) if r == 1 else (3 * r - 4, 3 * r - 3, 3 * r - 3)
        rows.append(_row("X0", r, r, 0, a_prev, weighted_norm(step.X0, p.rho, p.sigma, a_prev),
                         lead * X ** eX * p.E / p.omega))
        rows.append(_row("zeta", r, r, 0, a_prev, zeta_norm(step.zeta, p.rho, p.sigma, a_prev),
                         lead * X ** ez * p.E / (4 * p.m * p.rho)))
        rows.append(_row("chi2", r, r, 2, a_mid, weighted_norm(step.chi2, p.rho, p.sigma, a_mid),
                         3 * lead * X ** ec * p.E / (4 * p.omega)))
        H_I = nf.stage_one[r - 1]
        rows += _expansion_rows("stage-one", H_I, r, a_mid, p, X, nu_I, "I")
        if r == 1:
            rows.append(_row("first-step", 1, 1, 0, a_mid,
                             weighted_norm(H_I.get(0, 1), p.rho, p.sigma, a_mid), p.E))
        rows += _expansion_rows("normal-form", nf.history[r], r, 1.0 - d_seq[r], p, X, nu, "II")
    report = LemmoneReport(params=p, xi=xis, rows=rows)
    if strict and not report.ok:
        bad = report.violations()[0]
        exc = CertificationFailure(
            f"{len(report.violations())} estimate(s) violated, first: {bad['kind']} "
            f"r={bad['r']} s={bad['s']} l={bad['l']} actual={bad['actual']:.3e} bound={bad['bound']:.3e}")
        exc.report = report
        raise exc
    return report
