"""Sparse Fourier-Taylor series in action-angle variables.

A series is a homogeneous polynomial of degree ``grade`` in the actions
``p`` times a trigonometric polynomial in the dynamic angles ``q`` and in
a block of inert parameter angles ``q*``::

    f(p, q; q*) = sum_{i, k, m} c_{i,k,m} p^i exp(i <k, q>) exp(i <m, q*>)

with ``|i| = grade`` for every stored term.  Coefficients are complex; a
real series additionally satisfies ``c_{i,-k,-m} = conj(c_{i,k,m})``.

The Poisson bracket is ``{f, g} = sum_j (df/dq_j dg/dp_j - df/dp_j dg/dq_j)``
so that Hamilton's equations read ``dq/dt = dH/dp``.  The Lie derivative
is ``L_chi f = {f, chi}``, which makes ``exp(L_chi) f = f o Phi`` with
``Phi`` the time-one flow of ``chi``.
"""
from __future__ import annotations

import json
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidInputError, ResourceError

DEFAULT_PRUNE = 1e-14
SERIES_FORMAT_VERSION = 1
DEFAULT_TERM_BUDGET = 2_000_000

Key = tuple  # (i, k, m), each a tuple of ints


def _as_key(i, k, m) -> Key:
    return (tuple(int(x) for x in i), tuple(int(x) for x in k), tuple(int(x) for x in m))


def _neg(t: tuple) -> tuple:
    return tuple(-x for x in t)


class FTSeries:
    """Immutable homogeneous Fourier-Taylor series.

    Parameters
    ----------
    n_dyn : int
        Number of action-angle pairs.
    n_par : int
        Number of parameter angles (may be zero).
    grade : int
        Homogeneous degree in the actions.
    terms : mapping, optional
        ``(i, k, m) -> complex``.  Duplicate-free by construction.
    real : bool
        If set, conjugate symmetry is enforced by projecting onto the
        real part of the function.
    prune : float
        Coefficients with modulus below this threshold are dropped.
    """

    __slots__ = ("n_dyn", "n_par", "grade", "real", "prune", "_terms", "_arr")

    def __init__(self, n_dyn: int, n_par: int, grade: int,
                 terms: Mapping[Key, complex] | None = None, real: bool = False,
                 prune: float = DEFAULT_PRUNE):
        if n_dyn < 1 or n_par < 0 or grade < 0:
            raise InvalidInputError(f"bad series shape n_dyn={n_dyn} n_par={n_par} grade={grade}")
        self.n_dyn = int(n_dyn)
        self.n_par = int(n_par)
        self.grade = int(grade)
        self.real = bool(real)
        self.prune = float(prune)
        clean: dict[Key, complex] = {}
        for key, c in (terms or {}).items():
            i, k, m = key
            if len(i) != n_dyn or len(k) != n_dyn or len(m) != n_par:
                raise InvalidInputError(f"term {key} does not match dimensions ({n_dyn}, {n_par})")
            if sum(i) != grade or min(i, default=0) < 0:
                raise InvalidInputError(f"term {key} is not homogeneous of grade {grade}")
            clean[_as_key(i, k, m)] = complex(c)
        if real:
            sym: dict[Key, complex] = {}
            for (i, k, m), c in clean.items():
                partner = clean.get((i, _neg(k), _neg(m)), 0.0)
                sym[(i, k, m)] = 0.5 * (c + np.conj(partner))
                pk = (i, _neg(k), _neg(m))
                if pk not in clean:
                    sym[pk] = 0.5 * np.conj(c)
            clean = sym
        self._terms = {key: c for key, c in clean.items() if abs(c) >= prune}
        self._arr = None

    # ------------------------------------------------------------------ basics
    @property
    def terms(self) -> Mapping[Key, complex]:
        return MappingProxyType(self._terms)

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self):
        return iter(self._terms.items())

    def __repr__(self) -> str:
        return (f"FTSeries(n_dyn={self.n_dyn}, n_par={self.n_par}, grade={self.grade}, "
                f"nterms={len(self)}, real={self.real})")

    def is_zero(self) -> bool:
        return not self._terms

    def coefficient(self, i, k, m=()) -> complex:
        return self._terms.get(_as_key(i, k, m), 0j)

    def mass(self) -> float:
        """Sum of coefficient moduli."""
        return float(sum(abs(c) for c in self._terms.values()))

    @classmethod
    def zero(cls, n_dyn: int, n_par: int = 0, grade: int = 0, real: bool = True) -> "FTSeries":
        return cls(n_dyn, n_par, grade, {}, real=real)

    @classmethod
    def monomial(cls, n_dyn: int, n_par: int, i, k=None, m=None, coeff: complex = 1.0,
                 real: bool = False) -> "FTSeries":
        k = k if k is not None else (0,) * n_dyn
        m = m if m is not None else (0,) * n_par
        return cls(n_dyn, n_par, sum(i), {_as_key(i, k, m): coeff}, real=real)

    @classmethod
    def action(cls, n_dyn: int, j: int, n_par: int = 0, coeff: float = 1.0) -> "FTSeries":
        """The series ``coeff * p_j`` (zero-based ``j``)."""
        i = [0] * n_dyn
        i[j] = 1
        return cls.monomial(n_dyn, n_par, i, coeff=coeff, real=True)

    @classmethod
    def cosine(cls, n_dyn: int, k, m=None, n_par: int = 0, i=None, coeff: float = 1.0) -> "FTSeries":
        """``coeff * p^i * cos(<k,q> + <m,q*>)``."""
        i = tuple(i) if i is not None else (0,) * n_dyn
        m = tuple(m) if m is not None else (0,) * n_par
        k = tuple(k)
        terms = {_as_key(i, k, m): 0.5 * coeff}
        neg = _as_key(i, _neg(k), _neg(m))
        terms[neg] = terms.get(neg, 0) + 0.5 * coeff
        return cls(n_dyn, n_par, sum(i), terms, real=True)

    @classmethod
    def sine(cls, n_dyn: int, k, m=None, n_par: int = 0, i=None, coeff: float = 1.0) -> "FTSeries":
        """``coeff * p^i * sin(<k,q> + <m,q*>)``."""
        i = tuple(i) if i is not None else (0,) * n_dyn
        m = tuple(m) if m is not None else (0,) * n_par
        k = tuple(k)
        if not any(k) and not any(m):
            return cls.zero(n_dyn, n_par, sum(i))
        terms = {_as_key(i, k, m): -0.5j * coeff, _as_key(i, _neg(k), _neg(m)): 0.5j * coeff}
        return cls(n_dyn, n_par, sum(i), terms, real=True)

    def with_terms(self, terms: Mapping[Key, complex], grade: int | None = None,
                   real: bool | None = None, n_par: int | None = None) -> "FTSeries":
        return FTSeries(self.n_dyn, self.n_par if n_par is None else n_par,
                        self.grade if grade is None else grade, terms,
                        real=self.real if real is None else real, prune=self.prune)

    # ------------------------------------------------------------ array views
    def arrays(self):
        """Return ``(I, K, M, C)`` arrays (cached)."""
        if self._arr is None:
            n = len(self._terms)
            I = np.zeros((n, self.n_dyn), dtype=np.int64)
            K = np.zeros((n, self.n_dyn), dtype=np.int64)
            M = np.zeros((n, self.n_par), dtype=np.int64)
            C = np.zeros(n, dtype=complex)
            for r, ((i, k, m), c) in enumerate(self._terms.items()):
                I[r] = i
                K[r] = k
                if self.n_par:
                    M[r] = m
                C[r] = c
            self._arr = (I, K, M, C)
        return self._arr

    @classmethod
    def from_arrays(cls, n_dyn: int, n_par: int, grade: int, I, K, M, C, real: bool = False,
                    prune: float = DEFAULT_PRUNE) -> "FTSeries":
        """Build a series summing duplicate keys (deterministic order)."""
        C = np.asarray(C, dtype=complex)
        if C.size == 0:
            return cls(n_dyn, n_par, grade, {}, real=real, prune=prune)
        keys = np.hstack([np.asarray(I), np.asarray(K), np.asarray(M).reshape(len(C), n_par)])
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        inv = np.asarray(inv).ravel()
        re = np.bincount(inv, weights=C.real, minlength=len(uniq))
        im = np.bincount(inv, weights=C.imag, minlength=len(uniq))
        terms = {}
        for row, a, b in zip(uniq.tolist(), re, im):
            terms[(tuple(row[:n_dyn]), tuple(row[n_dyn:2 * n_dyn]), tuple(row[2 * n_dyn:]))] = complex(a, b)
        return cls(n_dyn, n_par, grade, terms, real=real, prune=prune)

    # ------------------------------------------------------------- arithmetic
    def _check_compatible(self, other: "FTSeries", same_grade: bool = True) -> None:
        if not isinstance(other, FTSeries):
            raise InvalidInputError("operand is not an FTSeries")
        if other.n_dyn != self.n_dyn or other.n_par != self.n_par:
            raise InvalidInputError(
                f"dimension mismatch ({self.n_dyn},{self.n_par}) vs ({other.n_dyn},{other.n_par})")
        if same_grade and other.grade != self.grade and self._terms and other._terms:
            raise InvalidInputError(f"grade mismatch {self.grade} vs {other.grade}")

    def __add__(self, other: "FTSeries") -> "FTSeries":
        self._check_compatible(other)
        grade = self.grade if self._terms else other.grade
        out = dict(self._terms)
        for key, c in other._terms.items():
            out[key] = out.get(key, 0) + c
        return FTSeries(self.n_dyn, self.n_par, grade, out, real=self.real and other.real,
                        prune=self.prune)

    def __neg__(self) -> "FTSeries":
        return self.scale(-1.0)

    def __sub__(self, other: "FTSeries") -> "FTSeries":
        return self + (-other)

    def scale(self, a: complex) -> "FTSeries":
        real = self.real and complex(a).imag == 0
        return FTSeries(self.n_dyn, self.n_par, self.grade,
                        {key: a * c for key, c in self._terms.items()}, real=real, prune=self.prune)

    def __mul__(self, other):
        if isinstance(other, FTSeries):
            return multiply(self, other)
        return self.scale(other)

    __rmul__ = __mul__

    def conjugate(self) -> "FTSeries":
        return self.with_terms({(i, _neg(k), _neg(m)): np.conj(c) for (i, k, m), c in self})

    def allclose(self, other: "FTSeries", atol: float = 1e-12) -> bool:
        self._check_compatible(other, same_grade=False)
        keys = set(self._terms) | set(other._terms)
        return all(abs(self._terms.get(key, 0) - other._terms.get(key, 0)) <= atol for key in keys)

    def max_difference(self, other: "FTSeries") -> float:
        keys = set(self._terms) | set(other._terms)
        return max((abs(self._terms.get(key, 0) - other._terms.get(key, 0)) for key in keys), default=0.0)

    # ----------------------------------------------------------- serialization
    def to_dict(self) -> dict:
        rows = []
        for (i, k, m), c in sorted(self._terms.items(), key=lambda kv: kv[0]):
            rows.append({"i": list(i), "k": list(k), "m": list(m),
                         "re": float(c.real), "im": float(c.imag)})
        return {"version": SERIES_FORMAT_VERSION, "n_dyn": self.n_dyn, "n_par": self.n_par,
                "grade_l": self.grade, "real_flag": self.real, "terms": rows}

    @classmethod
    def from_dict(cls, data: Mapping) -> "FTSeries":
        if data.get("version") != SERIES_FORMAT_VERSION:
            raise InvalidInputError(f"unsupported series format version {data.get('version')!r}")
        try:
            terms = {_as_key(t["i"], t["k"], t["m"]): complex(t["re"], t["im"]) for t in data["terms"]}
            return cls(data["n_dyn"], data["n_par"], data["grade_l"], terms, real=bool(data["real_flag"]))
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"malformed series document: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FTSeries":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------- operations
def _pairwise(f: FTSeries, g: FTSeries):
    If, Kf, Mf, Cf = f.arrays()
    Ig, Kg, Mg, Cg = g.arrays()
    return If, Kf, Mf, Cf, Ig, Kg, Mg, Cg


def multiply(f: FTSeries, g: FTSeries) -> FTSeries:
    """Pointwise product; grades add."""
    f._check_compatible(g, same_grade=False)
    grade = f.grade + g.grade
    if f.is_zero() or g.is_zero():
        return FTSeries.zero(f.n_dyn, f.n_par, grade)
    If, Kf, Mf, Cf, Ig, Kg, Mg, Cg = _pairwise(f, g)
    a, b = np.meshgrid(np.arange(len(Cf)), np.arange(len(Cg)), indexing="ij")
    a, b = a.ravel(), b.ravel()
    return FTSeries.from_arrays(f.n_dyn, f.n_par, grade, If[a] + Ig[b], Kf[a] + Kg[b],
                                Mf[a] + Mg[b], Cf[a] * Cg[b], real=f.real and g.real,
                                prune=min(f.prune, g.prune))


def poisson_bracket(f: FTSeries, g: FTSeries) -> FTSeries:
    """``{f, g} = sum_j (df/dq_j dg/dp_j - df/dp_j dg/dq_j)``.

    Parameter angles have no conjugate momenta and do not contribute.
    """
    f._check_compatible(g, same_grade=False)
    grade = f.grade + g.grade - 1
    if grade < 0 or f.is_zero() or g.is_zero():
        return FTSeries.zero(f.n_dyn, f.n_par, max(grade, 0))
    If, Kf, Mf, Cf, Ig, Kg, Mg, Cg = _pairwise(f, g)
    parts_I, parts_K, parts_M, parts_C = [], [], [], []
    for j in range(f.n_dyn):
        w = Kf[:, None, j] * Ig[None, :, j] - If[:, None, j] * Kg[None, :, j]
        a, b = np.nonzero(w)
        if a.size == 0:
            continue
        I = If[a] + Ig[b]
        I[:, j] -= 1
        parts_I.append(I)
        parts_K.append(Kf[a] + Kg[b])
        parts_M.append(Mf[a] + Mg[b])
        parts_C.append(1j * w[a, b] * Cf[a] * Cg[b])
    if not parts_C:
        return FTSeries.zero(f.n_dyn, f.n_par, grade)
    return FTSeries.from_arrays(f.n_dyn, f.n_par, grade, np.vstack(parts_I), np.vstack(parts_K),
                                np.vstack(parts_M), np.concatenate(parts_C),
                                real=f.real and g.real, prune=min(f.prune, g.prune))


def weighted_norm(f: FTSeries, rho: float, sigma: float, alpha: float = 1.0) -> float:
    """``sum |c| (alpha rho)^l exp((|k| + |m|) alpha sigma)``."""
    if not (rho > 0 and sigma > 0 and 0 < alpha <= 1):
        raise InvalidInputError(f"need rho, sigma > 0 and 0 < alpha <= 1, got {rho}, {sigma}, {alpha}")
    if f.is_zero():
        return 0.0
    I, K, M, C = f.arrays()
    order = np.abs(K).sum(axis=1) + np.abs(M).sum(axis=1)
    return float(np.sum(np.abs(C) * np.exp(order * alpha * sigma)) * (alpha * rho) ** f.grade)


def average_q1(f: FTSeries) -> FTSeries:
    """Average over the fast angle: keep the terms with ``k_1 = 0``."""
    return f.with_terms({key: c for key, c in f if key[1][0] == 0})


def partial_derivative(f: FTSeries, kind: str, j: int) -> FTSeries:
    """Term-wise derivative.

    ``kind`` is ``"p"`` (action), ``"q"`` (dynamic angle) or ``"qpar"``
    (parameter angle); ``j`` is zero-based.
    """
    if kind == "p":
        if not 0 <= j < f.n_dyn:
            raise InvalidInputError(f"action index {j} out of range")
        if f.grade == 0:
            return FTSeries.zero(f.n_dyn, f.n_par, 0, real=f.real)
        out = {}
        for (i, k, m), c in f:
            if i[j]:
                ii = list(i)
                ii[j] -= 1
                out[(tuple(ii), k, m)] = c * i[j]
        return f.with_terms(out, grade=f.grade - 1)
    if kind == "q":
        if not 0 <= j < f.n_dyn:
            raise InvalidInputError(f"angle index {j} out of range")
        return f.with_terms({key: 1j * key[1][j] * c for key, c in f if key[1][j]})
    if kind == "qpar":
        if not 0 <= j < f.n_par:
            raise InvalidInputError(f"parameter index {j} out of range")
        return f.with_terms({key: 1j * key[2][j] * c for key, c in f if key[2][j]})
    raise InvalidInputError(f"unknown derivative kind {kind!r}")


def gradient_p(f: FTSeries) -> list[FTSeries]:
    return [partial_derivative(f, "p", j) for j in range(f.n_dyn)]


def evaluate(f: FTSeries, p: Sequence[float], q: Sequence[float], qstar: Sequence[float] = ()) -> complex:
    """Value of the series at one point."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    qstar = np.asarray(qstar, dtype=float)
    if p.shape != (f.n_dyn,) or q.shape != (f.n_dyn,) or qstar.shape != (f.n_par,):
        raise InvalidInputError("point dimensions do not match the series")
    if f.is_zero():
        return 0j
    I, K, M, C = f.arrays()
    mono = np.prod(p[None, :] ** I, axis=1)
    phase = K @ q + (M @ qstar if f.n_par else 0.0)
    return complex(np.sum(C * mono * np.exp(1j * phase)))


def substitute_parameter_diagonal(f: FTSeries) -> FTSeries:
    """Replace ``q*_j`` by the slow angle ``q_{j+1}`` (fold ``m`` onto ``k``)."""
    if f.n_par != f.n_dyn - 1:
        raise InvalidInputError("parameter block must match the slow angles (n_par = n_dyn - 1)")
    out: dict[Key, complex] = {}
    zero_m = (0,) * f.n_par
    for (i, k, m), c in f:
        kk = (k[0],) + tuple(a + b for a, b in zip(k[1:], m))
        key = (i, kk, zero_m)
        out[key] = out.get(key, 0) + c
    return f.with_terms(out)


def substitute_slow_by_parameters(f: FTSeries) -> FTSeries:
    """Set the slow angles equal to the parameters (``q = q*``): fold ``k`` onto ``m``."""
    if f.n_par != f.n_dyn - 1:
        raise InvalidInputError("parameter block must match the slow angles (n_par = n_dyn - 1)")
    out: dict[Key, complex] = {}
    zero_k = (0,) * (f.n_dyn - 1)
    for (i, k, m), c in f:
        key = (i, (k[0],) + zero_k, tuple(a + b for a, b in zip(m, k[1:])))
        out[key] = out.get(key, 0) + c
    return f.with_terms(out)


def substitute_slow_numeric(f: FTSeries, qstar: Sequence[float]) -> FTSeries:
    """Evaluate the slow angles and the parameter angles at the numeric point ``q*``."""
    qstar = np.asarray(qstar, dtype=float)
    if qstar.shape != (f.n_dyn - 1,):
        raise InvalidInputError("numeric q* must have n_dyn - 1 components")
    out: dict[Key, complex] = {}
    zero_k = (0,) * (f.n_dyn - 1)
    zero_m = (0,) * f.n_par
    for (i, k, m), c in f:
        phase = float(np.dot(k[1:], qstar)) + (float(np.dot(m, qstar)) if f.n_par else 0.0)
        key = (i, (k[0],) + zero_k, zero_m)
        out[key] = out.get(key, 0) + c * np.exp(1j * phase)
    return f.with_terms(out)


def evaluate_parameters(f: FTSeries, qstar: Sequence[float]) -> FTSeries:
    """Evaluate only the parameter block at ``q*``; dynamic angles stay symbolic."""
    if f.n_par == 0:
        return f
    qstar = np.asarray(qstar, dtype=float)
    if qstar.shape != (f.n_par,):
        raise InvalidInputError("parameter point has the wrong dimension")
    out: dict[Key, complex] = {}
    zero_m = (0,) * f.n_par
    for (i, k, m), c in f:
        key = (i, k, zero_m)
        out[key] = out.get(key, 0) + c * np.exp(1j * float(np.dot(m, qstar)))
    return f.with_terms(out)


# ------------------------------------------------------------- Lie machinery
class LieGenerator:
    """Generating function ``chi = series + <zeta, q>``.

    ``series`` is an ordinary FTSeries (grade 0 or 1).  ``zeta`` is an
    optional list of grade-0 series depending on the parameter angles only;
    the linear-in-angle part is not a Fourier series and its bracket is
    applied directly as ``L_<zeta,q> f = -sum_j zeta_j df/dp_j``.
    """

    def __init__(self, series: FTSeries | None = None, zeta: Sequence[FTSeries] | None = None):
        if series is None and not zeta:
            raise InvalidInputError("empty generator")
        self.series = series
        self.zeta = list(zeta) if zeta else []
        ref = series if series is not None else self.zeta[0]
        self.n_dyn, self.n_par = ref.n_dyn, ref.n_par
        for z in self.zeta:
            if z.grade != 0 or (z.n_dyn, z.n_par) != (self.n_dyn, self.n_par):
                raise InvalidInputError("translation components must be grade-0 series of matching shape")
            if any(any(k) for (_, k, _), _ in z):
                raise InvalidInputError("translation components may depend on parameter angles only")
        if self.zeta and len(self.zeta) != self.n_dyn:
            raise InvalidInputError("translation needs one component per action")

    @property
    def grade(self) -> int:
        return self.series.grade if self.series is not None else 0

    def is_zero(self) -> bool:
        return (self.series is None or self.series.is_zero()) and all(z.is_zero() for z in self.zeta)

    def scaled(self, a: float) -> "LieGenerator":
        return LieGenerator(None if self.series is None else self.series.scale(a),
                            [z.scale(a) for z in self.zeta] or None)

    def at_parameters(self, qstar) -> "LieGenerator":
        return LieGenerator(None if self.series is None else evaluate_parameters(self.series, qstar),
                            [evaluate_parameters(z, qstar) for z in self.zeta] or None)


def lie_derivative(f: FTSeries, chi: LieGenerator | FTSeries) -> FTSeries:
    """``L_chi f = {f, chi}`` with the translation part handled in closed form."""
    if isinstance(chi, FTSeries):
        chi = LieGenerator(chi)
    grade = f.grade + chi.grade - 1
    if grade < 0:
        return FTSeries.zero(f.n_dyn, f.n_par, 0)
    out = FTSeries.zero(f.n_dyn, f.n_par, grade)
    if chi.series is not None and not chi.series.is_zero():
        out = poisson_bracket(f, chi.series)
    if chi.zeta and f.grade > 0:
        for j, z in enumerate(chi.zeta):
            if z.is_zero():
                continue
            d = partial_derivative(f, "p", j)
            if not d.is_zero():
                term = multiply(d, z).scale(-1.0)
                out = term if out.is_zero() else out + term
    return out


def lie_series_apply(chi: LieGenerator | FTSeries, f: FTSeries, eps_order_of_chi: int, eps_cap: int,
                     degree_cap: int, order_of_f: int = 0,
                     term_budget: int = DEFAULT_TERM_BUDGET) -> list[FTSeries | None]:
    """Truncated ``exp(L_chi) f`` split by powers of the small parameter.

    The ``j``-th term ``L_chi^j f / j!`` is assigned order
    ``order_of_f + j * eps_order_of_chi``.  Entry ``s`` of the returned list
    holds the contribution at order ``s`` (``None`` if there is none).
    Terms whose grade exceeds ``degree_cap`` are discarded.
    """
    if eps_order_of_chi < 1:
        raise InvalidInputError("the generator must be at least first order")
    out: list[FTSeries | None] = [None] * (eps_cap + 1)
    if order_of_f > eps_cap:
        return out
    if f.grade <= degree_cap:
        out[order_of_f] = f
    if isinstance(chi, FTSeries):
        chi = LieGenerator(chi)
    if chi.is_zero():
        return out
    term = f
    j = 0
    while True:
        j += 1
        s = order_of_f + j * eps_order_of_chi
        if s > eps_cap:
            break
        term = lie_derivative(term, chi).scale(1.0 / j)
        if len(term) > term_budget:
            raise ResourceError(f"Lie series term count {len(term)} exceeds budget {term_budget}")
        if term.is_zero():
            break
        if term.grade <= degree_cap:
            out[s] = term
    return out


def random_series(rng: np.random.Generator, n_dyn: int, n_par: int, grade: int, nterms: int,
                  kmax: int = 2, real: bool = True) -> FTSeries:
    """Random series for property tests and examples."""
    terms: dict[Key, complex] = {}
    for _ in range(nterms):
        i = rng.multinomial(grade, [1.0 / n_dyn] * n_dyn) if grade else np.zeros(n_dyn, int)
        k = rng.integers(-kmax, kmax + 1, size=n_dyn)
        m = rng.integers(-kmax, kmax + 1, size=n_par)
        c = complex(rng.normal(), rng.normal())
        key = _as_key(i, k, m)
        terms[key] = terms.get(key, 0) + c
    return FTSeries(n_dyn, n_par, grade, terms, real=real)


def series_sum(items: Iterable[FTSeries]) -> FTSeries | None:
    total = None
    for s in items:
        if s is None:
            continue
        total = s if total is None else total + s
    return total


