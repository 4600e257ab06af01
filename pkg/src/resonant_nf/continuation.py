"""Shooting for periodic orbits near a completely resonant torus.

The flow is integrated in resonant action-angle coordinates on the universal
cover.  The period map

    Upsilon(q, p) = (q_hat(T) - q_hat(0) - Lambda T, (p_slow(T) - p_slow(0)) / eps)

with ``Lambda = (omega, 0, ..., 0)`` and ``T = 2 pi / omega`` vanishes at
initial data of periodic orbits with fixed fast phase ``q_1(0)``.  Its
arguments are the slow angles ``q`` (``n - 1``) and all actions ``p``
(``n``); the equation for ``p_1`` is dropped.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .chart import ModelSpec, ResonantChart, build_chart
from .errors import (DomainExitError, InconclusiveCriterion, IntegrationError, InvalidInputError,
                     NumericFailure, UnsupportedDegeneracyError)
from .ftseries import FTSeries, LieGenerator, evaluate, evaluate_parameters, lie_derivative, partial_derivative

log = logging.getLogger(__name__)

__all__ = [
    "ModelField", "SeriesField", "CartesianField", "FlowResult", "flow", "PeriodMapConfig", "PeriodMap",
    "JacobianBlocks", "block_expand", "KernelAnalysis", "kernel_analysis", "gamma_criterion",
    "bifurcation_prediction", "NKResult", "newton_kantorovich", "lie_transform_point", "map_back",
    "map_forward", "candidate_state", "spectrum", "polish_candidate", "continue_candidate", "gamma_analysis",
]


# ------------------------------------------------------------------ fields
class ModelField:
    """Exact lattice Hamiltonian in the resonant chart, with gradient and Hessian.

    ``p`` are deviations from the resonant actions: ``I = I* + A^T p`` and
    ``phi = A^{-1} q``.  ``floor`` is the smallest admissible action.
    """

    def __init__(self, model: ModelSpec, eps: float, chart: ResonantChart | None = None,
                 floor: float | None = None):
        self.model = model
        self.eps = float(eps)
        self.chart = chart or build_chart(model.resonance(), mode=model.chart_mode)
        self.n = model.n
        self.A = np.asarray(self.chart.A, dtype=float)
        self.A_inv = np.asarray(self.chart.A_inv, dtype=float)
        self.I_star = np.asarray(model.I_star, dtype=float)
        self.floor = 0.05 * float(self.I_star.min()) if floor is None else float(floor)
        self._onsite = [np.polynomial.Polynomial(h) for h in model.onsite]
        self._onsite_d1 = [P.deriv(1) for P in self._onsite]
        self._onsite_d2 = [P.deriv(2) for P in self._onsite]
        self._couplings = [(c.sites[0], c.sites[1], c.coef * self.eps ** c.eps_power, c.amplitude, c.trig,
                            c.phase) for c in model.couplings]

    def actions(self, x) -> np.ndarray:
        return self.I_star + self.A.T @ np.asarray(x)[self.n:]

    def domain_margin(self, x) -> float:
        return float(self.actions(x).min() - self.floor)

    def _derivs(self, x, order: int):
        n = self.n
        q, p = np.asarray(x[:n]), np.asarray(x[n:])
        I = self.I_star + self.A.T @ p
        phi = self.A_inv @ q
        H = sum(float(P(Ij)) for P, Ij in zip(self._onsite, I))
        HJ = np.array([float(P(Ij)) for P, Ij in zip(self._onsite_d1, I)])
        Hphi = np.zeros(n)
        if order >= 2:
            HJJ = np.diag([float(P(Ij)) for P, Ij in zip(self._onsite_d2, I)])
            HJphi = np.zeros((n, n))
            Hphiphi = np.zeros((n, n))
        for a, b, c, amp, trig, ph in self._couplings:
            if c == 0.0:
                continue
            Ia, Ib = I[a], I[b]
            if amp == "sqrt":
                s = math.sqrt(Ia * Ib)
                g, ga, gb = s, s / (2 * Ia), s / (2 * Ib)
                gaa, gbb, gab = -s / (4 * Ia * Ia), -s / (4 * Ib * Ib), s / (4 * Ia * Ib)
            elif amp == "product":
                g, ga, gb, gaa, gbb, gab = Ia * Ib, Ib, Ia, 0.0, 0.0, 1.0
            else:
                g, ga, gb, gaa, gbb, gab = 1.0, 0.0, 0.0, 0.0, 0.0, 0.0
            th = phi[b] - phi[a] + ph
            if trig == "cos":
                t, t1, t2 = math.cos(th), -math.sin(th), -math.cos(th)
            else:
                t, t1, t2 = math.sin(th), math.cos(th), -math.sin(th)
            H += c * g * t
            HJ[a] += c * ga * t
            HJ[b] += c * gb * t
            Hphi[b] += c * g * t1
            Hphi[a] -= c * g * t1
            if order >= 2:
                HJJ[a, a] += c * gaa * t
                HJJ[b, b] += c * gbb * t
                HJJ[a, b] += c * gab * t
                HJJ[b, a] += c * gab * t
                for i, gi in ((a, ga), (b, gb)):
                    HJphi[i, b] += c * gi * t1
                    HJphi[i, a] -= c * gi * t1
                Hphiphi[b, b] += c * g * t2
                Hphiphi[a, a] += c * g * t2
                Hphiphi[a, b] -= c * g * t2
                Hphiphi[b, a] -= c * g * t2
        Hp = self.A @ HJ
        Hq = self.A_inv.T @ Hphi
        if order < 2:
            return H, Hq, Hp
        H_pp = self.A @ HJJ @ self.A.T
        H_pq = self.A @ HJphi @ self.A_inv
        H_qq = self.A_inv.T @ Hphiphi @ self.A_inv
        return H, Hq, Hp, H_qq, H_pq, H_pp

    def energy(self, x) -> float:
        return self._derivs(x, 1)[0]

    def rhs(self, x) -> np.ndarray:
        _, Hq, Hp = self._derivs(x, 1)
        return np.concatenate([Hp, -Hq])

    def rhs_jacobian(self, x):
        _, Hq, Hp, H_qq, H_pq, H_pp = self._derivs(x, 2)
        D = np.block([[H_pq, H_pp], [-H_qq, -H_pq.T]])
        return np.concatenate([Hp, -Hq]), D


class SeriesField:
    """Hamiltonian given by an ``EpsExpansion`` at numeric ``eps`` and ``q*``.

    ``floor_radius`` bounds ``|p|_inf`` (the expansion is local).
    """

    def __init__(self, H, eps: float, qstar: Sequence[float] | None = None, floor_radius: float = 0.5):
        self.n = H.n_dyn
        self.eps = float(eps)
        self.radius = float(floor_radius)
        Is, Ks, Cs = [], [], []
        for (l, s), f in H.terms.items():
            if f.is_zero():
                continue
            if f.n_par:
                if qstar is None:
                    if any(any(m) for (_, _, m), _ in f):
                        raise InvalidInputError("parametric series needs a numeric q*")
                else:
                    f = evaluate_parameters(f, qstar)
            I, K, _, C = f.arrays()
            Is.append(I)
            Ks.append(K)
            Cs.append(C * self.eps ** s)
        self.I = np.vstack(Is).astype(int)
        self.K = np.vstack(Ks).astype(float)
        self.C = np.concatenate(Cs)
        self.maxdeg = int(self.I.max()) if self.I.size else 0

    def domain_margin(self, x) -> float:
        return float(self.radius - np.max(np.abs(np.asarray(x)[self.n:])))

    def _pow(self, p):
        P = np.ones((self.n, self.maxdeg + 2))
        for e in range(1, self.maxdeg + 1):
            P[:, e] = P[:, e - 1] * p
        return P

    def _mono(self, P, E):
        out = np.ones(len(self.C))
        for i in range(self.n):
            out = out * P[i, E[:, i]]
        return out

    def _derivs(self, x, order: int):
        n = self.n
        q, p = np.asarray(x[:n]), np.asarray(x[n:])
        P = self._pow(p)
        w = self.C * np.exp(1j * (self.K @ q))
        mono = self._mono(P, self.I)
        H = float(np.sum(w * mono).real)
        Hq = (1j * (w * mono) @ self.K).real
        dmono = []
        for j in range(n):
            E = self.I.copy()
            E[:, j] = np.maximum(E[:, j] - 1, 0)
            dmono.append(self.I[:, j] * self._mono(P, E))
        Hp = np.array([np.sum(w * dm).real for dm in dmono])
        if order < 2:
            return H, Hq, Hp
        H_qq = -(((w * mono)[:, None] * self.K).T @ self.K).real
        H_pq = np.array([(1j * (w * dm) @ self.K).real for dm in dmono])
        H_pp = np.zeros((n, n))
        for j in range(n):
            for k in range(j, n):
                E = self.I.copy()
                E[:, j] -= 1
                E[:, k] -= 1
                coef = self.I[:, j] * (self.I[:, k] - (1 if j == k else 0))
                ok = (E >= 0).all(axis=1) & (coef != 0)
                if ok.any():
                    val = np.sum(w[ok] * coef[ok] * self._mono(P, np.where(E < 0, 0, E))[ok]).real
                    H_pp[j, k] = H_pp[k, j] = val
        return H, Hq, Hp, H_qq, H_pq, H_pp

    def energy(self, x) -> float:
        return self._derivs(x, 1)[0]

    def rhs(self, x) -> np.ndarray:
        _, Hq, Hp = self._derivs(x, 1)
        return np.concatenate([Hp, -Hq])

    def rhs_jacobian(self, x):
        _, Hq, Hp, H_qq, H_pq, H_pp = self._derivs(x, 2)
        return np.concatenate([Hp, -Hq]), np.block([[H_pq, H_pp], [-H_qq, -H_pq.T]])


class CartesianField:
    """Same lattice model in Cartesian variables ``x = sqrt(2I) cos phi``, ``y = -sqrt(2I) sin phi``.

    Only square-root amplitudes without phase are supported; used to cross-check
    the action-angle integration away from the chart.
    """

    def __init__(self, model: ModelSpec, eps: float):
        for c in model.couplings:
            if c.amplitude != "sqrt" or c.phase != 0.0:
                raise InvalidInputError("Cartesian form needs square-root amplitudes without phase")
        self.model = model
        self.n = model.n
        self.eps = float(eps)
        self._d1 = [np.polynomial.Polynomial(h).deriv(1) for h in model.onsite]

    @staticmethod
    def from_action_angle(I, phi) -> np.ndarray:
        r = np.sqrt(2 * np.asarray(I))
        return np.concatenate([r * np.cos(phi), -r * np.sin(phi)])

    @staticmethod
    def to_action_angle(z):
        n = len(z) // 2
        x, y = z[:n], z[n:]
        return 0.5 * (x * x + y * y), np.arctan2(-y, x)

    def energy(self, z) -> float:
        I, phi = self.to_action_angle(np.asarray(z))
        from .chart import model_hamiltonian
        return model_hamiltonian(self.model, I, phi, self.eps)

    def rhs(self, z) -> np.ndarray:
        n = self.n
        x, y = z[:n], z[n:]
        I = 0.5 * (x * x + y * y)
        w = np.array([float(P(Ij)) for P, Ij in zip(self._d1, I)])
        Hx, Hy = w * x, w * y
        for c in self.model.couplings:
            a, b = c.sites
            k = 0.5 * c.coef * self.eps ** c.eps_power
            if c.trig == "cos":   # x_a x_b + y_a y_b
                Hx[a] += k * x[b]; Hx[b] += k * x[a]
                Hy[a] += k * y[b]; Hy[b] += k * y[a]
            else:                 # y_a x_b - x_a y_b
                Hy[a] += k * x[b]; Hx[b] += k * y[a]
                Hx[a] -= k * y[b]; Hy[b] -= k * x[a]
        return np.concatenate([Hy, -Hx])


# -------------------------------------------------------------------- flow
@dataclass
class FlowResult:
    x: np.ndarray
    stm: np.ndarray | None
    energy_drift: float
    nfev: int
    sol: object = None


def flow(fld, x0, T: float, stm: bool = False, rtol: float = 1e-12, atol: float = 1e-14,
         max_step: float = np.inf, dense: bool = False) -> FlowResult:
    """Integrate Hamilton's equations (DOP853) from ``x0`` over ``[0, T]``.

    With ``stm`` the variational equations are integrated alongside and the
    state transition matrix is returned.  Leaving the field's domain raises
    :class:`DomainExitError`.
    """
    x0 = np.asarray(x0, dtype=float)
    d = len(x0)
    if stm:
        def rhs(t, y):
            f, D = fld.rhs_jacobian(y[:d])
            return np.concatenate([f, (D @ y[d:].reshape(d, d)).ravel()])
        y0 = np.concatenate([x0, np.eye(d).ravel()])
    else:
        def rhs(t, y):
            return fld.rhs(y)
        y0 = x0
    events = None
    if hasattr(fld, "domain_margin"):
        if fld.domain_margin(x0) <= 0:
            raise DomainExitError("initial point lies outside the admissible action domain")

        def exit_event(t, y):
            return fld.domain_margin(y[:d])
        exit_event.terminal = True
        exit_event.direction = -1
        events = [exit_event]
    sol = solve_ivp(rhs, (0.0, T), y0, method="DOP853", rtol=rtol, atol=atol, max_step=max_step,
                    events=events, dense_output=dense)
    if sol.status == 1:
        raise DomainExitError(f"trajectory left the action domain at t = {sol.t_events[0][0]:.6g}")
    if sol.status != 0:
        raise IntegrationError(f"integration failed: {sol.message}")
    y = sol.y[:, -1]
    x = y[:d]
    H0, H1 = fld.energy(x0), fld.energy(x)
    drift = abs(H1 - H0) / max(1.0, abs(H0))
    return FlowResult(x=x, stm=y[d:].reshape(d, d) if stm else None, energy_drift=drift, nfev=sol.nfev,
                      sol=sol if dense else None)


# -------------------------------------------------------------- period map
@dataclass
class PeriodMapConfig:
    """Shooting setup; ``T`` defaults to ``2 pi / omega``."""

    epsilon: float
    omega: float
    T: float | None = None
    q1_0: float = 0.0
    rtol: float = 1e-12
    atol: float = 1e-14
    max_step: float = np.inf

    def __post_init__(self):
        if self.epsilon < 0:
            raise InvalidInputError("epsilon must be nonnegative")
        if self.T is None:
            self.T = 2 * math.pi / self.omega
        if not (self.T > 0 and self.rtol > 0 and self.atol > 0):
            raise InvalidInputError("period and tolerances must be positive")

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "omega": self.omega, "T": self.T, "q1_0": self.q1_0,
                "rtol": self.rtol, "atol": self.atol,
                "max_step": None if not np.isfinite(self.max_step) else self.max_step}


class PeriodMap:
    """``Upsilon`` and its Jacobian for a field and configuration."""

    def __init__(self, fld, config: PeriodMapConfig):
        self.field = fld
        self.config = config
        self.n = fld.n
        self.dim = 2 * self.n - 1

    def state(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dim,):
            raise InvalidInputError(f"shooting vector must have {self.dim} components")
        n = self.n
        return np.concatenate([[self.config.q1_0], z[:n - 1], z[n - 1:]])

    def _flow(self, z, stm: bool, rtol_scale: float = 1.0) -> FlowResult:
        c = self.config
        return flow(self.field, self.state(z), c.T, stm=stm, rtol=c.rtol * rtol_scale,
                    atol=c.atol * rtol_scale, max_step=c.max_step)

    def _assemble(self, x0, xT):
        n, c = self.n, self.config
        Fq = xT[:n] - x0[:n]
        Fq[0] -= c.omega * c.T
        if c.epsilon > 0:
            G = (xT[n + 1:] - x0[n + 1:]) / c.epsilon
        else:
            G = np.zeros(n - 1)
        return np.concatenate([Fq, G])

    def __call__(self, z, rtol_scale: float = 1.0) -> np.ndarray:
        res = self._flow(z, False, rtol_scale)
        return self._assemble(self.state(z), res.x)

    def evaluate(self, z, jacobian: bool = True):
        """``(Upsilon, M, FlowResult)``."""
        res = self._flow(z, jacobian)
        U = self._assemble(self.state(z), res.x)
        if not jacobian:
            return U, None, res
        return U, self._jac_from_stm(res.stm), res

    def _jac_from_stm(self, Phi) -> np.ndarray:
        n, c = self.n, self.config
        cols = list(range(1, n)) + list(range(n, 2 * n))
        M = np.zeros((self.dim, self.dim))
        Phi_c = Phi[:, cols]
        M[:n] = Phi_c[:n]
        for j in range(n - 1):
            M[1 + j, j] -= 1.0
        if c.epsilon > 0:
            G = Phi_c[n + 1:].copy()
            for j in range(n - 1):
                G[j, n - 1 + 1 + j] -= 1.0
            M[n:] = G / c.epsilon
        return M

    def jacobian(self, z) -> np.ndarray:
        return self.evaluate(z, True)[1]

    def fd_jacobian(self, z, h: float = 1e-6) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        M = np.zeros((self.dim, self.dim))
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = h
            M[:, j] = (self(z + e) - self(z - e)) / (2 * h)
        return M

    def monodromy(self, z) -> np.ndarray:
        return self._flow(z, True).stm


# ------------------------------------------------------------------ blocks
@dataclass
class JacobianBlocks:
    """``M(eps) = M0 + eps M1 + ...`` split along ``(q; p)`` columns and ``(F; G)`` rows."""

    M0: np.ndarray
    M1: np.ndarray
    n: int
    eps_samples: list = field(default_factory=list)
    fit_residual: float = 0.0
    samples: list = field(default_factory=list)

    def _blk(self, M, rows, cols):
        n = self.n
        r = slice(0, n) if rows == "F" else slice(n, 2 * n - 1)
        c = slice(0, n - 1) if cols == "q" else slice(n - 1, 2 * n - 1)
        return M[r, c]

    A0 = property(lambda s: s._blk(s.M0, "F", "q"))
    A1 = property(lambda s: s._blk(s.M1, "F", "q"))
    C0 = property(lambda s: s._blk(s.M0, "F", "p"))
    C1 = property(lambda s: s._blk(s.M1, "F", "p"))
    B0 = property(lambda s: s._blk(s.M0, "G", "q"))
    B1 = property(lambda s: s._blk(s.M1, "G", "q"))
    D0 = property(lambda s: s._blk(s.M0, "G", "p"))
    D1 = property(lambda s: s._blk(s.M1, "G", "p"))

    def to_dict(self) -> dict:
        out = {"n": self.n, "eps_samples": list(self.eps_samples), "fit_residual": self.fit_residual,
               "M0": self.M0.tolist(), "M1": self.M1.tolist()}
        for name in ("A0", "A1", "B0", "B1", "C0", "C1", "D0", "D1"):
            out[name] = getattr(self, name).tolist()
        return out


def block_expand(jacobian_at: Callable[[float], np.ndarray], n: int, eps_samples: Sequence[float],
                 degree: int | None = None, warn_residual: float = 1e-6) -> JacobianBlocks:
    """Fit ``M(eps)`` by a polynomial in ``eps`` over the samples (least squares).

    ``jacobian_at(eps)`` returns the Jacobian of the period map at the
    candidate for that ``eps``.
    """
    eps = np.asarray(sorted(eps_samples), dtype=float)
    if len(eps) < 3 or np.any(eps <= 0):
        raise InvalidInputError("need at least three positive eps samples")
    degree = min(len(eps) - 1, 2) if degree is None else degree
    Ms = [np.asarray(jacobian_at(e)) for e in eps]
    V = np.vander(eps, degree + 1, increasing=True)
    Y = np.stack([M.ravel() for M in Ms])
    coef, *_ = np.linalg.lstsq(V, Y, rcond=None)
    fit = V @ coef
    resid = float(np.max(np.abs(fit - Y))) if len(eps) > degree + 1 else 0.0
    if resid > warn_residual:
        log.warning("M(eps) fit residual %.2e: higher-order terms dominate the samples", resid)
    d = Ms[0].shape[0]
    return JacobianBlocks(M0=coef[0].reshape(d, d), M1=coef[1].reshape(d, d), n=n, eps_samples=list(eps),
                          fit_residual=resid, samples=Ms)


@dataclass
class KernelAnalysis:
    a1: np.ndarray
    f1: np.ndarray
    g: np.ndarray
    orthogonality: float
    f2: np.ndarray | None
    chain_length: int
    gamma_lemma: float | None

    def to_dict(self) -> dict:
        return {"a1": self.a1.tolist(), "f1": self.f1.tolist(), "g": self.g.tolist(),
                "orthogonality": self.orthogonality, "f2": None if self.f2 is None else self.f2.tolist(),
                "chain_length": self.chain_length, "gamma_lemma": self.gamma_lemma}


def _unit_kernel(B: np.ndarray, rank_tol: float) -> np.ndarray:
    U, s, Vt = np.linalg.svd(B)
    dim = int(np.sum(s <= rank_tol * max(s[0], 1e-300)))
    if dim != 1:
        raise UnsupportedDegeneracyError(f"kernel of B0 has dimension {dim}, expected 1")
    a = Vt[-1]
    k = int(np.argmax(np.abs(a) > 1e-8))
    return a if a[k] > 0 else -a


def kernel_analysis(blocks: JacobianBlocks, rank_tol: float = 1e-6, chain_tol: float = 1e-8) -> KernelAnalysis:
    """Kernel of ``B0``, the vectors ``f1``, ``g`` and the Jordan chain at zero."""
    n = blocks.n
    a1 = _unit_kernel(blocks.B0, rank_tol)
    C0, D0, M0 = blocks.C0, blocks.D0, blocks.M0
    f1 = np.concatenate([a1, np.zeros(n)])
    u = -np.linalg.solve(C0, D0.T @ a1)
    g = np.concatenate([u, a1])
    orth = float(np.dot(f1, g))
    scale = max(1.0, np.abs(M0).max())
    f2, chain, gamma_l = None, 1, None
    if abs(orth) < chain_tol * scale:
        v, prev = None, f1
        for _ in range(2 * n - 2):
            x, *_ = np.linalg.lstsq(M0, prev, rcond=None)
            x = x - np.dot(x, f1) / np.dot(f1, f1) * f1
            if np.max(np.abs(M0 @ x - prev)) > chain_tol * scale * max(1.0, np.abs(x).max()):
                break
            chain += 1
            if v is None:
                v = x
            prev = x
        f2 = v
        if f2 is not None:
            den = float(np.dot(f2, g))
            if abs(den) > chain_tol:
                gamma_l = float(np.dot(blocks.M1 @ f1, g) / den)
    return KernelAnalysis(a1=a1, f1=f1, g=g, orthogonality=orth, f2=f2, chain_length=chain,
                          gamma_lemma=gamma_l)


def gamma_criterion(blocks: JacobianBlocks, a1: Sequence[float] | None = None, rank_tol: float = 1e-6) -> float:
    """``<(B1 - D0 C0^{-1} A1) a1, a1>`` (unit ``a1`` unless one is given)."""
    a = _unit_kernel(blocks.B0, rank_tol) if a1 is None else np.asarray(a1, dtype=float)
    Mred = blocks.B1 - blocks.D0 @ np.linalg.solve(blocks.C0, blocks.A1)
    return float(a @ Mred @ a)


def bifurcation_prediction(gamma: float, h: int, eps: float) -> np.ndarray:
    """The ``h`` roots ``lambda`` of ``lambda^h = eps gamma`` (bifurcating from zero)."""
    if h < 2:
        raise InvalidInputError("chain length h must be at least 2")
    if gamma == 0:
        raise InconclusiveCriterion("gamma vanishes: a higher-order normal form is needed")
    w = complex(eps * gamma)
    root = w ** (1.0 / h)
    return np.array([root * np.exp(2j * math.pi * j / h) for j in range(h)])


# -------------------------------------------------------- Newton-Kantorovich
@dataclass
class NKResult:
    x: np.ndarray
    x0: np.ndarray
    residual: float
    iterations: int
    converged: bool
    certificate: dict
    history: list

    @property
    def distance(self) -> float:
        return float(np.max(np.abs(self.x - self.x0)))

    def to_dict(self) -> dict:
        return {"x0": self.x0.tolist(), "x_star": self.x.tolist(), "residual": self.residual,
                "iterations": self.iterations, "converged": self.converged, "distance": self.distance,
                "certificate": self.certificate, "residual_history": self.history}


def newton_kantorovich(U: Callable, x0, jac: Callable | None = None, tol: float = 1e-10, max_iter: int = 50,
                       certify: bool = True, lipschitz_samples: int = 6, seed: int = 0,
                       frozen: bool = True) -> NKResult:
    """Newton iteration with a Newton-Kantorovich certificate (infinity norms).

    ``U`` maps ``R^d -> R^d``; ``jac`` returns its Jacobian.  The frozen
    variant reuses ``U'(x0)``; ``C3`` is a sampled Lipschitz constant of
    ``U'`` on the ball of radius ``max(4 eta, 1e-6)``.
    """
    x0 = np.asarray(x0, dtype=float)
    if jac is None:
        jac = getattr(U, "jacobian")
    J0 = np.asarray(jac(x0))
    if not np.all(np.isfinite(J0)) or np.linalg.cond(J0) > 1e14:
        raise NumericFailure("frozen Jacobian is singular")
    J0inv = np.linalg.inv(J0)
    F0 = np.asarray(U(x0))
    mu = float(np.max(np.abs(F0)))
    Mn = float(np.linalg.norm(J0inv, np.inf))
    eta = Mn * mu
    cert = {"mu": mu, "M": Mn, "eta": eta, "C3": None, "h": None, "t_minus": None, "radius": None,
            "certified": False, "norm": "inf"}
    if certify:
        rng = np.random.default_rng(seed)
        R = max(4 * eta, 1e-6)
        C3 = 0.0
        for _ in range(lipschitz_samples):
            dx = rng.choice([-1.0, 1.0], size=len(x0)) * rng.uniform(0.5, 1.0, size=len(x0)) * R
            Jx = np.asarray(jac(x0 + dx))
            C3 = max(C3, float(np.linalg.norm(Jx - J0, np.inf) / np.max(np.abs(dx))))
        h = Mn * C3 * eta
        cert.update(C3=C3, h=h, ball=R)
        if h < 0.25:
            t_minus = 1.0 if h == 0 else (1 - math.sqrt(1 - 4 * h)) / (2 * h)
            cert.update(t_minus=t_minus, radius=eta * t_minus, certified=True)
    x = x0.copy()
    F = F0
    hist = [mu]
    it = 0
    converged = mu < tol
    while not converged and it < max_iter:
        it += 1
        step = J0inv @ F if frozen else np.linalg.solve(np.asarray(jac(x)), F)
        x = x - step
        F = np.asarray(U(x))
        res = float(np.max(np.abs(F)))
        hist.append(res)
        if not np.isfinite(res):
            raise NumericFailure("Newton iteration diverged")
        converged = res < tol
        if it > 5 and res > 10 * hist[-5]:
            break
    if certify and cert["certified"]:
        cert["within_2eta"] = bool(np.max(np.abs(x - x0)) <= 2 * eta * (1 + 1e-9) + 1e-15)
    return NKResult(x=x, x0=x0, residual=float(hist[-1]), iterations=it, converged=converged,
                    certificate=cert, history=hist)


# ----------------------------------------------------- coordinate transforms
def _numeric_generator(gen: LieGenerator, qstar) -> LieGenerator:
    if gen.n_par and qstar is not None:
        return gen.at_parameters(qstar)
    return gen


def _series_at(f: FTSeries, p, q) -> float:
    if f.is_zero():
        return 0.0
    return evaluate(f, p, q, np.zeros(f.n_par)).real


def lie_transform_point(gen: LieGenerator | None, x, kmax: int = 40, tol: float = 1e-17) -> np.ndarray:
    """Time-one flow of ``gen`` evaluated at ``x = (q, p)`` via coordinate Lie series.

    ``gen`` must carry numeric parameters (no parameter harmonics).
    """
    x = np.asarray(x, dtype=float)
    if gen is None or gen.is_zero():
        return x.copy()
    n = gen.n_dyn
    q, p = x[:n], x[n:]
    out = x.copy()
    series = gen.series if gen.series is not None else None
    zeta = [_series_at(z, p, q) for z in gen.zeta] if gen.zeta else [0.0] * n
    for j in range(n):
        # q_j: L q_j = d chi / d p_j ; p_j: L p_j = -d chi / d q_j - zeta_j
        for kind in ("q", "p"):
            if kind == "q":
                first = partial_derivative(series, "p", j) if series is not None else None
                const = 0.0
            else:
                first = partial_derivative(series, "q", j).scale(-1.0) if series is not None else None
                const = -zeta[j]
            total = const
            term = first
            fact = 1.0
            for k in range(1, kmax + 1):
                if term is None or term.is_zero():
                    break
                fact *= k
                val = _series_at(term, p, q) / fact
                total += val
                if abs(val) < tol and k > 2:
                    break
                term = lie_derivative(term, gen)
            if kind == "q":
                out[j] += total
            else:
                out[n + j] += total
    return out


def _step_generators(step, eps: float, qstar):
    r = step.r
    chi0 = step.chi0
    g0 = None if chi0 is None else _numeric_generator(chi0, qstar).scaled(eps ** r)
    g2 = None if step.chi2.is_zero() else _numeric_generator(LieGenerator(step.chi2), qstar).scaled(eps ** r)
    return g0, g2


def map_back(x, steps: Sequence, eps: float, qstar: Sequence[float] | None = None, kmax: int = 40) -> np.ndarray:
    """Normalized-coordinate point to original resonant coordinates.

    Applies ``Phi_{chi0^(1)} o Phi_{chi2^(1)} o ... o Phi_{chi2^(r)}``.
    """
    x = np.asarray(x, dtype=float)
    for step in reversed(list(steps)):
        g0, g2 = _step_generators(step, eps, qstar)
        x = lie_transform_point(g2, x, kmax)
        x = lie_transform_point(g0, x, kmax)
    return x


def map_forward(x, steps: Sequence, eps: float, qstar: Sequence[float] | None = None, kmax: int = 40) -> np.ndarray:
    """Inverse of :func:`map_back` (time-minus-one flows in reverse order)."""
    x = np.asarray(x, dtype=float)
    for step in steps:
        g0, g2 = _step_generators(step, eps, qstar)
        x = lie_transform_point(None if g0 is None else g0.scaled(-1.0), x, kmax)
        x = lie_transform_point(None if g2 is None else g2.scaled(-1.0), x, kmax)
    return x


def candidate_state(nf, qstar: Sequence[float], eps: float, q1_0: float = 0.0, order: int | None = None):
    """Original-coordinate initial datum of the candidate ``(q1_0, q*, p = 0)``.

    Returns ``(q1, z)`` with ``z = (q_slow, p)`` for :class:`PeriodMap`.
    ``order`` restricts the transformation to the first steps.
    """
    qstar = np.asarray(qstar, dtype=float)
    n = nf.H_r.n_dyn
    xn = np.concatenate([[q1_0], qstar, np.zeros(n)])
    steps = nf.steps[:order] if order else nf.steps
    par = qstar if nf.params.get("qstar") is None else None
    x = map_back(xn, steps, eps, par)
    return float(x[0]), np.concatenate([x[1:n], x[n:]])


def spectrum(M: np.ndarray) -> np.ndarray:
    """Sorted moduli of the eigenvalues of ``M``."""
    return np.sort(np.abs(np.linalg.eigvals(M)))


# ------------------------------------------------------------------ drivers
def polish_candidate(F, qstar, eps: float, tol: float = 1e-14, max_iter: int = 60) -> np.ndarray:
    """Newton (least-squares steps) on the candidate system at ``eps``, started at ``qstar``."""
    q = np.asarray(qstar, dtype=float).copy()
    for _ in range(max_iter):
        val = F.value(q, eps)
        step = np.linalg.pinv(F.jacobian(q, eps), rcond=1e-10) @ val
        q = q - step
        if not np.all(np.isfinite(q)):
            raise NumericFailure("candidate polishing diverged")
        if np.max(np.abs(step)) < tol:
            break
    return q


def continue_candidate(model: ModelSpec, nf, qstar, eps: float, certify: bool = True, polish: bool = True,
                       q1_0: float = 0.0, rtol: float = 1e-12, atol: float = 1e-14,
                       tol: float = 1e-10) -> dict:
    """Shoot from the mapped candidate on the original Hamiltonian and run Newton-Kantorovich.

    Returns a record with the initial datum, the converged datum, the
    certificate, the Floquet spectrum (eigenvalue moduli of the monodromy)
    and the residual after re-integration at halved tolerances.
    """
    from .normal_form import candidate_system

    if not eps > 0:
        raise InvalidInputError("continuation needs eps > 0")
    qstar = np.asarray(qstar, dtype=float)
    q_cand = polish_candidate(candidate_system(nf), qstar, eps) if polish and nf.order > 0 else qstar
    q1, z0 = candidate_state(nf, q_cand, eps, q1_0)
    fld = ModelField(model, eps)
    pm = PeriodMap(fld, PeriodMapConfig(epsilon=eps, omega=nf.omega, q1_0=q1, rtol=rtol, atol=atol))
    res = newton_kantorovich(pm, z0, pm.jacobian, tol=tol, certify=certify)
    reverify = float(np.max(np.abs(pm(res.x, rtol_scale=0.5))))
    mono = pm.monodromy(res.x)
    out = res.to_dict()
    out.update({"candidate": q_cand.tolist(), "q1_0": q1, "epsilon": eps, "period": pm.config.T,
                "reverify_residual": reverify,
                "floquet_spectrum": np.sort(np.abs(np.linalg.eigvals(mono))).tolist(),
                "M_spectrum": spectrum(pm.jacobian(res.x)).tolist(),
                "integrator": {"method": "DOP853", "rtol": rtol, "atol": atol}})
    return out


def gamma_analysis(model: ModelSpec, nf, qstar, eps_samples: Sequence[float], q1_0: float = 0.0,
                   rtol: float = 1e-12, atol: float = 1e-14) -> dict:
    """Block expansion of ``M(eps)`` at the candidate and, if ``B0`` is singular, the kernel and gamma."""
    n = nf.H_r.n_dyn

    def jac(e):
        q1, z = candidate_state(nf, qstar, e, q1_0)
        pm = PeriodMap(ModelField(model, e), PeriodMapConfig(epsilon=e, omega=nf.omega, q1_0=q1,
                                                             rtol=rtol, atol=atol))
        return pm.jacobian(z)

    blocks = block_expand(jac, n, eps_samples)
    T = 2 * math.pi / nf.omega
    s = np.linalg.svd(blocks.B0, compute_uv=False)
    out = {"q": [float(x) for x in qstar], "eps_samples": [float(e) for e in eps_samples],
           "fit_residual": blocks.fit_residual, "period": T, "det_B0_over_T": float(np.linalg.det(blocks.B0 / T)),
           "B0_sigma_ratio": float(s[-1] / s[0]) if s[0] > 0 else 0.0}
    if s[0] > 0 and s[-1] / s[0] < 1e-6:
        try:
            ka = kernel_analysis(blocks)
            g = gamma_criterion(blocks, ka.a1)
            out.update({"kernel": ka.to_dict(), "gamma": g, "gamma_over_T": g / T})
        except NumericFailure as exc:
            out["kernel_error"] = str(exc)
    return out
