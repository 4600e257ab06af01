"""Roots of the candidate system on the torus of slow angles.

Isolated roots come from batched Gauss-Newton iterations started on a
regular grid.  Degenerate roots (rank-deficient Jacobian) seed
pseudo-arclength continuation of one-parameter families; along each family
the next-order term is paired with the kernel direction to locate the
points that may survive.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .normal_form import CandidateSystem

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
RANK_TOL = 1e-8
DEDUP_RADIUS = 1e-6

__all__ = ["IsolatedRoot", "Family", "CandidateSet", "find_roots", "find_isolated", "find_families",
           "necessary_condition", "family_intersections", "solve_candidates", "polish_family_zeros", "torus_distance", "wrap"]


def wrap(q) -> np.ndarray:
    """Representative in ``[0, 2 pi)``; values within 1e-12 of ``2 pi`` map to 0."""
    q = np.mod(np.asarray(q, dtype=float), TWO_PI)
    return np.where(TWO_PI - q < 1e-12, 0.0, q)


def torus_delta(a, b) -> np.ndarray:
    """Shortest signed difference ``a - b`` on the torus, componentwise."""
    return (np.asarray(a) - np.asarray(b) + math.pi) % TWO_PI - math.pi


def torus_distance(a, b) -> float:
    return float(np.max(np.abs(torus_delta(a, b)))) if np.size(a) else 0.0


# ------------------------------------------------------------------- types
@dataclass
class IsolatedRoot:
    """A root with its residual, ``det D_q F`` and rank diagnostics."""

    q: np.ndarray
    residual: float
    det: float
    sigma_ratio: float
    kernel_dim: int

    @property
    def degenerate(self) -> bool:
        return self.kernel_dim > 0

    def to_dict(self) -> dict:
        return {"q": [float(x) for x in self.q], "residual": self.residual, "det": self.det,
                "sigma_ratio": self.sigma_ratio, "kernel_dim": self.kernel_dim}


@dataclass
class Family:
    """Sampled closed (or open) curve of degenerate roots.

    ``points`` live on the universal cover (consecutive samples are close);
    ``arc`` is the cumulative arclength and ``tangents`` the unit kernel
    directions ``a1``.
    """

    points: np.ndarray
    arc: np.ndarray
    tangents: np.ndarray
    closed: bool
    period_shift: np.ndarray | None = None
    pairing: np.ndarray | None = None
    zeros: list = field(default_factory=list)
    identically_zero: bool = False
    symmetric: bool = True
    fallback: bool = False

    @property
    def length(self) -> float:
        return float(self.arc[-1])

    def to_dict(self) -> dict:
        out = {"closed": self.closed, "length": self.length, "n_samples": len(self.points),
               "period_shift": None if self.period_shift is None else [int(round(x / TWO_PI))
                                                                       for x in self.period_shift],
               "points": wrap(self.points).round(12).tolist(),
               "arc": self.arc.round(12).tolist(),
               "tangents": self.tangents.round(12).tolist(),
               "symmetric": self.symmetric, "fallback": self.fallback,
               "identically_zero": self.identically_zero,
               "zeros": [{"arc": z["arc"], "q": [float(x) for x in wrap(z["q"])]} for z in self.zeros]}
        if self.pairing is not None:
            out["pairing"] = self.pairing.round(14).tolist()
        return out


@dataclass
class CandidateSet:
    """Isolated roots, families with necessary-condition zeros and intersections."""

    isolated: list
    families: list
    intersections: list
    epsilon: float
    tolerances: dict
    polished: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "tolerances": self.tolerances,
                "isolated": [r.to_dict() for r in self.isolated],
                "families": [f.to_dict() for f in self.families],
                "intersections": [[float(x) for x in wrap(p)] for p in self.intersections],
                "polished_family_zeros": [r.to_dict() for r in self.polished]}

    def candidate_points(self) -> list:
        """Isolated roots followed by every family zero (wrapped).

        Family zeros are replaced by their polished counterparts when present.
        """
        pts = [wrap(r.q) for r in self.isolated]
        if self.polished:
            return _dedup(pts + [wrap(r.q) for r in self.polished], DEDUP_RADIUS)
        for fam in self.families:
            if fam.identically_zero:
                continue
            pts += [wrap(z["q"]) for z in fam.zeros]
        return _dedup(pts, DEDUP_RADIUS)


# ------------------------------------------------------------ root finding
def _gauss_newton(F: CandidateSystem, q: np.ndarray, eps: float, tol: float, max_iter: int):
    q = q.copy()
    active = np.ones(len(q), dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        qa = q[active]
        val = F.value(qa, eps)
        J = F.jacobian(qa, eps)
        step = np.einsum("nij,nj->ni", np.linalg.pinv(J, rcond=1e-10), val)
        q[active] = qa - step
        done = np.max(np.abs(step), axis=1) < tol
        idx = np.flatnonzero(active)
        active[idx[done]] = False
        bad = ~np.isfinite(q).all(axis=1)
        q[bad] = np.nan
        active &= ~bad
    return q


def _dedup(points, radius: float) -> list:
    out = []
    for p in points:
        if all(torus_distance(p, o) > radius for o in out):
            out.append(p)
    return out


def _rank_info(J: np.ndarray):
    s = np.linalg.svd(J, compute_uv=False)
    if s[0] == 0:
        return 0.0, len(s)
    ratio = s[-1] / s[0]
    return float(ratio), int(np.sum(s < RANK_TOL * s[0]))


def find_roots(F: CandidateSystem, epsilon: float = 0.0, grid_per_angle: int = 16,
               tol: float = 1e-11, max_iter: int = 60) -> list:
    """All grid-seeded roots of ``F(., epsilon)``, degenerate ones included."""
    if grid_per_angle < 4:
        raise InvalidInputError("grid_per_angle must be at least 4")
    n = F.n_slow
    if n == 0:
        return []
    axis = np.arange(grid_per_angle) * TWO_PI / grid_per_angle
    seeds = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
    q = _gauss_newton(F, seeds, epsilon, 1e-14, max_iter)
    ok = np.isfinite(q).all(axis=1)
    q = wrap(q[ok])
    res = np.max(np.abs(F.value(q, epsilon)), axis=1) if len(q) else np.zeros(0)
    q = q[res < tol]
    res = res[res < tol]
    # deterministic order: lexicographic on rounded wrapped coordinates
    order = np.lexsort(np.round(q, 8).T[::-1]) if len(q) else []
    roots = []
    kept = []
    for i in order:
        if any(torus_distance(q[i], k) <= DEDUP_RADIUS for k in kept):
            continue
        kept.append(q[i])
        J = F.jacobian(q[i], epsilon)
        ratio, kdim = _rank_info(J)
        roots.append(IsolatedRoot(q=q[i], residual=float(res[i]), det=float(np.linalg.det(J)),
                                  sigma_ratio=ratio, kernel_dim=kdim))
    return roots


def find_isolated(F: CandidateSystem, epsilon: float = 0.0, grid_per_angle: int = 16,
                  tol: float = 1e-11) -> list:
    """Nondegenerate roots of ``F(., epsilon)`` (seeds that diverge are dropped)."""
    return [r for r in find_roots(F, epsilon, grid_per_angle, tol) if not r.degenerate]


# -------------------------------------------------------------- families
def _correct(F0: CandidateSystem, q: np.ndarray, anchor: np.ndarray, t: np.ndarray,
             tol: float = 1e-13, max_iter: int = 30):
    """Gauss-Newton on ``F0(q) = 0`` with ``<q - anchor, t> = 0``."""
    for _ in range(max_iter):
        r = np.concatenate([F0.value(q), [np.dot(q - anchor, t)]])
        J = np.vstack([F0.jacobian(q), t[None, :]])
        step = np.linalg.lstsq(J, r, rcond=None)[0]
        q = q - step
        if np.max(np.abs(step)) < tol:
            break
    res = float(np.max(np.abs(F0.value(q))))
    return q, res


def _kernel(J: np.ndarray) -> np.ndarray:
    _, _, Vt = np.linalg.svd(J)
    v = Vt[-1]
    k = int(np.argmax(np.abs(v)))
    return v if v[k] > 0 else -v


def _trace(F0: CandidateSystem, seed: np.ndarray, h: float, max_steps: int, tol: float) -> Family:
    t = _kernel(F0.jacobian(seed))
    pts, tans = [seed.copy()], [t.copy()]
    q, closed, shift = seed.copy(), False, None
    travelled = 0.0
    for _ in range(max_steps):
        pred = q + h * t
        qn, res = _correct(F0, pred, pred, t)
        if res > tol or not np.isfinite(qn).all():
            qn, res = _correct(F0, q + 0.5 * h * t, q + 0.5 * h * t, t)
            if res > tol:
                log.warning("family continuation stalled at %s", wrap(q))
                break
        secant = qn - q
        travelled += float(np.linalg.norm(secant))
        t = secant / np.linalg.norm(secant)
        q = qn
        gap = torus_delta(q, seed)
        if travelled > 3 * h and np.linalg.norm(gap) < 1.5 * h:
            # land on the hyperplane through the start to test closure
            target = q - gap
            qc, _ = _correct(F0, target.copy(), target, t)
            if torus_distance(qc, seed) < DEDUP_RADIUS:
                if np.dot(gap, t) < 0:
                    pts.append(q.copy())
                    tans.append(t.copy())
                closed = True
                shift = target - seed
                break
        pts.append(q.copy())
        tans.append(t.copy())
    else:
        log.warning("family starting at %s did not close after %d steps", wrap(seed), max_steps)
    P = np.array(pts)
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(P, axis=0), axis=1))])
    if closed:
        arc_total = arc[-1] + float(np.linalg.norm(P[-1] - (P[0] + shift)))
        arc = np.append(arc, arc_total)
        P = np.vstack([P, P[0] + shift])
        tans.append(tans[0])
    # tangents from the Jacobian kernel, oriented along the curve
    T = []
    for p, tp in zip(P, tans):
        J = F0.jacobian(p)
        k = _kernel(J) if _rank_info(J)[1] == 1 else tp
        T.append(k if np.dot(k, tp) >= 0 else -k)
    return Family(points=P, arc=arc, tangents=np.array(T), closed=closed, period_shift=shift)


def _on_family(q: np.ndarray, tq: np.ndarray, fam: Family, h: float) -> bool:
    d = np.max(np.abs(torus_delta(fam.points, q[None, :])), axis=1)
    i = int(np.argmin(d))
    return d[i] < 0.6 * h and abs(float(np.dot(fam.tangents[i], tq))) > 0.99


def find_families(F0: CandidateSystem, seeds: list | None = None, arc_step: float = 0.05,
                  max_steps: int = 20000, tol: float = 1e-11, grid_per_angle: int = 16) -> list:
    """Trace the one-parameter families through degenerate roots of ``F0``.

    ``seeds`` are degenerate roots (``IsolatedRoot`` or points); when omitted
    they are found by :func:`find_roots`.  Seeds with a kernel of dimension
    other than one (e.g. family crossings) are not used as starting points.
    """
    if seeds is None:
        seeds = [r for r in find_roots(F0, 0.0, grid_per_angle, tol) if r.degenerate]
    families: list[Family] = []
    for s in seeds:
        q = np.asarray(s.q if isinstance(s, IsolatedRoot) else s, dtype=float)
        J = F0.jacobian(q)
        if _rank_info(J)[1] != 1:
            continue
        t = _kernel(J)
        if any(_on_family(q, t, f, arc_step) for f in families):
            continue
        families.append(_trace(F0, q, arc_step, max_steps, tol))
    return families


def family_intersections(F0: CandidateSystem, families: list, arc_step: float = 0.05,
                         iters: int = 8) -> list:
    """Points where two traced families cross."""
    found = []
    for a in range(len(families)):
        for b in range(a + 1, len(families)):
            A, B = families[a], families[b]
            D = np.abs(torus_delta(A.points[:, None, :], B.points[None, :, :])).max(axis=2)
            for i, j in zip(*np.nonzero(D < 2 * arc_step)):
                pa, ta = A.points[i].copy(), A.tangents[i]
                pb, tb = pa + torus_delta(B.points[j], pa), B.tangents[j]
                for _ in range(iters):
                    M = np.stack([ta, -tb], axis=1)
                    su = np.linalg.lstsq(M, pb - pa, rcond=None)[0]
                    pa, _ = _correct(F0, pa + su[0] * ta, pa + su[0] * ta, ta)
                    pb, _ = _correct(F0, pb + su[1] * tb, pb + su[1] * tb, tb)
                if np.max(np.abs(pa - pb)) < 1e-8:
                    p = wrap(0.5 * (pa + pb))
                    if all(torus_distance(p, f) > 1e-6 for f in found):
                        found.append(p)
    found.sort(key=lambda p: tuple(np.round(p, 8)))
    return found


# ------------------------------------------------------- necessary condition
def _direction(J: np.ndarray, t: np.ndarray, symmetric: bool) -> np.ndarray:
    if symmetric:
        return t
    U, _, _ = np.linalg.svd(J)
    u = U[:, -1]
    return u if np.dot(u, t) >= 0 else -u


def necessary_condition(F1: CandidateSystem, family: Family, F0: CandidateSystem | None = None,
                        zero_tol: float = 1e-10, sym_tol: float = 1e-8) -> Family:
    """Pair the next-order term with the kernel direction along ``family``.

    The pairing ``<F1(q(s)), a1(s)>`` is sampled at every family point; its
    sign changes are refined by bisection along the curve (``F0`` is needed
    for that).  When ``D_q F0`` is not symmetric the left kernel vector is
    used instead (range test) and ``family.fallback`` is set.
    """
    pts = family.points
    symmetric = True
    if F0 is not None:
        Js = F0.jacobian(pts)
        asym = np.abs(Js - np.transpose(Js, (0, 2, 1))).max()
        symmetric = bool(asym <= sym_tol * max(1.0, np.abs(Js).max()))

    def dirs(q, t):
        if symmetric or F0 is None:
            return t
        return _direction(F0.jacobian(q), t, False)

    vals = F1.value(pts)
    a = np.array([dirs(p, t) for p, t in zip(pts, family.tangents)])
    pairing = np.einsum("ij,ij->i", vals, a)
    family.pairing = pairing
    family.symmetric = symmetric
    family.fallback = not symmetric
    family.identically_zero = bool(np.max(np.abs(pairing)) < zero_tol)
    zeros = []
    if not family.identically_zero:
        n = len(pts) - (1 if family.closed else 0)
        for i in range(n):
            j = i + 1
            if j >= len(pts):
                break
            pi_, pj = pairing[i], pairing[j]
            if abs(pi_) < zero_tol:
                zeros.append({"arc": float(family.arc[i]), "q": pts[i].copy()})
            elif pi_ * pj < 0 and abs(pj) >= zero_tol:
                zeros.append(_bisect(F0, F1, family, i, symmetric))
        zeros = _dedup_zeros(zeros)
    family.zeros = zeros
    return family


def _bisect(F0, F1, fam: Family, i: int, symmetric: bool, tol: float = 1e-13) -> dict:
    p0, p1 = fam.points[i], fam.points[i + 1]
    t0, t1 = fam.tangents[i], fam.tangents[i + 1]
    chord = p1 - p0
    u = chord / np.linalg.norm(chord)

    def at(lam):
        x = p0 + lam * chord
        if F0 is not None:
            x, _ = _correct(F0, x.copy(), x, u)
            J = F0.jacobian(x)
            t = _kernel(J) if _rank_info(J)[1] == 1 else (1 - lam) * t0 + lam * t1
            t = t if np.dot(t, t0) >= 0 else -t
            t = t / np.linalg.norm(t)
            if not symmetric:
                t = _direction(J, t, False)
        else:
            t = (1 - lam) * t0 + lam * t1
            t = t / np.linalg.norm(t)
        return x, float(np.dot(F1.value(x), t))

    lo, hi = 0.0, 1.0
    _, flo = at(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        x, fm = at(mid)
        if fm == 0.0 or (hi - lo) * np.linalg.norm(chord) < tol:
            break
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    x, _ = at(0.5 * (lo + hi))
    arc = float(fam.arc[i] + np.linalg.norm(x - p0))
    return {"arc": arc, "q": x}


def _dedup_zeros(zeros: list) -> list:
    out = []
    for z in sorted(zeros, key=lambda z: z["arc"]):
        if all(torus_distance(z["q"], o["q"]) > DEDUP_RADIUS for o in out):
            out.append(z)
    return out


# ----------------------------------------------------------------- driver
def solve_candidates(F: CandidateSystem, epsilon: float = 0.0, grid_per_angle: int = 16,
                     arc_step: float = 0.05, tol: float = 1e-11) -> CandidateSet:
    """Isolated roots of the leading part, traced families and their zeros.

    Isolated roots are Newton-polished on the full system at ``epsilon``
    (the leading part alone when ``epsilon`` is zero).
    """
    F0 = F.part(0)
    roots = find_roots(F0, 0.0, grid_per_angle, tol)
    isolated = []
    for r in roots:
        if r.degenerate:
            continue
        if epsilon and F.order > 1:
            q = _gauss_newton(F, r.q[None, :], epsilon, 1e-14, 60)[0]
            if not np.isfinite(q).all():
                continue
            J = F.jacobian(q, epsilon)
            ratio, kdim = _rank_info(J)
            res = float(np.max(np.abs(F.value(q, epsilon))))
            r = IsolatedRoot(q=wrap(q), residual=res, det=float(np.linalg.det(J)), sigma_ratio=ratio,
                             kernel_dim=kdim)
        isolated.append(r)
    families = find_families(F0, [r for r in roots if r.degenerate], arc_step, tol=tol)
    if F.order > 1:
        F1 = F.part(1)
        for fam in families:
            necessary_condition(F1, fam, F0)
    crossings = family_intersections(F0, families, arc_step)
    polished = polish_family_zeros(F, families, epsilon) if epsilon and F.order > 1 else []
    return CandidateSet(isolated=isolated, families=families, intersections=crossings, epsilon=epsilon,
                        tolerances={"residual": tol, "dedup": DEDUP_RADIUS, "rank": RANK_TOL,
                                    "arc_step": arc_step, "grid_per_angle": grid_per_angle},
                        polished=polished)


def polish_family_zeros(F: CandidateSystem, families: list, epsilon: float) -> list:
    """Newton-polish the necessary-condition zeros on the full system at ``epsilon``.

    Zeros whose iteration fails to converge are dropped with a warning.
    """
    seeds = [z["q"] for fam in families if not fam.identically_zero for z in fam.zeros]
    if not seeds:
        return []
    q = _gauss_newton(F, np.array(seeds, dtype=float), epsilon, 1e-14, 60)
    out = []
    for q0, qi in zip(seeds, q):
        if not np.isfinite(qi).all():
            log.warning("family zero %s did not polish at eps=%g", np.round(q0, 6), epsilon)
            continue
        J = F.jacobian(qi, epsilon)
        ratio, kdim = _rank_info(J)
        res = float(np.max(np.abs(F.value(qi, epsilon))))
        out.append(IsolatedRoot(q=wrap(qi), residual=res, det=float(np.linalg.det(J)), sigma_ratio=ratio,
                                kernel_dim=kdim))
    keep = _dedup([r.q for r in out], DEDUP_RADIUS)
    return [next(r for r in out if torus_distance(r.q, k) == 0.0) for k in keep]
