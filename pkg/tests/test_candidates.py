import json

import numpy as np
import pytest

from conftest import IN_OUT_OF_PHASE
from resonant_nf.candidates import (find_families, find_roots, necessary_condition, solve_candidates,
                                    torus_distance, wrap)
from resonant_nf.chart import Coupling, ModelSpec, expand_hamiltonian
from resonant_nf.normal_form import CandidateSystem, candidate_system, normalize

PI = np.pi
VORTICES = [(PI / 2, PI / 2, PI / 2), (-PI / 2, -PI / 2, -PI / 2)]


def family_residual(points, which):
    """Distance of sampled points from the closed-form family ``Q_which``."""
    th = points[:, 0]
    ref = {1: np.stack([th, th, PI - th], 1), 2: np.stack([th, PI - th, th], 1),
           3: np.stack([th, PI - th, PI - th], 1)}[which]
    return np.max(np.abs(wrap(points - ref)))


def contains(points, target, tol=1e-8):
    return any(torus_distance(p, target) < tol for p in points)


def test_isolated_roots(dnls_candidates):
    pts = [r.q for r in dnls_candidates.isolated]
    assert len(pts) == 2
    assert contains(pts, (0, 0, 0)) and contains(pts, (PI, PI, PI))
    for r in dnls_candidates.isolated:
        assert r.kernel_dim == 0 and r.residual < 1e-12


def test_three_families_match_closed_forms(dnls_candidates):
    fams = dnls_candidates.families
    assert len(fams) == 3
    matched = set()
    for fam in fams:
        assert fam.closed
        res = {j: family_residual(fam.points, j) for j in (1, 2, 3)}
        best = min(res, key=res.get)
        assert res[best] < 1e-6
        matched.add(best)
        assert fam.length == pytest.approx(2 * PI * np.sqrt(3), rel=1e-3)
    assert matched == {1, 2, 3}


def test_family_intersections(dnls_candidates):
    assert len(dnls_candidates.intersections) == 2
    for v in VORTICES:
        assert contains(dnls_candidates.intersections, v, 1e-8)


def test_necessary_condition_zeros(dnls_candidates):
    by_kind = {}
    for fam in dnls_candidates.families:
        which = min((1, 2, 3), key=lambda j: family_residual(fam.points, j))
        by_kind[which] = fam
    assert by_kind[2].identically_zero
    q1 = [z["q"] for z in by_kind[1].zeros]
    q3 = [z["q"] for z in by_kind[3].zeros]
    assert len(q1) == len(q3) == 4
    for target in [(0, 0, PI), (PI, PI, 0)] + VORTICES:
        assert contains(q1, target, 1e-9)
    for target in [(0, PI, PI), (PI, 0, 0)] + VORTICES:
        assert contains(q3, target, 1e-9)
    # on Q_1 the pairing with the unit tangent is 2 sin(2 theta) / sqrt(3)
    fam = by_kind[1]
    th = fam.points[:, 0]
    sign = np.sign(fam.tangents[0] @ np.array([1.0, 1.0, -1.0]))
    assert np.allclose(fam.pairing, sign * 2 * np.sin(2 * th) / np.sqrt(3), atol=1e-9)


def test_candidate_points(dnls_candidates):
    pts = dnls_candidates.candidate_points()
    assert len(pts) == 2 + 6
    for target in IN_OUT_OF_PHASE:
        assert contains(pts, target)


def test_parity_symmetry(dnls_F2):
    rng = np.random.default_rng(5)
    Q = rng.uniform(-PI, PI, (20, 3))
    assert np.allclose(dnls_F2.value(-Q, 0.01), -dnls_F2.value(Q, 0.01), atol=1e-15)
    roots = [r for r in find_roots(dnls_F2.part(0)) if not r.degenerate]
    assert roots
    for r in roots:
        assert contains([s.q for s in roots], -r.q, 1e-8)


def test_polished_roots_at_finite_eps(dnls_F2):
    cs = solve_candidates(dnls_F2, 0.01)
    for r in cs.isolated:
        assert r.residual < 1e-13
    assert contains([r.q for r in cs.isolated], (0, 0, 0), 1e-12)
    assert contains([r.q for r in cs.isolated], (PI, PI, PI), 1e-12)
    pol = [r.q for r in cs.polished]
    for target in IN_OUT_OF_PHASE:
        assert contains(pol, target, 1e-12)
    vort = [r for r in cs.polished if any(torus_distance(r.q, v) < 1e-8 for v in VORTICES)]
    assert len(vort) == 2 and all(r.kernel_dim == 1 for r in vort)
    for r in cs.polished:
        assert r.residual < 1e-13
    json.dumps(cs.to_dict())


def test_single_angle_system_has_no_families():
    model = ModelSpec(onsite=((0, 1, 1), (0, 1, 1)), couplings=(Coupling((0, 1), 1.0, "sqrt", "cos", 1),),
                      I_star=np.array([0.5, 0.5]), boundary="open", name="dimer")
    F = candidate_system(normalize(expand_hamiltonian(model, None, 3, 3), 2))
    cs = solve_candidates(F, 0.0)
    assert cs.families == [] and cs.intersections == []
    q = sorted(float(wrap(r.q)[0]) for r in cs.isolated)
    assert len(q) == 2
    assert abs(q[0]) < 1e-12 and abs(abs(q[1]) - PI) < 1e-12
    assert all(not r.degenerate for r in cs.isolated)


def test_generic_nondegenerate_system():
    """A Morse-type gradient on the two-torus has only isolated critical points."""
    from resonant_nf.ftseries import FTSeries
    S = lambda k, c: FTSeries.sine(3, (0,) + k, n_par=2, coeff=c)
    comps = [[S((1, 0), 1.0) + S((1, 1), 0.3), S((0, 1), 2.0) + S((1, 1), 0.3)]]
    F = CandidateSystem(comps)
    cs = solve_candidates(F, 0.0)
    assert cs.families == []
    assert len(cs.isolated) == 4
    for r in cs.isolated:
        assert r.residual < 1e-12 and not r.degenerate


def test_asymmetric_jacobian_uses_fallback():
    """Non-gradient leading part with a family: the left kernel vector is used."""
    from resonant_nf.ftseries import FTSeries
    S = lambda k, c: FTSeries.sine(3, (0,) + k, n_par=2, coeff=c)
    # F0 = (sin(q2 - q3), 2 sin(q2 - q3)) vanishes on the diagonal q2 = q3
    F0 = CandidateSystem([[S((1, -1), 1.0), S((1, -1), 2.0)]])
    fams = find_families(F0, seeds=[np.array([0.3, 0.3])])
    assert len(fams) == 1 and fams[0].closed
    F1 = CandidateSystem([[S((1, 0), 1.0), FTSeries.zero(3, 2, 0)]])
    fam = necessary_condition(F1, fams[0], F0)
    assert fam.fallback and not fam.symmetric
    assert len(fam.zeros) == 2
    for z in fam.zeros:
        assert abs(np.sin(z["q"][0])) < 1e-9
