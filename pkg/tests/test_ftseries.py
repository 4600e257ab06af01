import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from resonant_nf.errors import InvalidInputError, ResourceError
from resonant_nf.estimates import cauchy_bound
from resonant_nf.ftseries import (FTSeries, LieGenerator, average_q1, evaluate, evaluate_parameters,
                                  lie_derivative, lie_series_apply, multiply, partial_derivative,
                                  poisson_bracket, random_series, substitute_parameter_diagonal,
                                  substitute_slow_by_parameters, weighted_norm)

N = 3
PROPS = settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])


def rand(seed, grade, n_par=0, nterms=6, kmax=2):
    return random_series(np.random.default_rng(seed), N, n_par, grade, nterms, kmax=kmax)


seeds = st.integers(0, 2**32 - 1)
grades = st.integers(0, 2)


def close(f, g, tol=1e-9):
    scale = max(1.0, f.mass(), g.mass())
    return f.max_difference(g) <= tol * scale


# ------------------------------------------------------------ construction
def test_real_series_is_conjugate_symmetric():
    f = FTSeries(2, 0, 1, {((1, 0), (1, 2), ()): 1 + 2j}, real=True)
    assert f.coefficient((1, 0), (-1, -2)) == pytest.approx(np.conj(f.coefficient((1, 0), (1, 2))))
    assert abs(evaluate(f, [0.3, 0.1], [0.7, -0.2]).imag) < 1e-15


def test_pruning_and_zero():
    f = FTSeries(2, 0, 0, {((0, 0), (1, 0), ()): 1e-20})
    assert f.is_zero() and len(f) == 0


@pytest.mark.parametrize("bad", [
    {((1,), (0, 0), ()): 1.0},          # wrong i length
    {((1, 1), (0, 0), ()): 1.0},        # grade 2 in grade-1 series
    {((1, 0), (0, 0), (1,)): 1.0},      # parameter harmonic without parameters
])
def test_malformed_terms_rejected(bad):
    with pytest.raises(InvalidInputError):
        FTSeries(2, 0, 1, bad)


def test_grade_mismatch_in_sum_rejected():
    with pytest.raises(InvalidInputError):
        FTSeries.action(2, 0) + FTSeries.cosine(2, (1, 0))


def test_json_roundtrip_and_sorted_layout():
    f = rand(3, 2, n_par=2)
    doc = f.to_dict()
    assert set(doc) == {"version", "n_dyn", "n_par", "grade_l", "real_flag", "terms"}
    keys = [(t["i"], t["k"], t["m"]) for t in doc["terms"]]
    assert keys == sorted(keys)
    g = FTSeries.from_json(f.to_json())
    assert g.max_difference(f) == 0.0 and g.real == f.real and g.grade == f.grade


def test_unknown_version_rejected():
    doc = FTSeries.action(2, 0).to_dict()
    doc["version"] = 99
    with pytest.raises(InvalidInputError):
        FTSeries.from_dict(json.loads(json.dumps(doc)))


# ------------------------------------------------------------ known brackets
def test_canonical_brackets():
    q_dep = FTSeries.cosine(2, (1, 0))
    p0 = FTSeries.action(2, 0)
    # {p_1, cos q_1} = -dp/dp * d cos/dq = sin q_1
    assert close(poisson_bracket(p0, q_dep), FTSeries.sine(2, (1, 0)))
    # {cos q_1, p_1} = -sin q_1
    assert close(poisson_bracket(q_dep, p0), FTSeries.sine(2, (1, 0)).scale(-1))
    # actions commute
    assert poisson_bracket(p0, FTSeries.action(2, 1)).is_zero()


def test_lie_derivative_of_translation():
    f = multiply(FTSeries.action(2, 0), FTSeries.action(2, 1))
    zeta = [FTSeries.cosine(2, (0, 0), coeff=2.0), FTSeries.cosine(2, (0, 0), coeff=-1.0)]
    gen = LieGenerator(None, zeta)
    # L_<zeta,q> f = -zeta_j df/dp_j = -2 p_2 + p_1
    expect = FTSeries.action(2, 1, coeff=-2.0) + FTSeries.action(2, 0, coeff=1.0)
    assert close(lie_derivative(f, gen), expect)


def test_translation_must_not_depend_on_dynamic_angles():
    with pytest.raises(InvalidInputError):
        LieGenerator(None, [FTSeries.cosine(2, (1, 0)), FTSeries.zero(2)])


# ------------------------------------------------------------ properties
@PROPS
@given(seeds, seeds, grades, grades)
def test_bracket_antisymmetry(s1, s2, a, b):
    f, g = rand(s1, a), rand(s2, b)
    assert close(poisson_bracket(f, g), poisson_bracket(g, f).scale(-1))


@PROPS
@given(seeds, seeds, grades, grades)
def test_bracket_grade_law(s1, s2, a, b):
    f, g = rand(s1, a), rand(s2, b)
    h = poisson_bracket(f, g)
    assert h.grade == max(a + b - 1, 0)
    assert all(sum(i) == h.grade for (i, _, _), _ in h)


@PROPS
@given(seeds, seeds, seeds, grades, grades, grades)
def test_jacobi_identity(s1, s2, s3, a, b, c):
    f, g, h = rand(s1, a, nterms=4), rand(s2, b, nterms=4), rand(s3, c, nterms=4)
    if a + b + c < 2:
        return
    terms = [poisson_bracket(f, poisson_bracket(g, h)), poisson_bracket(g, poisson_bracket(h, f)),
             poisson_bracket(h, poisson_bracket(f, g))]
    total = terms[0]
    for t in terms[1:]:
        total = t if total.is_zero() else total if t.is_zero() else total + t
    scale = 1.0 + sum(t.mass() for t in terms)
    assert total.mass() <= 1e-10 * scale


@PROPS
@given(seeds, seeds, seeds, grades, grades, grades)
def test_leibniz_rule(s1, s2, s3, a, b, c):
    f, g, h = rand(s1, a, nterms=4), rand(s2, b, nterms=4), rand(s3, c, nterms=4)
    lhs = poisson_bracket(f, multiply(g, h))
    parts = [multiply(poisson_bracket(f, g), h), multiply(g, poisson_bracket(f, h))]
    parts = [p for p in parts if not p.is_zero()]
    rhs = parts[0] if len(parts) == 1 else parts[0] + parts[1] if parts else FTSeries.zero(N, 0, lhs.grade)
    assert close(lhs, rhs) if not lhs.is_zero() else rhs.mass() < 1e-10


@pytest.mark.parametrize("d", [0.05, 0.125, 0.25])
def test_cauchy_inequalities(d):
    rho, sigma = 0.1, 0.5
    for seed in range(100):
        g = rand(seed, 1 + seed % 3, nterms=8, kmax=3)
        for j in range(N):
            dp = weighted_norm(partial_derivative(g, "p", j), rho, sigma, 1 - d) if g.grade else 0.0
            dq = weighted_norm(partial_derivative(g, "q", j), rho, sigma, 1 - d)
            assert dp <= cauchy_bound(g, "p", d, rho, sigma) * (1 + 1e-12)
            assert dq <= cauchy_bound(g, "q", d, rho, sigma) * (1 + 1e-12)


@settings(max_examples=100, deadline=None)
@given(seeds, grades, st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_norm_monotone_in_alpha(seed, grade, a, b):
    f = rand(seed, grade)
    lo, hi = sorted((a, b))
    assert weighted_norm(f, 0.1, 0.5, lo) <= weighted_norm(f, 0.1, 0.5, hi) * (1 + 1e-12)


@settings(max_examples=100, deadline=None)
@given(seeds, seeds, grades)
def test_norm_triangle_and_product(s1, s2, grade):
    f, g = rand(s1, grade), rand(s2, grade)
    nf, ng = weighted_norm(f, 0.1, 0.5), weighted_norm(g, 0.1, 0.5)
    assert weighted_norm(f + g, 0.1, 0.5) <= (nf + ng) * (1 + 1e-12)
    assert weighted_norm(multiply(f, g), 0.1, 0.5) <= nf * ng * (1 + 1e-12)


def test_norm_rejects_bad_parameters():
    with pytest.raises(InvalidInputError):
        weighted_norm(FTSeries.action(2, 0), 0.1, 0.5, 1.5)


# ------------------------------------------------------------ oracles
def _mp_eval(f, p, q, qs):
    mpmath.mp.dps = 40
    total = mpmath.mpc(0)
    for (i, k, m), c in f:
        mono = mpmath.mpf(1)
        for pj, e in zip(p, i):
            mono *= mpmath.mpf(pj) ** e
        ph = sum(mpmath.mpf(kj) * mpmath.mpf(qj) for kj, qj in zip(k, q))
        ph += sum(mpmath.mpf(mj) * mpmath.mpf(sj) for mj, sj in zip(m, qs))
        total += mpmath.mpc(c.real, c.imag) * mono * mpmath.expjpi(ph / mpmath.pi)
    return complex(total)


def test_evaluate_matches_high_precision_oracle(rng):
    for seed in range(20):
        f = rand(seed, seed % 3, n_par=2, nterms=10)
        p, q, qs = rng.normal(size=N), rng.uniform(-4, 4, N), rng.uniform(-4, 4, 2)
        assert abs(evaluate(f, p, q, qs) - _mp_eval(f, p, q, qs)) < 1e-12 * (1 + f.mass())


def test_partial_derivatives_match_finite_differences(rng):
    h = 1e-6
    for seed in range(10):
        f = rand(seed, 2, n_par=1)
        p, q, qs = rng.normal(size=N), rng.uniform(-3, 3, N), rng.uniform(-3, 3, 1)
        for j in range(N):
            e = np.eye(N)[j] * h
            fd_p = (evaluate(f, p + e, q, qs) - evaluate(f, p - e, q, qs)) / (2 * h)
            fd_q = (evaluate(f, p, q + e, qs) - evaluate(f, p, q - e, qs)) / (2 * h)
            assert abs(evaluate(partial_derivative(f, "p", j), p, q, qs) - fd_p) < 1e-6 * (1 + f.mass())
            assert abs(evaluate(partial_derivative(f, "q", j), p, q, qs) - fd_q) < 1e-6 * (1 + f.mass())
        e = np.array([h])
        fd = (evaluate(f, p, q, qs + e) - evaluate(f, p, q, qs - e)) / (2 * h)
        assert abs(evaluate(partial_derivative(f, "qpar", 0), p, q, qs) - fd) < 1e-6 * (1 + f.mass())


def test_lie_series_equals_composition_with_flow(rng):
    from resonant_nf.continuation import lie_transform_point
    chi = rand(7, 1, nterms=5).scale(0.02)
    f = rand(8, 2, nterms=5)
    parts = lie_series_apply(chi, f, 1, 25, 10)
    x = np.concatenate([rng.uniform(-2, 2, N), 0.1 * rng.normal(size=N)])
    series_value = sum(evaluate(t, x[N:], x[:N]).real for t in parts if t is not None)
    moved = lie_transform_point(LieGenerator(chi), x)
    assert abs(series_value - evaluate(f, moved[N:], moved[:N]).real) < 1e-11


def test_lie_series_budget():
    chi = rand(1, 1, nterms=6)
    f = rand(2, 2, nterms=6)
    with pytest.raises(ResourceError):
        lie_series_apply(chi, f, 1, 6, 10, term_budget=5)


# ------------------------------------------------------------ substitutions
def test_average_and_parameter_substitutions(rng):
    f = FTSeries.cosine(3, (1, 1, 0), m=(1, 0), n_par=2) + FTSeries.cosine(3, (0, 2, -1), m=(0, 1), n_par=2)
    avg = average_q1(f)
    assert all(k[0] == 0 for (_, k, _), _ in avg)
    q, qs = rng.uniform(-3, 3, 3), rng.uniform(-3, 3, 2)
    diag = substitute_parameter_diagonal(f)
    assert diag.n_par == 2 and all(not any(m) for (_, _, m), _ in diag)
    assert abs(evaluate(diag, np.zeros(3), q, np.zeros(2)) - evaluate(f, np.zeros(3), q, q[1:])) < 1e-13
    folded = substitute_slow_by_parameters(f)
    assert abs(evaluate(folded, np.zeros(3), q, qs) -
               evaluate(f, np.zeros(3), np.r_[q[0], qs], qs)) < 1e-13
    ev = evaluate_parameters(f, qs)
    assert abs(evaluate(ev, np.zeros(3), q, np.zeros(2)) - evaluate(f, np.zeros(3), q, qs)) < 1e-13


def test_product_grade_and_value(rng):
    f, g = rand(1, 1), rand(2, 2)
    h = multiply(f, g)
    assert h.grade == 3
    p, q = rng.normal(size=N), rng.uniform(-3, 3, N)
    assert abs(evaluate(h, p, q) - evaluate(f, p, q) * evaluate(g, p, q)) < 1e-10 * (1 + h.mass())
    assert math.isclose((f * 2.0).mass(), 2 * f.mass())
