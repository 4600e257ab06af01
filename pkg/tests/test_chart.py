import json

import numpy as np
import pytest
import sympy as sp

from resonant_nf.chart import (Coupling, EpsExpansion, ModelSpec, build_chart, dnls_square_cell,
                               expand_hamiltonian, model_hamiltonian)
from resonant_nf.errors import DomainError, InvalidInputError, UnsupportedResonanceError
from resonant_nf.normal_form import twist_matrix


@pytest.mark.parametrize("k,mode", [((1, 1, 1, 1), "consecutive-differences"),
                                    ((1, 2, 3), "first-angle-differences"),
                                    ((1, -1, 2, 0), "first-angle-differences")])
def test_chart_is_unimodular_and_adapted(k, mode):
    ch = build_chart(k, mode)
    assert round(abs(np.linalg.det(ch.A))) == 1
    assert np.array_equal(ch.A @ ch.A_inv, np.eye(len(k), dtype=int))
    assert tuple(ch.A_inv[:, 0]) == k
    # along the unperturbed flow phi = phi0 + omega k t only q_1 moves
    dq = ch.A @ np.asarray(k, dtype=float)
    assert dq[0] == 1 and not np.any(dq[1:])


def test_chart_roundtrip_of_coordinates(rng):
    ch = build_chart((1, 1, 1))
    J = rng.normal(size=3)
    phi = rng.normal(size=3)
    assert np.allclose(ch.actions_from_p(ch.p_from_actions(J)), J)
    assert np.allclose(ch.angles_from_q(ch.q_from_angles(phi)), phi)
    again = type(ch).from_dict(json.loads(json.dumps(ch.to_dict())))
    assert np.array_equal(again.A, ch.A)


def test_chart_rejections():
    with pytest.raises(UnsupportedResonanceError):
        build_chart((2, 1))
    with pytest.raises(InvalidInputError):
        build_chart((1, 2), "consecutive-differences")
    with pytest.raises(InvalidInputError):
        build_chart((1, 1), "custom", matrix=[[2, 0], [0, 1]])
    with pytest.raises(InvalidInputError):
        build_chart((1, 1), "spherical")


def test_dnls_expansion_frequency_and_twist(dnls_H0):
    assert dnls_H0.omega == pytest.approx(2.0)
    f = dnls_H0.get(1, 0)
    assert len(f) == 1 and f.coefficient((1, 0, 0, 0), (0, 0, 0, 0), (0, 0, 0)) == pytest.approx(2.0)
    C, m = twist_matrix(dnls_H0)
    # oracle: Hessian of sum_j (A^T p)_j^2 computed symbolically
    ch = dnls_H0.chart
    p = sp.symbols("p0:4")
    J = sp.Matrix(ch.A.T.tolist()) * sp.Matrix(p)
    hess = sp.hessian(sum(Jj ** 2 for Jj in J), p)
    assert np.allclose(C, np.array(hess, dtype=float))
    assert m == pytest.approx(1.0 / np.linalg.norm(np.linalg.inv(C), 1))


@pytest.mark.parametrize("model", [
    dnls_square_cell(),
    dnls_square_cell(0.7, [Coupling((0, 2), 0.3, "const", "sin", 2), Coupling((1, 3), -0.4, "product", "cos", 1, 0.3)]),
])
def test_expansion_matches_direct_evaluation(model, rng):
    H = expand_hamiltonian(model, None, 7, 3)
    ch = H.chart
    const = sum(sum(c * I ** n for n, c in enumerate(h)) for h, I in zip(model.onsite, model.I_star))
    for _ in range(5):
        p = 1e-2 * rng.normal(size=model.n)
        q = rng.uniform(-np.pi, np.pi, model.n)
        eps = 0.03
        I = model.I_star + ch.actions_from_p(p)
        exact = model_hamiltonian(model, I, ch.angles_from_q(q), eps) - const
        approx = H.evaluate(p, q, np.zeros(H.n_par), eps)
        assert abs(exact - approx) < 1e-13


def test_expansion_roundtrip(dnls_H0):
    again = EpsExpansion.from_dict(json.loads(json.dumps(dnls_H0.to_dict())))
    assert again.keys() == dnls_H0.keys()
    for key in dnls_H0.keys():
        assert again.get(*key).max_difference(dnls_H0.get(*key)) == 0.0


def test_expansion_rejections():
    with pytest.raises(DomainError):
        expand_hamiltonian(dnls_square_cell(0.5).__class__(onsite=((0, 1, 1),) * 2, couplings=(),
                                                           I_star=np.array([0.5, 0.0])))
    off = ModelSpec(onsite=((0, 1, 1), (0, 1, 2)), couplings=(), I_star=np.array([0.5, 0.5]))
    with pytest.raises(InvalidInputError):
        expand_hamiltonian(off)
    with pytest.raises(InvalidInputError):
        expand_hamiltonian(dnls_square_cell(), None, 0, 3)


def test_model_files(tmp_path):
    toml = tmp_path / "m.toml"
    toml.write_text('sites = 4\nonsite = [0.0, 1.0, 1.0]\nI_star = 0.5\n'
                    '[[nearest_neighbour]]\ncoef = 2.0\namplitude = "sqrt"\n')
    m = ModelSpec.from_file(toml)
    ref = dnls_square_cell()
    assert m.n == 4 and len(m.couplings) == 4
    assert {c.sites for c in m.couplings} == {c.sites for c in ref.couplings}
    js = tmp_path / "m.json"
    js.write_text(json.dumps(ref.to_dict()))
    again = ModelSpec.from_file(js)
    I, phi = np.array([0.4, 0.6, 0.5, 0.55]), np.array([0.1, 1.0, 2.0, -1.0])
    assert model_hamiltonian(again, I, phi, 0.1) == pytest.approx(model_hamiltonian(ref, I, phi, 0.1))
    assert model_hamiltonian(m, I, phi, 0.1) == pytest.approx(model_hamiltonian(ref, I, phi, 0.1))


@pytest.mark.parametrize("bad", [
    {"sites": 2, "onsite": [0, 1], "I_star": 0.5, "couplings": [{"sites": [0, 0]}]},
    {"sites": 2, "onsite": [0, 1], "I_star": 0.5, "couplings": [{"sites": [0, 1], "amplitude": "cube"}]},
    {"sites": 2, "onsite": [0, 1], "I_star": 0.5, "couplings": [{"sites": [0, 1], "eps_power": 0}]},
    {"sites": 2, "onsite": [0, 1], "I_star": [0.5]},
    {"onsite": [0, 1], "I_star": 0.5},
])
def test_bad_models_rejected(bad):
    with pytest.raises(InvalidInputError):
        ModelSpec.from_dict(bad)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(InvalidInputError):
        ModelSpec.from_file(tmp_path / "absent.json")
    bad = tmp_path / "bad.toml"
    bad.write_text("sites = [")
    with pytest.raises(InvalidInputError):
        ModelSpec.from_file(bad)
