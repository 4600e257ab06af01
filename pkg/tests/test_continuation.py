import numpy as np
import pytest

from resonant_nf.chart import ModelSpec, expand_hamiltonian
from resonant_nf.continuation import (CartesianField, JacobianBlocks, ModelField, PeriodMap, PeriodMapConfig,
                                      SeriesField, bifurcation_prediction, block_expand, candidate_state,
                                      continue_candidate, flow, gamma_criterion, kernel_analysis, map_back,
                                      map_forward, newton_kantorovich, spectrum)
from resonant_nf.errors import DomainExitError, InconclusiveCriterion, InvalidInputError, NumericFailure
from resonant_nf.normal_form import normalize
from test_normal_form import q12_model

PI = np.pi


def dnls_state(rng, n=4, spread=0.02):
    return np.concatenate([rng.uniform(-PI, PI, n), rng.uniform(-spread, spread, n)])


# -------------------------------------------------------------------- flow
def test_energy_conservation(dnls, rng):
    fld = ModelField(dnls, 0.05)
    res = flow(fld, dnls_state(rng), 3 * PI)
    assert res.energy_drift < 1e-11


def test_uncoupled_flow_closed_form(rng):
    model = ModelSpec(onsite=((0, 1, 1),) * 3, couplings=(), I_star=np.full(3, 0.5), boundary="open")
    fld = ModelField(model, 0.1)
    x0 = np.concatenate([rng.uniform(-PI, PI, 3), [0.01, -0.02, 0.03]])
    T = 2.7
    res = flow(fld, x0, T)
    I = fld.actions(x0)
    phi0 = fld.A_inv @ x0[:3]
    phiT = fld.A_inv @ res.x[:3]
    assert np.allclose(phiT, phi0 + (1 + 2 * I) * T, atol=1e-10)
    assert np.allclose(res.x[3:], x0[3:], atol=1e-14)


def test_cartesian_cross_check(dnls, rng):
    eps = 0.05
    fld = ModelField(dnls, eps)
    x0 = dnls_state(rng)
    T = PI
    xr = flow(fld, x0, T).x
    I0, phi0 = fld.actions(x0), fld.A_inv @ x0[:4]
    cart = CartesianField(dnls, eps)
    z = flow(cart, CartesianField.from_action_angle(I0, phi0), T).x
    I, phi = CartesianField.to_action_angle(z)
    assert np.allclose(I, fld.actions(xr), atol=1e-10)
    assert np.allclose(np.angle(np.exp(1j * (phi - fld.A_inv @ xr[:4]))), 0, atol=1e-9)


def test_cartesian_rejects_product_amplitudes():
    with pytest.raises(InvalidInputError):
        CartesianField(q12_model(), 0.1)


@pytest.mark.parametrize("kind", ["model", "series"])
def test_rhs_jacobian_matches_finite_differences(kind, dnls, dnls_H0, rng):
    fld = ModelField(dnls, 0.05) if kind == "model" else SeriesField(dnls_H0, 0.05)
    x = dnls_state(rng)
    f, D = fld.rhs_jacobian(x)
    assert np.allclose(f, fld.rhs(x), atol=1e-15)
    h = 1e-6
    for j in range(8):
        e = np.zeros(8)
        e[j] = h
        fd = (fld.rhs(x + e) - fld.rhs(x - e)) / (2 * h)
        assert np.allclose(D[:, j], fd, atol=1e-7)


def test_series_field_matches_model(dnls, rng):
    eps = 0.05
    H0 = expand_hamiltonian(dnls, None, 7, 3)
    sf, mf = SeriesField(H0, eps), ModelField(dnls, eps)
    xs = [dnls_state(rng, spread=1e-3) for _ in range(3)]
    dE = [sf.energy(x) - mf.energy(x) for x in xs]
    assert np.ptp(dE) < 1e-13
    for x in xs:
        assert np.allclose(sf.rhs(x), mf.rhs(x), atol=1e-12)


def test_domain_exit(dnls):
    fld = ModelField(dnls, 0.01)
    x0 = np.concatenate([np.zeros(4), [-0.49, 0.0, 0.0, 0.0]])
    with pytest.raises(DomainExitError):
        flow(fld, x0, 1.0)


def test_symplectic_monodromy(dnls, rng):
    pm = PeriodMap(ModelField(dnls, 0.02), PeriodMapConfig(0.02, 2.0))
    z = np.concatenate([rng.uniform(-PI, PI, 3), rng.uniform(-0.01, 0.01, 4)])
    Phi = pm.monodromy(z)
    J = np.block([[np.zeros((4, 4)), np.eye(4)], [-np.eye(4), np.zeros((4, 4))]])
    assert np.linalg.det(Phi) == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(Phi.T @ J @ Phi, J, atol=1e-9)
    mods = spectrum(Phi)
    assert np.all(np.diff(mods) >= 0)


# -------------------------------------------------------------- period map
def test_unperturbed_period_map_vanishes(dnls, rng):
    pm = PeriodMap(ModelField(dnls, 0.0), PeriodMapConfig(0.0, 2.0))
    for _ in range(3):
        z = np.concatenate([rng.uniform(-PI, PI, 3), np.zeros(4)])
        assert np.max(np.abs(pm(z))) < 1e-12


def test_variational_jacobian_matches_finite_differences(dnls, rng):
    pm = PeriodMap(ModelField(dnls, 0.01), PeriodMapConfig(0.01, 2.0))
    z = np.concatenate([[0.1, -0.2, PI + 0.05], rng.uniform(-1e-3, 1e-3, 4)])
    M = pm.jacobian(z)
    assert np.allclose(M, pm.fd_jacobian(z, 1e-5), atol=1e-6)


def test_shooting_vector_shape(dnls):
    pm = PeriodMap(ModelField(dnls, 0.01), PeriodMapConfig(0.01, 2.0))
    with pytest.raises(InvalidInputError):
        pm(np.zeros(6))
    with pytest.raises(InvalidInputError):
        PeriodMapConfig(-1.0, 2.0)


@pytest.mark.parametrize("theta", [0.3, 1.1, 2.5])
def test_symmetric_family_is_periodic(dnls, theta):
    pm = PeriodMap(ModelField(dnls, 0.05), PeriodMapConfig(0.05, 2.0))
    z = np.concatenate([[theta, PI - theta, theta], np.zeros(4)])
    assert np.max(np.abs(pm(z))) < 1e-12


# ----------------------------------------------------------- transformations
@pytest.mark.parametrize("which", ["dnls", "q12"])
def test_map_back_roundtrip(which, dnls_nf3, rng):
    if which == "dnls":
        nf = dnls_nf3
    else:
        nf = normalize(expand_hamiltonian(q12_model(), None, 3, 3), 3)
    n = nf.H_r.n_dyn
    eps = 0.01
    for _ in range(3):
        qs = rng.uniform(-PI, PI, n - 1)
        x = np.concatenate([rng.uniform(-PI, PI, n), rng.uniform(-0.01, 0.01, n)])
        y = map_back(x, nf.steps, eps, qs)
        assert np.max(np.abs(y - x)) > 1e-5
        assert np.max(np.abs(map_forward(y, nf.steps, eps, qs) - x)) < 1e-9


def test_candidate_state_inverts(dnls_nf3):
    qs = np.array([0.0, 0.0, PI])
    q1, z = candidate_state(dnls_nf3, qs, 1e-3)
    x = np.concatenate([[q1], z])
    back = map_forward(x, dnls_nf3.steps, 1e-3, qs)
    assert np.allclose(back, np.concatenate([[0.0], qs, np.zeros(4)]), atol=1e-12)


# ------------------------------------------------------------------ blocks
def test_block_expand_recovers_polynomial(rng):
    M0, M1, M2 = rng.normal(size=(3, 5, 5))
    blocks = block_expand(lambda e: M0 + e * M1 + e * e * M2, 3, [1e-3, 2e-3, 4e-3, 8e-3])
    assert np.allclose(blocks.M0, M0, atol=1e-9) and np.allclose(blocks.M1, M1, atol=1e-6)
    assert blocks.fit_residual < 1e-12
    assert blocks.A0.shape == (3, 2) and blocks.C0.shape == (3, 3)
    assert blocks.B0.shape == (2, 2) and blocks.D0.shape == (2, 3)
    with pytest.raises(InvalidInputError):
        block_expand(lambda e: M0, 3, [1e-3, 2e-3])


def planted_blocks(rng, gamma_target):
    """Two slow angles; ``B0`` has kernel ``(1, 1)/sqrt 2`` and ``D0 = 0``."""
    n = 3
    M0 = np.zeros((5, 5))
    M0[:3, 2:] = rng.normal(size=(3, 3)) + 3 * np.eye(3)     # C0
    M0[3:, :2] = np.array([[1.0, -1.0], [-1.0, 1.0]])        # B0
    M1 = rng.normal(size=(5, 5))
    a = np.array([1.0, 1.0]) / np.sqrt(2)
    B1 = M1[3:, :2]
    B1 += (gamma_target - a @ B1 @ a) * np.outer(a, a)
    return JacobianBlocks(M0=M0, M1=M1, n=n), a


def test_gamma_criterion_planted(rng):
    blocks, a = planted_blocks(rng, -2.5)
    assert gamma_criterion(blocks) == pytest.approx(-2.5, abs=1e-12)
    assert gamma_criterion(blocks, 2 * a) == pytest.approx(-10.0, abs=1e-11)
    ka = kernel_analysis(blocks)
    assert np.allclose(ka.a1, a)
    assert abs(ka.orthogonality) < 1e-14
    assert ka.chain_length >= 2


def test_bifurcation_prediction():
    lam = bifurcation_prediction(-4.0, 2, 1e-3)
    assert np.allclose(lam ** 2, -4e-3)
    assert np.allclose(np.abs(lam), np.sqrt(4e-3))
    with pytest.raises(InconclusiveCriterion):
        bifurcation_prediction(0.0, 2, 1e-3)
    with pytest.raises(InvalidInputError):
        bifurcation_prediction(1.0, 1, 1e-3)


# ----------------------------------------------------- Newton-Kantorovich
def test_newton_kantorovich_linear(rng):
    A = rng.normal(size=(4, 4)) + 4 * np.eye(4)
    b = rng.normal(size=4)
    res = newton_kantorovich(lambda x: A @ x - b, np.zeros(4), jac=lambda x: A)
    assert res.converged and res.iterations == 1
    assert np.allclose(res.x, np.linalg.solve(A, b), atol=1e-13)
    c = res.certificate
    assert c["certified"] and c["C3"] == 0.0 and c["h"] == 0.0
    assert c["radius"] == pytest.approx(c["eta"])
    assert c["within_2eta"]


def test_newton_kantorovich_scalar_root():
    U = lambda x: np.array([x[0] ** 2 - 2.0])
    J = lambda x: np.array([[2 * x[0]]])
    res = newton_kantorovich(U, [1.4], jac=J, tol=1e-14, max_iter=200)
    c = res.certificate
    assert c["certified"] and c["h"] < 0.25
    assert abs(res.x[0] - np.sqrt(2)) < 1e-12
    assert abs(np.sqrt(2) - 1.4) <= c["radius"] * (1 + 1e-9)


def test_newton_kantorovich_singular():
    with pytest.raises(NumericFailure):
        newton_kantorovich(lambda x: x, np.zeros(2), jac=lambda x: np.zeros((2, 2)))


def test_continue_isolated_candidate(dnls, dnls_nf3):
    out = continue_candidate(dnls, dnls_nf3, (0.0, 0.0, 0.0), 1e-3)
    assert out["converged"] and out["certificate"]["certified"]
    assert out["residual"] < 1e-10
    assert out["distance"] < 1e-6
    assert out["reverify_residual"] < 1e-9
