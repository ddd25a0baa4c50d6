import numpy as np
import pytest

from ness_lattice import PolynomialPotential, ReservoirSpec, SystemState, build_chain, build_graph, diamond_fixture
from ness_lattice.dynamics import IntegratorSpec, drift
from ness_lattice.linear_oracle import (
    LinearModel,
    NonQuadraticError,
    NonUniqueError,
    assemble_linear,
    controllability_rank,
    exact_correlation,
    exact_correlation_integral,
    exact_flux,
    exact_flux_table,
    lyapunov_kronecker,
    quadratic_form,
    scheme_stationary_covariance,
    slowest_rate,
    stationary_covariance,
)
from ness_lattice.model import hessian_at

from conftest import HARMONIC, QUARTIC, harmonic_chain


def test_langevin_oscillator_matrices():
    cfg = build_graph([], {0: ReservoirSpec.langevin(1.0, 1.0)}, HARMONIC, HARMONIC)
    m = assemble_linear(cfg)
    np.testing.assert_allclose(m.A, [[0, 1], [-1, -1]])
    np.testing.assert_allclose(m.B, [[0], [np.sqrt(2)]])


def test_single_site_aux_matrices():
    cfg = build_chain(1, HARMONIC, HARMONIC, 2.0, 1.0, 0.5, 3.0)
    m = assemble_linear(cfg)
    # state (q, p, r_left, r_right)
    A = [[0, 1, 0, 0], [-1, 0, -0.5, -0.5], [0, 0.5, -3, 0], [0, 0.5, 0, -3]]
    np.testing.assert_allclose(m.A, A)
    np.testing.assert_allclose(m.B @ m.B.T, np.diag([0, 0, 2 * 2.0 * 3, 2 * 1.0 * 3]))


def test_drift_is_linear_map(rng):
    for cfg in (harmonic_chain(4, T=(2, 1), lam=0.7, gamma=1.3), diamond_fixture()):
        A = assemble_linear(cfg).A
        for _ in range(100):
            x = rng.normal(size=cfg.state_dim)
            np.testing.assert_allclose(drift(cfg, SystemState.from_vector(cfg, x)).vector(), A @ x, atol=1e-12)


def test_scalar_ou_variance():
    S = lyapunov_kronecker(np.array([[-2.0]]), np.array([[2 * 1.5 * 2.0]]))
    assert S[0, 0] == pytest.approx(1.5)


def test_equilibrium_chain_is_gibbs():
    T = 1.7
    cfg = harmonic_chain(4, T=(T, T), lam=0.8, gamma=1.2)
    cov = stationary_covariance(assemble_linear(cfg))
    assert cov.unique and cov.residual < 1e-10
    n = cfg.n
    expected = np.zeros((cfg.state_dim,) * 2)
    expected[:n, :n] = T * np.linalg.inv(hessian_at(cfg, np.zeros(n)))
    expected[n:, n:] = T * np.eye(cfg.state_dim - n)
    np.testing.assert_allclose(cov.sigma, expected, atol=1e-10)


def test_solvers_agree():
    m = assemble_linear(harmonic_chain(5, T=(3, 1), lam=1.5, gamma=0.4))
    a = stationary_covariance(m, "kronecker").sigma
    b = stationary_covariance(m, "bartels_stewart").sigma
    np.testing.assert_allclose(a, b, atol=1e-10)
    with pytest.raises(ValueError):
        stationary_covariance(m, "bogus")


def test_controllability_examples():
    assert controllability_rank(assemble_linear(harmonic_chain(4))).full
    rep = controllability_rank(assemble_linear(diamond_fixture()))
    assert (rep.rank, rep.state_dim) == (6, 8)
    assert rep.uncontrollable_modes == 1
    m = assemble_linear(harmonic_chain(2))
    assert controllability_rank(LinearModel(m.A, np.zeros_like(m.B))).rank == 0


@pytest.mark.parametrize("n,lam", [(1, 1.0), (2, 0.5), (3, 2.0), (4, 1.0)])
def test_full_rank_iff_positive_definite(n, lam):
    m = assemble_linear(harmonic_chain(n, T=(2, 1), lam=lam))
    rep = controllability_rank(m)
    cov = stationary_covariance(m)
    assert rep.full == bool(np.all(np.linalg.eigvalsh(cov.sigma) > 1e-10))


def test_diamond_covariance_not_unique():
    cov = stationary_covariance(assemble_linear(diamond_fixture()))
    assert not cov.unique
    assert cov.classification.startswith("inconclusive")
    with pytest.raises(NonUniqueError):
        exact_flux_table(diamond_fixture())


def test_exact_flux_equilibrium_and_symmetry():
    eq = exact_flux_table(harmonic_chain(3, T=(1.3, 1.3)))
    assert max(abs(v) for v in eq.values()) < 1e-12
    fwd = exact_flux_table(harmonic_chain(4, T=(2, 1), lam=2, gamma=2))
    vals = np.array(list(fwd.values()))
    assert vals[0] > 0
    np.testing.assert_allclose(vals, vals[0], rtol=1e-9)
    back = np.array(list(exact_flux_table(harmonic_chain(4, T=(1, 2), lam=2, gamma=2)).values()))
    np.testing.assert_allclose(back, -vals, rtol=1e-9)


def test_exact_flux_from_covariance_entries():
    cfg = harmonic_chain(2, T=(2, 1))
    m = assemble_linear(cfg)
    cov = stationary_covariance(m)
    S = cov.sigma
    # Phi_1 = (p1 + p2)/2 * (q1 - q2) for a unit harmonic pair; state (q1, q2, p1, p2, ...)
    by_hand = 0.5 * (S[2, 0] - S[2, 1] + S[3, 0] - S[3, 1])
    assert exact_flux(m, cov, cfg, 1) == pytest.approx(by_hand, rel=1e-12)


def test_quadratic_form_recovers_energy():
    cfg = harmonic_chain(2)
    M, c = quadratic_form(cfg, "G")
    assert c == 0.0
    np.testing.assert_allclose(np.diag(M)[2:], 0.5)


def test_correlation_at_zero_lag_matches_samples(rng):
    cfg = harmonic_chain(2, T=(2, 1))
    m = assemble_linear(cfg)
    cov = stationary_covariance(m)
    M, _ = quadratic_form(cfg, "Phi_1")
    M = 0.5 * (M + M.T)
    X = rng.multivariate_normal(np.zeros(cfg.state_dim), cov.sigma, size=200_000)
    f = np.einsum("ij,jk,ik->i", X, M, X)
    assert exact_correlation(m, cov, M, 0.0)[0] == pytest.approx(f.var(), rel=0.02)


def test_correlation_integral_matches_response():
    # d<Phi_1>/d(1/T_n - 1/T_1) at equilibrium, by differencing the exact flux
    T, h = 1.0, 1e-4
    vals = []
    for s in (+1, -1):
        db = s * h
        b1, bn = 1 / T - db / 2, 1 / T + db / 2
        vals.append(exact_flux_table(harmonic_chain(3, T=(1 / b1, 1 / bn)))["Phi_1"])
    response = (vals[0] - vals[1]) / (2 * h)
    cfg = harmonic_chain(3, T=(T, T))
    m = assemble_linear(cfg)
    gk = exact_correlation_integral(m, stationary_covariance(m), cfg, "Phi_1")
    assert gk == pytest.approx(response, rel=1e-5)
    assert gk == pytest.approx(0.127906977, rel=1e-6)


def test_slowest_rate():
    m = assemble_linear(build_graph([], {0: ReservoirSpec.langevin(1.0, 1.0)}, HARMONIC, HARMONIC))
    assert slowest_rate(m) == pytest.approx(0.5)


def test_splitting_stationary_momenta_are_exact():
    cfg = harmonic_chain(2, T=(1, 1))
    n = cfg.n
    for dt in (0.05, 0.1):
        S = scheme_stationary_covariance(cfg, IntegratorSpec(dt))
        np.testing.assert_allclose(S[n:, n:], np.eye(cfg.state_dim - n), atol=1e-10)


def _q_bias(cfg, spec):
    exact = stationary_covariance(assemble_linear(cfg)).sigma
    S = scheme_stationary_covariance(cfg, spec)
    return np.abs(S - exact).max()


def test_scheme_bias_orders():
    cfg = harmonic_chain(2, T=(2, 1))
    split = _q_bias(cfg, IntegratorSpec(0.04)) / _q_bias(cfg, IntegratorSpec(0.02))
    em = _q_bias(cfg, IntegratorSpec(0.004, "euler_maruyama")) / _q_bias(cfg, IntegratorSpec(0.002, "euler_maruyama"))
    assert split == pytest.approx(4.0, rel=0.1)
    assert em == pytest.approx(2.0, rel=0.1)


def test_non_quadratic_rejected():
    with pytest.raises(NonQuadraticError):
        assemble_linear(build_chain(2, HARMONIC, QUARTIC, 1, 1, 1, 1))
    with pytest.raises(NonQuadraticError):
        assemble_linear(build_chain(2, PolynomialPotential((0, 0.1, 0.5)), HARMONIC, 1, 1, 1, 1))


def test_divergent_spectrum():
    cov = stationary_covariance(LinearModel(np.array([[0.5]]), np.array([[1.0]])))
    assert not cov.unique and cov.classification == "divergent"
