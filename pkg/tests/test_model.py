import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ness_lattice import (
    LANGEVIN,
    ModelWarning,
    PolynomialPotential,
    ReservoirSpec,
    SystemState,
    build_chain,
    build_graph,
    build_hypercube,
    check_H1,
    check_H2,
    diamond_fixture,
    potential_energy,
    potential_gradient,
    total_energy_G,
)
from ness_lattice.linear_oracle import assemble_linear, stationary_covariance
from ness_lattice.model import config_from_dict, hessian_at

from conftest import HARMONIC, QUARTIC, harmonic_chain

coords = st.floats(-3, 3, allow_nan=False)


def test_chain_structure():
    cfg = harmonic_chain(3)
    assert cfg.n == 3
    assert cfg.aux_count == 2
    assert cfg.state_dim == 8
    assert cfg.topology.edges == ((0, 1), (1, 2))


def test_single_site_carries_both_baths():
    cfg = build_chain(1, HARMONIC, HARMONIC, 1.0, 2.0, 1.0, 1.0)
    assert cfg.aux_count == 2
    assert [v for v, _ in cfg.attachments()] == [0, 0]
    assert SystemState.zeros(cfg).r.shape == (2,)


def test_quartic_pair_over_quadratic_onsite_is_warning_free():
    with warnings.catch_warnings():
        warnings.simplefilter("error", ModelWarning)
        cfg = build_chain(4, HARMONIC, PolynomialPotential((0, 0, 0, 0, 0.25)), 1, 1, 1, 1)
    assert cfg.warnings == ()


def test_ordering_violation_warns():
    with pytest.warns(ModelWarning, match="ordering"):
        build_chain(3, QUARTIC, HARMONIC, 1, 1, 1, 1)


@pytest.mark.parametrize("bad", [dict(n=0), dict(n=2.5), dict(gamma=0.0), dict(T_left=-1.0)])
def test_chain_rejects_bad_parameters(bad):
    args = dict(n=3, onsite=HARMONIC, pair=HARMONIC, T_left=1.0, T_right=1.0, lam=1.0, gamma=1.0)
    args.update(bad)
    with pytest.raises(ValueError):
        build_chain(**args)


def test_hypercube_line():
    cfg = build_hypercube(1, 1, HARMONIC, HARMONIC, 2.0, 1.0, 1.0)
    assert cfg.n == 3
    assert cfg.kind == LANGEVIN
    assert cfg.topology.edges == ((0, 1), (1, 2))
    temps = {v: res.temperature for v, res in cfg.attachments()}
    assert temps == {0: 2.0, 2: 1.0}


def test_hypercube_square():
    cfg = build_hypercube(1, 2, HARMONIC, HARMONIC, 2.0, 1.0, 1.0)
    assert cfg.n == 9
    assert len(cfg.topology.edges) == 12
    att = cfg.attachments()
    assert sum(res.temperature == 2.0 for _, res in att) == 3
    assert sum(res.temperature == 1.0 for _, res in att) == 3
    assert cfg.topology.plane_count == 3


def test_hypercube_vertex_cap():
    with pytest.raises(OverflowError):
        build_hypercube(2, 3, HARMONIC, HARMONIC, 1, 1, 1, vertex_cap=100)


def test_equilibrium_hypercube_stationary_law_is_gibbs():
    T = 1.5
    cfg = build_hypercube(2, 1, HARMONIC, HARMONIC, T, T, 0.7)
    sigma = stationary_covariance(assemble_linear(cfg)).sigma
    n = cfg.n
    K = hessian_at(cfg, np.zeros(n))
    np.testing.assert_allclose(sigma[:n, :n], T * np.linalg.inv(K), atol=1e-10)
    np.testing.assert_allclose(sigma[n:, n:], T * np.eye(n), atol=1e-10)
    np.testing.assert_allclose(sigma[:n, n:], 0, atol=1e-10)


def test_diamond_fixture_structure():
    cfg = diamond_fixture()
    assert cfg.n == 4
    assert cfg.topology.labels == (1, 2, 3, 4)
    assert sorted(cfg.topology.edges) == [(0, 1), (0, 3), (1, 2), (2, 3)]
    assert cfg.topology.boundary_vertices == (0, 2)


def test_path_graph_matches_langevin_chain():
    chain = build_chain(3, HARMONIC, QUARTIC, 2.0, 1.0, 0.5, 1.0, kind=LANGEVIN)
    graph = build_graph([("a", "b"), ("b", "c")], {"a": ReservoirSpec.langevin(2.0, 0.5),
                                                   "c": ReservoirSpec.langevin(1.0, 0.5)}, HARMONIC, QUARTIC)
    from ness_lattice.dynamics import diffusion_amplitudes, drift

    rng = np.random.default_rng(3)
    for _ in range(10):
        x = rng.normal(size=6)
        a = drift(chain, SystemState.from_vector(chain, x)).vector()
        b = drift(graph, SystemState.from_vector(graph, x)).vector()
        np.testing.assert_allclose(a, b)
    assert [a for _, _, a in diffusion_amplitudes(chain)] == [a for _, _, a in diffusion_amplitudes(graph)]


def test_single_vertex_langevin_oscillator():
    cfg = build_graph([], {0: ReservoirSpec.langevin(1.0, 1.0)}, HARMONIC, HARMONIC)
    assert cfg.n == 1 and cfg.state_dim == 2
    A = assemble_linear(cfg).A
    np.testing.assert_allclose(A, [[0, 1], [-1, -1]])


def test_potential_energy_examples():
    cfg = harmonic_chain(2)
    assert potential_energy(cfg, np.zeros(2)) == 0.0
    assert potential_energy(cfg, np.array([1.0, -1.0])) == pytest.approx(3.0)
    np.testing.assert_allclose(potential_gradient(cfg, np.zeros(2)), 0.0)
    np.testing.assert_allclose(potential_gradient(cfg, np.array([1.0, 0.0])), [2.0, -1.0])


def _energy_by_loop(cfg, q):
    total = 0.0
    for i in range(cfg.n):
        total += sum(c * q[i] ** m for m, c in enumerate(cfg.onsite.coefficients))
    for i, j in cfg.topology.edges:
        x = q[i] - q[j]
        total += sum(c * x**m for m, c in enumerate(cfg.pair.coefficients))
    return total


@settings(max_examples=50, deadline=None)
@given(st.lists(coords, min_size=4, max_size=4))
def test_potential_energy_term_by_term(q):
    cfg = build_chain(4, QUARTIC, PolynomialPotential((0, 0.3, 1.0, -0.2, 0.5)), 1, 1, 1, 1)
    q = np.array(q)
    assert potential_energy(cfg, q) == pytest.approx(_energy_by_loop(cfg, q), rel=1e-12, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(coords, min_size=5, max_size=5))
def test_gradient_finite_difference(q):
    cfg = build_chain(5, QUARTIC, QUARTIC, 1, 1, 1, 1)
    q = np.array(q)
    h = 1e-5
    fd = np.array([(potential_energy(cfg, q + h * e) - potential_energy(cfg, q - h * e)) / (2 * h) for e in np.eye(5)])
    g = potential_gradient(cfg, q)
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-6 * max(1.0, np.abs(g).max()))


def test_total_energy_examples():
    cfg = build_chain(1, HARMONIC, HARMONIC, 1, 1, 1, 1)
    assert total_energy_G(cfg, SystemState.zeros(cfg)) == 0.0
    st_ = SystemState(p=np.array([1.0]), q=np.array([0.0]), r=np.array([1.0, 1.0]))
    assert total_energy_G(cfg, st_) == pytest.approx(1.5)


def test_check_H1_examples():
    rep = check_H1(HARMONIC, PolynomialPotential((0, 0, 0, 0, 0.25)))
    assert (rep.k1, rep.k2, rep.ordering_ok) == (2, 4, True)
    assert not check_H1(HARMONIC, PolynomialPotential((0, 0, 0, 1))).confining_ok
    assert not check_H1(PolynomialPotential((0, 0, 0, 0, 1)), PolynomialPotential((0, 0, 1))).ordering_ok


def test_check_H2_examples():
    rep = check_H2(HARMONIC)
    assert rep.holds and rep.m0_max == 1
    rep = check_H2(PolynomialPotential((0, 0, 0, 0, 0.25)), x_probe=[0.0, 1.0])
    assert rep.holds and rep.m0_max == 3
    assert rep.probe_m0 == (3, 1)
    assert not check_H2(PolynomialPotential((0, 2.0))).holds


def test_config_round_trip_and_digest():
    cfg = build_chain(3, HARMONIC, QUARTIC, 2.0, 1.0, 0.5, 2.0)
    d = json.loads(json.dumps(cfg.to_dict()))
    back = config_from_dict(d)
    assert back == cfg
    assert back.digest() == cfg.digest()
    assert cfg.with_end_temperatures(2.0, 1.5).digest() != cfg.digest()


def test_state_vector_round_trip(rng):
    cfg = harmonic_chain(3)
    x = rng.normal(size=cfg.state_dim)
    s = SystemState.from_vector(cfg, x)
    np.testing.assert_array_equal(s.to_vector(), x)
    with pytest.raises(ValueError):
        SystemState.from_vector(cfg, x[:-1])
