import json
import math

import numpy as np
import pytest
from scipy.signal import lfilter

from ness_lattice import PolynomialPotential, SystemState, build_chain, total_energy_G
from ness_lattice.analysis import (
    AnalysisError,
    DomainError,
    GreenKuboResult,
    NonConvexError,
    analyticity_domain,
    concave_adjust,
    correlation_integral,
    cumulant_from_integrals,
    dissipation_scaling,
    gc_symmetry_check,
    legendre_inverse,
    legendre_rate,
    lyapunov_probe,
    mixing_rate,
    moment_matrix,
    nondegeneracy_probe,
    probe_temperatures,
    product_getters,
    rate_symmetry,
    scale_to_energy,
    steady_state,
    write_report,
)
from ness_lattice.dynamics import TrajectoryRecord, relax_deterministic

from conftest import HARMONIC, QUARTIC, harmonic_chain, quartic_chain


def _record(columns, dt=1.0):
    n = len(next(iter(columns.values())))
    return TrajectoryRecord(np.arange(n) * dt, {k: np.asarray(v, float) for k, v in columns.items()}, 0, "")


def _ou(rng, n, rate, dt, var=1.0):
    """Exact AR(1) sampling of a stationary OU process."""
    a = math.exp(-rate * dt)
    z = rng.normal(size=n) * math.sqrt(var * (1 - a * a))
    z[0] = rng.normal() * math.sqrt(var)
    return lfilter([1.0], [1.0, -a], z)


# ---------------------------------------------------------------------------
# steady state


def test_iid_standard_error(rng):
    N = 100_000
    rec = _record({"x": 3.0 + rng.normal(size=N)})
    est = steady_state(rec, ["x"], burn_in_fraction=0.0, batch_count=50)["x"]
    assert abs(est.z(3.0)) < 4
    assert est.se == pytest.approx(1 / math.sqrt(N), rel=0.3)
    assert est.n_samples == N


def test_steady_state_products_and_moments(rng):
    N = 50_000
    x = rng.normal(size=N)
    y = 0.5 * x + rng.normal(size=N)
    rec = _record({"x": x, "y": y})
    rep = steady_state(rec, ["x"], 0.0, 20, extra=product_getters([("x", "y")]))
    assert abs(rep["x*y"].z(0.5)) < 4
    mm = moment_matrix(rec, ["x", "y"], 0.0, 20)
    target = np.array([[1.0, 0.5], [0.5, 1.25]])
    assert np.all(np.abs(mm.z_scores(target)) < 4)


def test_steady_state_errors(rng):
    rec = _record({"x": rng.normal(size=100)})
    with pytest.raises(AnalysisError):
        steady_state(rec, ["x"], burn_in_fraction=1.0)
    with pytest.raises(AnalysisError):
        steady_state(rec, ["y"])
    with pytest.raises(AnalysisError):
        steady_state(rec, ["x"], batch_count=60)


# ---------------------------------------------------------------------------
# cumulant function


def test_analyticity_domain():
    assert analyticity_domain(quartic_chain(3, T=(2, 1))) == pytest.approx((-1.0, 2.0))
    assert analyticity_domain(quartic_chain(3, T=(1, 1))) == (-math.inf, math.inf)


def test_cumulant_at_zero_and_equilibrium():
    S = np.zeros((200, 3))
    curve = cumulant_from_integrals(S, [1, 2, 4], np.linspace(-1, 2, 7), n_boot=20)
    np.testing.assert_array_equal(curve.values, 0.0)
    assert curve.value_at(0.0) == 0.0
    rng = np.random.default_rng(1)
    curve = cumulant_from_integrals(rng.normal(size=(100, 2)), [1, 2], [0.0, 0.5], n_boot=10)
    assert curve.value_at(0.0) == 0.0
    assert np.all(curve.boot[:, 0] == 0.0)


def test_cumulant_domain_error():
    with pytest.raises(DomainError) as info:
        cumulant_from_integrals(np.zeros((10, 2)), [1, 2], [0.0, 2.5], domain=(-1.0, 2.0))
    assert info.value.domain == (-1.0, 2.0)
    with pytest.raises(AnalysisError):
        cumulant_from_integrals(np.zeros((10, 2)), [1, 2, 3], [0.0])


def _gaussian_integrals(rng, n, t_list, c):
    # increments with mean c and variance 2c: the Gallavotti-Cohen case, e(a) = c a (1 - a)
    t = np.asarray(t_list, float)
    dt = np.diff(np.concatenate([[0.0], t]))
    inc = c * dt + np.sqrt(2 * c * dt) * rng.normal(size=(n, t.size))
    return np.cumsum(inc, axis=1)


def test_cumulant_gaussian_oracle(rng):
    c = 0.3
    alphas = np.round(np.linspace(0, 1, 11), 10)
    t_list = [1.0, 2.0, 4.0]
    S = _gaussian_integrals(rng, 20_000, t_list, c)
    curve = cumulant_from_integrals(S, t_list, alphas, n_boot=100)
    exact = c * alphas * (1 - alphas)
    ok = curve.usable & (curve.se > 0)
    assert np.all(np.abs(curve.values[ok] - exact[ok]) < 4 * curve.se[ok] + 1e-3)
    sym = gc_symmetry_check(curve)
    assert sym["pass"]
    assert sym["n_tested"] == 10


def test_gc_symmetry_equilibrium_and_grid():
    curve = cumulant_from_integrals(np.zeros((50, 2)), [1, 2], [0.0, 0.25, 0.5, 0.75, 1.0], n_boot=10)
    sym = gc_symmetry_check(curve)
    assert sym["max_abs_deviation"] == 0.0 and sym["pass"]
    assert sym["deviation"][2] == 0.0  # alpha = 1/2 pairs with itself
    bad = cumulant_from_integrals(np.zeros((50, 2)), [1, 2], [0.0, 0.3], n_boot=10)
    with pytest.raises(AnalysisError):
        gc_symmetry_check(bad)


def test_effective_sample_floor_marks_unusable(rng):
    S = _gaussian_integrals(rng, 200, [1.0, 2.0, 40.0], 3.0)
    curve = cumulant_from_integrals(S, [1.0, 2.0, 40.0], [0.0, 2.0], n_boot=5)
    assert curve.usable[0] and not curve.usable[1]


# ---------------------------------------------------------------------------
# Legendre transform


def test_legendre_closed_form():
    c = 0.8
    alphas = np.linspace(-1, 2, 3001)
    w = np.linspace(-2, 2, 21)
    rate = legendre_rate((alphas, c * alphas * (1 - alphas)), w)
    assert np.all(rate.interior)
    np.testing.assert_allclose(rate.values, (c - w) ** 2 / (4 * c), atol=1e-6)
    np.testing.assert_allclose(rate.argmax_alpha, (c - w) / (2 * c), atol=1e-3)
    assert rate.convex
    sym = rate_symmetry(rate)
    assert sym["max_abs_deviation"] < 1e-6
    a = np.array([0.0, 0.25, 0.5])
    np.testing.assert_allclose(legendre_inverse(rate, a), c * a * (1 - a), atol=2e-3)


def test_legendre_of_zero_cumulant():
    alphas = np.linspace(-1, 2, 31)
    rate = legendre_rate((alphas, np.zeros_like(alphas)), [-0.5, 0.0, 0.5])
    assert rate.values[1] == 0.0
    assert math.isinf(rate.values[0]) and math.isinf(rate.values[2])
    assert json.dumps(rate.to_dict())  # inf is reported as null


def test_concave_adjust():
    a = np.linspace(0, 1, 5)
    v = -(a - 0.5) ** 2
    np.testing.assert_array_equal(concave_adjust(a, v), v)
    bumped = v.copy()
    bumped[2] -= 0.2
    out = concave_adjust(a, bumped, tol=2.0)
    assert np.all(np.diff(np.diff(out)) <= 1e-12)
    with pytest.raises(NonConvexError):
        concave_adjust(a, bumped, tol=0.0)


# ---------------------------------------------------------------------------
# correlations and Green-Kubo helpers


def test_correlation_integral_ou(rng):
    rate, var, dt = 0.5, 2.0, 0.1
    segs = [_ou(rng, 20_000, rate, dt, var) for _ in range(20)]
    val, se, window, conv, _ = correlation_integral(segs, dt, max_lag=400)
    assert conv
    # the trapezoid of exp(-rate s) has an O(dt^2) excess; it is tiny here
    assert abs(val - var / rate) < 4 * se + 0.05
    with pytest.raises(AnalysisError):
        correlation_integral(segs[:1], dt)


def test_probe_temperatures():
    tl, tr = probe_temperatures(1.0, 0.2)
    assert 1 / tr - 1 / tl == pytest.approx(0.2)
    assert (1 / tl + 1 / tr) / 2 == pytest.approx(1.0)
    with pytest.raises(AnalysisError):
        probe_temperatures(1.0, 3.0)


def test_green_kubo_result_overlap():
    r = GreenKuboResult(1.0, 0.05, 10.0, True, 1.1, 0.05, {}, 0.0, 0.01)
    assert r.ratio == pytest.approx(1 / 1.1)
    assert r.overlapping
    assert not r.overlaps(z=0.5)


# ---------------------------------------------------------------------------
# mixing


def test_mixing_rate_ou(rng):
    rate, dt = 0.5, 0.1
    recs = [_record({"x": _ou(rng, 200_000, rate, dt)}, dt) for _ in range(4)]
    res = mixing_rate(recs, "x", max_lag_time=15.0)
    assert res.passed
    assert res.rate == pytest.approx(rate, rel=0.1)
    assert res.decay_time == pytest.approx(1 / rate, rel=0.1)


def test_mixing_white_noise_decay_is_one_sample(rng):
    dt = 0.5
    res = mixing_rate(_record({"x": rng.normal(size=20_000)}, dt), "x", max_lag_time=50)
    assert res.decay_time == pytest.approx(dt)


def test_mixing_record_too_short():
    rec = _record({"x": _ou(np.random.default_rng(0), 1000, 0.003, 1.0)})
    with pytest.raises(AnalysisError):
        mixing_rate(rec, "x", max_lag_time=100)


# ---------------------------------------------------------------------------
# nondegeneracy


def test_nondegeneracy_probe():
    quad = PolynomialPotential((1.0, 0.5, 1.0))  # f(x) = 1 + x/2 + x^2 spans three functions
    assert nondegeneracy_probe(quad, 3, samples=40)["witness_fraction"] > 0.95
    assert nondegeneracy_probe(quad, 4, samples=40)["witness_fraction"] < 0.05
    const = PolynomialPotential((2.0,))
    assert nondegeneracy_probe(const, 1, samples=20)["witness_fraction"] == 1.0
    assert nondegeneracy_probe(const, 2, samples=20)["witness_fraction"] == 0.0


# ---------------------------------------------------------------------------
# energy shells


def test_scale_to_energy(rng):
    cfg = quartic_chain(3)
    for E in (0.5, 10.0, 1e4):
        x = scale_to_energy(cfg, rng.normal(size=cfg.state_dim), E)
        assert total_energy_G(cfg, SystemState.from_vector(cfg, x)) == pytest.approx(E, rel=1e-10)
    with pytest.raises(AnalysisError):
        scale_to_energy(cfg, rng.normal(size=cfg.state_dim), -1.0)


def test_harmonic_dissipation_exponent_is_one():
    cfg = harmonic_chain(4, T=(0, 0))
    res = dissipation_scaling(cfg, np.logspace(0, 2, 3), n_directions=4)
    assert res.expected == 1.0
    assert res.exponent == pytest.approx(1.0, abs=1e-3)
    assert res.consistent


def test_dissipation_energy_errors():
    cfg = harmonic_chain(3, T=(0, 0))
    with pytest.raises(AnalysisError):
        dissipation_scaling(cfg, [0.5, 100.0])
    with pytest.raises(AnalysisError):
        dissipation_scaling(cfg, [1.0, 10.0])


def test_lyapunov_probe_zero_temperature_is_deterministic():
    cfg = build_chain(3, HARMONIC, QUARTIC, 0.0, 0.0, 1.0, 1.0)
    theta, dt = 0.5, 0.005
    res = lyapunov_probe(cfg, theta, [10.0, 100.0], t=1.0, samples_per_shell=3, n_rep=2, dt=dt, seed=4)
    assert res.decreasing and np.all(res.kappa < 1)
    # every log-ratio equals theta * Delta G of the noiseless run from the same state
    from ness_lattice.analysis import shell_directions, trajectory_rng

    dirs = shell_directions(cfg, 3, trajectory_rng(4))
    for E, lrs in zip(res.energies, res.log_ratios):
        for d, lr in zip(dirs, lrs):
            x0 = scale_to_energy(cfg, d, E)
            dG = relax_deterministic(cfg, SystemState.from_vector(cfg, x0), dt, 1.0).delta_G
            assert lr == pytest.approx(theta * dG, rel=1e-6, abs=1e-9)


# ---------------------------------------------------------------------------
# reports


def test_report_rounding(tmp_path):
    rep = {"a": 1.0 / 3.0, "b": [math.inf, -math.inf, math.nan], "c": np.float64(2.5), "d": np.arange(2)}
    path = write_report(tmp_path / "r.json", rep, digits=4, raw=True)
    data = json.loads(path.read_text())
    assert data == {"a": 0.3333, "b": ["inf", "-inf", None], "c": 2.5, "d": [0, 1]}
    raw = json.loads((tmp_path / "r.raw.json").read_text())
    assert raw["a"] == 1.0 / 3.0
