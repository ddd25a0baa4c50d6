"""Estimators built on simulated trajectories.

Steady-state means with batch-means errors, the cumulant function of the
time-integrated entropy production and its Legendre transform, the
fluctuation symmetry check, linear response versus flux autocorrelation,
probes of the Lyapunov bound and of zero-temperature dissipation, mixing
rates and the nondegeneracy probe.

Sign conventions.  For an entropy integral ``S_t = int_0^t sigma ds``

    e(alpha) = lim_t -(1/t) log E[exp(-alpha S_t)],
    I(w)     = sup_alpha (e(alpha) - alpha w).

``e`` is concave with ``e(0) = 0`` and ``e'(0) = E[sigma]``.  The symmetry
``e(alpha) = e(1 - alpha)`` is then equivalent to ``I(w) - I(-w) = -w``:
substituting ``alpha -> 1 - alpha`` in the supremum for ``I(-w)`` gives
``I(-w) = sup_alpha (e(alpha) - alpha w) + w = I(w) + w``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats
from scipy.integrate import trapezoid
from scipy.optimize import brentq, isotonic_regression
from scipy.special import logsumexp

from . import __version__
from .dynamics import (
    IntegratorSpec,
    TrajectoryRecord,
    derive_seed,
    gaussian_sampler,
    relax_deterministic,
    simulate,
    simulate_ensemble,
    suggest_dt,
    trajectory_rng,
)
from .model import SystemConfig, SystemState, total_energy_G
from .observables import accumulate_series


class AnalysisError(ValueError):
    pass


class DomainError(AnalysisError):
    def __init__(self, message: str, domain: tuple[float, float]):
        super().__init__(f"{message}; admissible interval is ({domain[0]:.6g}, {domain[1]:.6g})")
        self.domain = domain


class NonConvexError(AnalysisError):
    pass


def _records(records) -> list[TrajectoryRecord]:
    if isinstance(records, TrajectoryRecord):
        return [records]
    return list(records)


# ---------------------------------------------------------------------------
# Autocorrelation helpers
# ---------------------------------------------------------------------------


def autocovariance(x: np.ndarray, max_lag: int | None = None) -> np.ndarray:
    """Biased autocovariance of a 1-d series (FFT, mean removed)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    max_lag = n - 1 if max_lag is None else min(max_lag, n - 1)
    y = x - x.mean()
    size = 1 << int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(y, size)
    acov = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1] / n
    return acov


def integrated_time(x: np.ndarray, c: float = 5.0) -> float:
    """Integrated autocorrelation time ``1 + 2 sum rho_k`` in samples (Sokal window)."""
    acov = autocovariance(x)
    if acov[0] <= 0:
        return 1.0
    rho = acov / acov[0]
    tau = 1.0
    for m in range(1, rho.size):
        tau += 2.0 * rho[m]
        if m >= c * tau:
            break
    return max(tau, 1.0)


# ---------------------------------------------------------------------------
# Steady state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObservableEstimate:
    mean: float
    se: float
    tau: float
    n_samples: int

    def z(self, target: float) -> float:
        return (self.mean - target) / self.se if self.se > 0 else math.inf * np.sign(self.mean - target)


@dataclass
class SteadyStateReport:
    estimates: dict[str, ObservableEstimate]
    burn_in_fraction: float
    batch_count: int
    mixing_warning: bool
    batch_means: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __getitem__(self, name: str) -> ObservableEstimate:
        return self.estimates[name]

    def to_dict(self) -> dict:
        return {
            "estimates": {k: asdict(v) for k, v in self.estimates.items()},
            "burn_in_fraction": self.burn_in_fraction,
            "batch_count": self.batch_count,
            "mixing_warning": self.mixing_warning,
        }


def _batch_means(series: np.ndarray, batch_count: int) -> np.ndarray:
    n = series.size // batch_count
    return series[: n * batch_count].reshape(batch_count, n).mean(axis=1)


def steady_state(
    records,
    observables: Sequence[str] | None = None,
    burn_in_fraction: float = 0.1,
    batch_count: int = 20,
    extra: dict[str, Callable[[TrajectoryRecord], np.ndarray]] | None = None,
) -> SteadyStateReport:
    """Batch-means estimates of stationary means.

    Each record loses its first ``burn_in_fraction`` of samples and is cut
    into ``batch_count`` batches; the batch means of all records are pooled.
    ``extra`` maps names to functions of a record returning derived series
    (products of coordinates, for instance).
    """
    recs = _records(records)
    if not 0 <= burn_in_fraction < 1:
        raise AnalysisError("burn_in_fraction must lie in [0, 1)")
    if observables is None:
        observables = list(recs[0].observable_samples)
    getters = {name: (lambda r, k=name: r[k]) for name in observables}
    getters.update(extra or {})
    estimates, bm_all, warn = {}, {}, False
    for name, get in getters.items():
        bms, taus, total, length, dt = [], [], 0, 0.0, 1.0
        for rec in recs:
            if name not in rec.observable_samples and name not in (extra or {}):
                raise AnalysisError(f"observable {name!r} missing from record")
            s = np.asarray(get(rec), dtype=float)
            start = int(burn_in_fraction * s.size)
            s = s[start:]
            if s.size < 2 * batch_count:
                raise AnalysisError(f"record too short: {s.size} samples for {batch_count} batches")
            bms.append(_batch_means(s, batch_count))
            taus.append(integrated_time(s))
            total += s.size
            if rec.sample_times.size > 1:
                dt = float(rec.sample_times[1] - rec.sample_times[0])
            length += s.size * dt
        bm = np.concatenate(bms)
        tau = float(np.mean(taus)) * dt
        mean = float(bm.mean())
        se = float(bm.std(ddof=1) / math.sqrt(bm.size)) if np.ptp(bm) > 0 else 0.0
        if batch_count * tau > length / len(recs):
            warn = True
        estimates[name] = ObservableEstimate(mean, se, tau, total)
        bm_all[name] = bm
    return SteadyStateReport(estimates, burn_in_fraction, batch_count, warn, bm_all)


def product_getters(pairs: Sequence[tuple[str, str]]) -> dict[str, Callable]:
    """Derived series ``a*b`` for use as ``steady_state(..., extra=...)``."""
    return {f"{a}*{b}": (lambda r, a=a, b=b: r[a] * r[b]) for a, b in pairs}


@dataclass
class MomentMatrix:
    names: list[str]
    mean: np.ndarray
    se: np.ndarray

    def z_scores(self, target: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return (self.mean - target) / self.se


def moment_matrix(records, names: Sequence[str], burn_in_fraction: float = 0.1, batch_count: int = 20) -> MomentMatrix:
    """Second moments ``E[x_a x_b]`` of named coordinates with batch-means errors."""
    names = list(names)
    pairs = [(a, b) for i, a in enumerate(names) for b in names[i:]]
    rep = steady_state(records, [], burn_in_fraction, batch_count, product_getters(pairs))
    D = len(names)
    mean, se = np.zeros((D, D)), np.zeros((D, D))
    for i, a in enumerate(names):
        for j in range(i, D):
            est = rep[f"{a}*{names[j]}"]
            mean[i, j] = mean[j, i] = est.mean
            se[i, j] = se[j, i] = est.se
    return MomentMatrix(names, mean, se)


# ---------------------------------------------------------------------------
# Cumulant function of the entropy integral
# ---------------------------------------------------------------------------


def analyticity_domain(config: SystemConfig) -> tuple[float, float]:
    """``(-Tmin/(Tmax-Tmin), 1 + Tmin/(Tmax-Tmin))``; the whole line at equilibrium."""
    temps = config.end_temperatures()
    tmin, tmax = min(temps), max(temps)
    if tmax == tmin:
        return (-math.inf, math.inf)
    return (-tmin / (tmax - tmin), 1.0 + tmin / (tmax - tmin))


@dataclass
class CumulantCurve:
    """Estimates of ``e(alpha)`` on a grid.

    ``boot`` holds bootstrap replicates (rows) computed on shared resamples
    of the trajectories, so paired differences between grid points keep
    their correlation.
    """

    alphas: np.ndarray
    values: np.ndarray
    se: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n_eff: np.ndarray
    usable: np.ndarray
    t_list: np.ndarray
    domain: tuple[float, float]
    boot: np.ndarray | None = field(default=None, repr=False)
    log_gamma: np.ndarray | None = field(default=None, repr=False)
    n_traj: int = 0
    n_eff_floor: float = 30.0

    def value_at(self, alpha: float) -> float:
        idx = np.flatnonzero(np.isclose(self.alphas, alpha, atol=1e-9))
        if not idx.size:
            raise KeyError(alpha)
        return float(self.values[idx[0]])

    def to_dict(self) -> dict:
        return {
            "alphas": self.alphas.tolist(),
            "e": self.values.tolist(),
            "se": self.se.tolist(),
            "ci_low": self.ci_low.tolist(),
            "ci_high": self.ci_high.tolist(),
            "n_eff": self.n_eff.tolist(),
            "usable": self.usable.tolist(),
            "t_list": self.t_list.tolist(),
            "domain": list(self.domain),
            "n_traj": self.n_traj,
        }


def _slope(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares slopes of ``y`` (..., len(t)) against ``t``."""
    tc = t - t.mean()
    return (y * tc).sum(axis=-1) / (tc**2).sum() if t.size > 1 else y[..., 0] / t[0]


def _neg_log_gamma(S: np.ndarray, alphas: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """``-log mean_i exp(-alpha S_i)`` for S of shape (n_traj, n_t) -> (n_alpha, n_t)."""
    out = np.empty((alphas.size, S.shape[1]))
    n = S.shape[0]
    for a, alpha in enumerate(alphas):
        x = -alpha * S
        if weights is None:
            out[a] = -(logsumexp(x, axis=0) - math.log(n))
        else:
            out[a] = -(logsumexp(x, axis=0, b=weights[:, None]) - math.log(weights.sum()))
    return out


def effective_sample_size(S: np.ndarray, alpha: float) -> np.ndarray:
    """``(sum w)^2 / sum w^2`` with ``w = exp(-alpha S)``, per column of S."""
    x = -alpha * S
    return np.exp(2 * logsumexp(x, axis=0) - logsumexp(2 * x, axis=0))


def cumulant_from_integrals(
    S: np.ndarray,
    t_list: Sequence[float],
    alphas: Sequence[float],
    domain: tuple[float, float] = (-math.inf, math.inf),
    n_boot: int = 200,
    seed: int = 0,
    n_eff_floor: float = 30.0,
    level: float = 0.95,
) -> CumulantCurve:
    """``e(alpha)`` from entropy integrals ``S[i, k] = int_0^{t_k} sigma`` of trajectory i.

    For every alpha, ``-log Gamma(t)`` is fitted linearly in ``t`` over
    ``t_list`` and the slope is the estimate; the intercept absorbs the
    ``O(1)`` prefactor of the finite-time generating function.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    t = np.asarray(t_list, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    if S.shape[1] != t.size:
        raise AnalysisError("S must have one column per time in t_list")
    lo, hi = domain
    bad = alphas[(alphas <= lo) | (alphas >= hi)]
    if bad.size:
        raise DomainError(f"alpha values {bad.tolist()} outside the analyticity domain", domain)
    y = _neg_log_gamma(S, alphas)
    values = _slope(t, y)
    values[alphas == 0] = 0.0
    n_eff = np.array([effective_sample_size(S, a).min() for a in alphas])
    rng = trajectory_rng(seed)
    n = S.shape[0]
    boot = np.empty((n_boot, alphas.size))
    for b in range(n_boot):
        counts = np.bincount(rng.integers(0, n, n), minlength=n).astype(float)
        keep = counts > 0
        boot[b] = _slope(t, _neg_log_gamma(S[keep], alphas, counts[keep]))
    boot[:, alphas == 0] = 0.0
    se = boot.std(axis=0, ddof=1) if n_boot > 1 else np.zeros(alphas.size)
    q = (1 - level) / 2
    ci_low, ci_high = np.quantile(boot, [q, 1 - q], axis=0) if n_boot > 1 else (values, values)
    return CumulantCurve(alphas, values, se, ci_low, ci_high, n_eff, n_eff >= n_eff_floor, t, domain,
                         boot, y, n, n_eff_floor)


def entropy_integrals(record: TrajectoryRecord, name: str, t_list: Sequence[float]) -> np.ndarray:
    """Trapezoidal ``int_{t_0}^{t_0 + t} sigma`` at each ``t`` of ``t_list``."""
    times = record.sample_times - record.sample_times[0]
    cum = accumulate_series(times, record[name])
    return np.interp(np.asarray(t_list, dtype=float), times, cum)


def mgf_cumulant(
    config: SystemConfig,
    alphas: Sequence[float],
    t_list: Sequence[float],
    n_traj: int,
    spec: IntegratorSpec,
    base_seed: int = 0,
    j: int = 1,
    burn_in: float = 100.0,
    sampler=None,
    sample_stride: int = 1,
    workers: int = 1,
    n_boot: int = 200,
    n_eff_floor: float = 30.0,
) -> CumulantCurve:
    """Ensemble estimate of ``e(alpha)`` for ``sigma_j`` from a stationary start.

    Trajectories start from ``sampler`` (default: Gaussian Gibbs
    approximation at the mean temperature) and are relaxed for ``burn_in``
    before the entropy integral starts.
    """
    domain = analyticity_domain(config)
    alphas = np.asarray(alphas, dtype=float)
    bad = alphas[(alphas <= domain[0]) | (alphas >= domain[1])]
    if bad.size:
        raise DomainError(f"alpha values {bad.tolist()} outside the analyticity domain", domain)
    t_list = np.asarray(sorted(t_list), dtype=float)
    if sampler is None:
        sampler = gaussian_sampler(config, float(np.mean(config.end_temperatures())))
    name = f"sigma_{j}"
    S = np.array(simulate_ensemble(
        config, sampler, spec, float(t_list[-1]), n_traj, base_seed, [name], sample_stride, burn_in,
        workers, reducer=lambda rec: entropy_integrals(rec, name, t_list),
    ))
    return cumulant_from_integrals(S, t_list, alphas, domain, n_boot, derive_seed(base_seed, n_traj), n_eff_floor)


def gc_symmetry_check(curve: CumulantCurve, n_se: float = 3.0) -> dict:
    """Compare ``e(alpha)`` and ``e(1 - alpha)`` on a grid symmetric about 1/2.

    The combined standard error is the bootstrap s.e. of the paired
    difference when replicates are available, else the quadrature sum.
    A point is tested only if both partners are usable (``n_eff`` above floor).
    """
    a = curve.alphas
    partner = np.empty(a.size, dtype=int)
    for i, x in enumerate(a):
        k = np.flatnonzero(np.isclose(a, 1.0 - x, atol=1e-9))
        if not k.size:
            raise AnalysisError(f"grid is not symmetric about 1/2: no partner for alpha={x}")
        partner[i] = k[0]
    dev = curve.values - curve.values[partner]
    if curve.boot is not None and curve.boot.shape[0] > 1:
        comb = (curve.boot - curve.boot[:, partner]).std(axis=0, ddof=1)
    else:
        comb = np.hypot(curve.se, curve.se[partner])
    usable = curve.usable & curve.usable[partner]
    self_pair = partner == np.arange(a.size)
    dev[self_pair] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(comb > 0, np.abs(dev) / comb, np.where(dev == 0, 0.0, np.inf))
    tested = usable & ~self_pair
    passed = bool(np.all(z[tested] <= n_se)) if tested.any() else False
    return {
        "alphas": a.tolist(),
        "deviation": dev.tolist(),
        "combined_se": comb.tolist(),
        "z": z.tolist(),
        "usable": usable.tolist(),
        "max_abs_deviation": float(np.max(np.abs(dev[usable]))) if usable.any() else float("nan"),
        "n_tested": int(tested.sum()),
        "pass": passed,
    }


# ---------------------------------------------------------------------------
# Legendre transform
# ---------------------------------------------------------------------------


@dataclass
class RateFunction:
    w: np.ndarray
    values: np.ndarray
    argmax_alpha: np.ndarray
    interior: np.ndarray
    convex: bool
    alphas: np.ndarray = field(repr=False, default=None)
    e_values: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "w": self.w.tolist(),
            "I": [v if np.isfinite(v) else None for v in self.values.tolist()],
            "argmax_alpha": self.argmax_alpha.tolist(),
            "interior": self.interior.tolist(),
            "convex": self.convex,
        }


def concave_adjust(alphas: np.ndarray, values: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Project ``values`` onto concave functions by isotonic regression of slopes.

    Raises :class:`NonConvexError` if the largest slope increase exceeds ``tol``.
    """
    alphas = np.asarray(alphas, float)
    values = np.asarray(values, float)
    if alphas.size < 3:
        return values.copy()
    h = np.diff(alphas)
    slopes = np.diff(values) / h
    worst = float(np.max(np.diff(slopes))) if slopes.size > 1 else 0.0
    if worst <= 0:
        return values.copy()
    if worst > tol:
        raise NonConvexError(f"cumulant curve not concave: slope increases by {worst:.3g} (> tol {tol:.3g})")
    fitted = -isotonic_regression(-slopes, weights=h, increasing=True).x
    out = np.concatenate([[values[0]], values[0] + np.cumsum(fitted * h)])
    return out + (values.mean() - out.mean())


def legendre_rate(curve, w_grid: Sequence[float], tol: float | None = None) -> RateFunction:
    """``I(w) = sup_alpha (e(alpha) - alpha w)`` over the grid of ``curve``.

    ``curve`` is a :class:`CumulantCurve` (only usable points are used) or an
    ``(alphas, values)`` pair.  The curve is first made concave by isotonic
    regression of its slopes (within ``tol``, default three times the
    largest standard error).  Where the maximizing alpha sits on the grid
    edge the supremum is not attained inside the grid; those values are
    reported as ``inf``.
    """
    if isinstance(curve, CumulantCurve):
        mask = curve.usable | (curve.alphas == 0)
        alphas, vals = curve.alphas[mask], curve.values[mask]
        if tol is None:
            tol = 3.0 * float(np.max(curve.se[mask])) / max(float(np.min(np.diff(np.sort(alphas)))), 1e-12) if alphas.size > 1 else 0.0
    else:
        alphas, vals = (np.asarray(x, float) for x in curve)
        tol = 1e-9 if tol is None else tol
    order = np.argsort(alphas)
    alphas, vals = alphas[order], vals[order]
    vals = concave_adjust(alphas, vals, tol)
    w = np.asarray(w_grid, dtype=float)
    table = vals[None, :] - alphas[None, :] * w[:, None]
    k = np.argmax(table, axis=1)
    I = table[np.arange(w.size), k]
    interior = (k > 0) & (k < alphas.size - 1)
    # ties at the edge (e.g. w exactly at an end slope) count as attained
    for i in np.flatnonzero(~interior):
        inner = table[i, 1:-1]
        if inner.size and np.isclose(inner.max(), I[i], rtol=0, atol=1e-12 * max(1.0, abs(I[i]))):
            interior[i] = True
    I = np.where(interior, I, np.inf)
    fin = np.isfinite(I)
    convex = True
    if fin.sum() >= 3:
        wf, If = w[fin], I[fin]
        convex = bool(np.all(np.diff(np.diff(If) / np.diff(wf)) >= -1e-9 * max(1.0, np.abs(If).max())))
    return RateFunction(w, I, alphas[k], interior, convex, alphas, vals)


def legendre_inverse(rate: RateFunction, alphas: Sequence[float]) -> np.ndarray:
    """``e(alpha) = inf_w (I(w) + alpha w)`` over the finite part of ``rate``."""
    fin = np.isfinite(rate.values)
    w, I = rate.w[fin], rate.values[fin]
    a = np.asarray(alphas, dtype=float)
    return np.min(I[None, :] + a[:, None] * w[None, :], axis=1)


def rate_symmetry(rate: RateFunction) -> dict:
    """``I(w) - I(-w) + w`` on the symmetric finite part of the grid."""
    w = rate.w
    out_w, dev = [], []
    for i, x in enumerate(w):
        if x <= 0:
            continue
        k = np.flatnonzero(np.isclose(w, -x, atol=1e-12))
        if k.size and np.isfinite(rate.values[i]) and np.isfinite(rate.values[k[0]]):
            out_w.append(x)
            dev.append(rate.values[i] - rate.values[k[0]] + x)
    dev = np.asarray(dev)
    return {"w": out_w, "deviation": dev.tolist(), "max_abs_deviation": float(np.abs(dev).max()) if dev.size else float("nan")}


# ---------------------------------------------------------------------------
# Green-Kubo
# ---------------------------------------------------------------------------


@dataclass
class GreenKuboResult:
    correlation_integral: float
    correlation_se: float
    window: float
    converged: bool
    response: float
    response_se: float
    probe_means: dict
    equilibrium_mean_flux: float
    equilibrium_mean_se: float

    @property
    def ratio(self) -> float:
        return self.correlation_integral / self.response

    @property
    def ratio_se(self) -> float:
        r = self.ratio
        return abs(r) * math.hypot(self.correlation_se / self.correlation_integral, self.response_se / self.response)

    def overlaps(self, z: float = 1.96) -> bool:
        """Whether the two ``z``-sigma intervals overlap."""
        return abs(self.correlation_integral - self.response) <= z * (self.correlation_se + self.response_se)

    @property
    def overlapping(self) -> bool:
        """Overlap of the 95% intervals."""
        return self.overlaps()

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(ratio=self.ratio, ratio_se=self.ratio_se, overlapping=self.overlapping)
        return d


def correlation_integral(
    series: Sequence[np.ndarray],
    dt: float,
    max_lag: int | None = None,
    n_se: float = 2.0,
    persist: int | None = None,
) -> tuple[float, float, float, bool, np.ndarray]:
    """``int_0^inf C(s) ds`` from independent stationary segments.

    ``C`` is averaged over segments; the integral is cut at the first lag
    from which the band ``|C| <= n_se * se(C)`` holds for ``persist``
    consecutive lags.  The standard error comes from the spread of the
    per-segment integrals over the same window.  Returns
    ``(integral, se, window, converged, mean_correlation)``.
    """
    segs = [np.asarray(s, float) for s in series]
    if len(segs) < 2:
        raise AnalysisError("need at least two independent segments")
    n = min(s.size for s in segs)
    max_lag = n // 4 if max_lag is None else min(max_lag, n - 1)
    mean_all = float(np.mean([s[:n].mean() for s in segs]))
    C = np.array([_acov_about(s[:n], mean_all, max_lag) for s in segs])
    Cm = C.mean(axis=0)
    Cse = C.std(axis=0, ddof=1) / math.sqrt(len(segs))
    persist = persist if persist is not None else max(5, max_lag // 50)
    inside = np.abs(Cm) <= n_se * Cse
    cut, converged = max_lag, False
    run = 0
    for k in range(1, max_lag + 1):
        run = run + 1 if inside[k] else 0
        if run >= persist:
            cut, converged = k - persist + 1, True
            break
    per_seg = trapezoid(C[:, : cut + 1], dx=dt, axis=1)
    return float(per_seg.mean()), float(per_seg.std(ddof=1) / math.sqrt(len(segs))), cut * dt, converged, Cm


def _acov_about(x: np.ndarray, mean: float, max_lag: int) -> np.ndarray:
    y = x - mean
    n = y.size
    size = 1 << int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(y, size)
    return np.fft.irfft(f * np.conj(f), size)[: max_lag + 1] / (n - np.arange(max_lag + 1))


def probe_temperatures(beta: float, delta_beta: float) -> tuple[float, float]:
    """End temperatures with ``beta_n - beta_1 = delta_beta`` at mean inverse temperature ``beta``."""
    b1, bn = beta - 0.5 * delta_beta, beta + 0.5 * delta_beta
    if b1 <= 0 or bn <= 0:
        raise AnalysisError("probe gives a non-positive inverse temperature")
    return 1.0 / b1, 1.0 / bn


def flux_response(
    config: SystemConfig,
    j: int,
    probes: Sequence[float],
    spec: IntegratorSpec,
    horizon: float,
    seed: int,
    burn_in: float = 50.0,
    batch_count: int = 20,
    sample_stride: int = 1,
) -> tuple[float, float, dict]:
    """``d E[Phi_j] / d(delta beta)`` at 0 by central differences over ``+-probes``.

    All probe runs share one seed (common random numbers), so the central
    difference is taken batch by batch and its spread gives the error.  With
    several probe magnitudes the central differences are extrapolated
    linearly in ``delta^2`` (odd-polynomial fit).
    """
    beta = 1.0 / float(np.mean(config.end_temperatures()))
    mags = sorted({abs(float(d)) for d in probes if d != 0})
    if not mags:
        raise AnalysisError("need nonzero probes")
    name = f"Phi_{j}"
    per_mag, means = [], {}
    for d in mags:
        bms = []
        for sgn in (+1, -1):
            tl, tr = probe_temperatures(beta, sgn * d)
            cfg = config.with_end_temperatures(tl, tr)
            rec = simulate(cfg, gaussian_sampler(cfg, 1.0 / beta), spec, horizon, seed, [name],
                           sample_stride, burn_in)
            bm = _batch_means(rec[name], batch_count)
            means[sgn * d] = float(bm.mean())
            bms.append(bm)
        per_mag.append((bms[0] - bms[1]) / (2 * d))
    per_mag = np.array(per_mag)
    if len(mags) == 1:
        batch_resp = per_mag[0]
    else:
        X = np.vstack([np.ones(len(mags)), np.square(mags)]).T
        coef = np.linalg.lstsq(X, per_mag, rcond=None)[0]
        batch_resp = coef[0]
    return float(batch_resp.mean()), float(batch_resp.std(ddof=1) / math.sqrt(batch_count)), means


def green_kubo(
    config: SystemConfig,
    j: int,
    horizon: float,
    spec: IntegratorSpec,
    probes: Sequence[float] = (0.05, 0.1),
    seed: int = 0,
    n_segments: int = 20,
    burn_in: float = 50.0,
    response_horizon: float | None = None,
    sample_stride: int = 1,
    max_lag_time: float | None = None,
) -> GreenKuboResult:
    """Both sides of ``d E[Phi_j]/d(delta beta)|_0 = int_0^inf <Phi_j(t) Phi_j(0)> dt``.

    ``config`` must be at equilibrium.  The correlation side splits one
    equilibrium run of length ``horizon`` into ``n_segments`` segments;
    the response side runs ``+-probes`` around the same mean inverse
    temperature.
    """
    tl, tr = config.end_temperatures()
    if tl != tr:
        raise AnalysisError("green_kubo needs an equilibrium configuration (T_1 = T_n)")
    name = f"Phi_{j}"
    rec = simulate(config, gaussian_sampler(config, tl), spec, horizon, seed, [name], sample_stride, burn_in)
    x = rec[name]
    dts = float(rec.sample_times[1] - rec.sample_times[0])
    segs = np.array_split(x[1:], n_segments)
    max_lag = None if max_lag_time is None else int(round(max_lag_time / dts))
    integral, se, window, conv, _ = correlation_integral(segs, dts, max_lag)
    seg_means = np.array([s.mean() for s in segs])
    resp, resp_se, means = flux_response(
        config, j, probes, spec, response_horizon or horizon, derive_seed(seed, 1), burn_in, n_segments, sample_stride
    )
    return GreenKuboResult(integral, se, window, conv, resp, resp_se, {str(k): v for k, v in means.items()},
                           float(seg_means.mean()), float(seg_means.std(ddof=1) / math.sqrt(n_segments)))


# ---------------------------------------------------------------------------
# Energy shells, Lyapunov probe and dissipation scaling
# ---------------------------------------------------------------------------


def scale_to_energy(config: SystemConfig, direction: np.ndarray, energy: float) -> np.ndarray:
    """Rescale a nonzero phase-space direction ``x`` so that ``G(s x) = energy``."""
    direction = np.asarray(direction, float)

    def g(s):
        return float(total_energy_G(config, SystemState.from_vector(config, s * direction))) - energy

    if g(0.0) >= 0:
        raise AnalysisError("energy at or below the potential minimum along this direction")
    hi = 1.0
    while g(hi) < 0:
        hi *= 2.0
        if hi > 1e12:
            raise AnalysisError("could not bracket the energy shell")
    s = brentq(g, 0.0, hi, xtol=1e-14, rtol=1e-13)
    return s * direction


def shell_directions(config: SystemConfig, count: int, rng: np.random.Generator, include_r: bool = False,
                     interior: bool = True) -> list[np.ndarray]:
    """Gaussian directions in ``(q, p)`` (optionally ``r``), plus interior-site concentrations."""
    n, m = config.n, config.aux_count
    D = 2 * n + m
    out = []
    if interior:
        mid = n // 2
        for idx in (mid, n + mid):
            e = np.zeros(D)
            e[idx] = 1.0
            out.append(e)
    while len(out) < count:
        z = rng.standard_normal(D)
        if not include_r:
            z[2 * n :] = 0.0
        out.append(z)
    return out[:count]


@dataclass
class LyapunovProbeResult:
    energies: np.ndarray
    kappa: np.ndarray
    log_b: np.ndarray
    theta: float
    t: float
    decreasing: bool
    log_ratios: list = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return {
            "energies": self.energies.tolist(),
            "kappa": self.kappa.tolist(),
            "log_b": [v if np.isfinite(v) else None for v in self.log_b.tolist()],
            "theta": self.theta,
            "t": self.t,
            "decreasing": self.decreasing,
            "relative_drop": self.relative_drop,
        }

    @property
    def relative_drop(self) -> float:
        """``1 - kappa[-1] / kappa[0]`` across the probed shells."""
        return float(1.0 - self.kappa[-1] / self.kappa[0])

    def significant_decrease(self, rtol: float = 0.05) -> bool:
        """Strictly decreasing with an overall drop beyond ``rtol``."""
        return bool(self.decreasing and self.relative_drop > rtol)


def lyapunov_probe(
    config: SystemConfig,
    theta: float,
    energies: Sequence[float],
    t: float = 1.0,
    samples_per_shell: int = 20,
    n_rep: int = 50,
    dt: float | None = None,
    seed: int = 0,
    include_r: bool = False,
    inner_samples: int = 0,
    safety: float = 0.01,
) -> LyapunovProbeResult:
    """Estimate ``kappa(E) = max_x E_x[W_theta(x_t)] / W_theta(x)`` over ``G(x) = E``.

    Directions are Gaussian draws in ``(q, p)`` (``r = 0`` unless
    ``include_r``) plus states with all energy on an interior site, rescaled
    onto the shell.  Direction ``i`` and its noise seeds are shared across
    shells (common random numbers).  Ratios are evaluated in the log domain.
    With ``inner_samples > 0``, ``log b(E)`` is estimated from states with
    ``G = u E``, ``u`` uniform, as ``max log(T^t W - kappa W)``.

    ``dt`` defaults to :func:`suggest_dt` at each initial energy with the
    given ``safety``; leapfrog energy error times ``theta`` must stay small
    against the dissipation being measured.
    """
    tmax = max(res.temperature for res in config.reservoirs)
    if tmax > 0 and theta >= 1.0 / tmax:
        warnings.warn("theta outside (0, 1/T_max)", RuntimeWarning, stacklevel=2)
    energies = np.asarray(energies, dtype=float)
    rng = trajectory_rng(seed)
    dirs = shell_directions(config, samples_per_shell, rng, include_r)
    inner_dirs = shell_directions(config, inner_samples, rng, include_r, interior=False) if inner_samples else []
    inner_u = rng.uniform(0.05, 1.0, inner_samples)

    def log_ratio(x0, key):
        cfg_dt = dt or suggest_dt(config, energy=max(float(total_energy_G(config, SystemState.from_vector(config, x0))), 1.0),
                                 safety=safety)
        spec = IntegratorSpec(cfg_dt)
        g0 = float(total_energy_G(config, SystemState.from_vector(config, x0)))
        st = SystemState.from_vector(config, x0)
        gt = np.array([
            simulate(config, st, spec, t, derive_seed(seed, key * 100003 + r), ["G"])["G"][-1]
            for r in range(n_rep)
        ])
        return float(logsumexp(theta * (gt - g0)) - math.log(n_rep)), g0

    kappa, log_b, all_lr = [], [], []
    for E in energies:
        lrs = [log_ratio(scale_to_energy(config, d, E), i + 1)[0] for i, d in enumerate(dirs)]
        all_lr.append(lrs)
        k = float(np.exp(max(lrs)))
        kappa.append(k)
        lb = -math.inf
        for i, (d, u) in enumerate(zip(inner_dirs, inner_u)):
            lr, g0 = log_ratio(scale_to_energy(config, d, u * E), 10**6 + i)
            excess = math.exp(lr) - k
            if excess > 0:
                lb = max(lb, theta * g0 + math.log(excess))
        log_b.append(lb)
    kappa = np.array(kappa)
    dec = bool(np.all(np.diff(kappa) < 0))
    return LyapunovProbeResult(energies, kappa, np.array(log_b), theta, t, dec, all_lr)


@dataclass
class ScalingResult:
    energies: np.ndarray
    delta_G: np.ndarray
    exponent: float
    exponent_se: float
    log_c: float
    expected: float
    flagged: list

    @property
    def c(self) -> float:
        return math.exp(self.log_c)

    @property
    def consistent(self) -> bool:
        """Exponent not below ``2/k2`` by more than one fit standard error."""
        return self.exponent >= self.expected - self.exponent_se

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(c=self.c, consistent=self.consistent)
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in d.items()}


def dissipation_scaling(
    config: SystemConfig,
    energies: Sequence[float],
    dt: float | None = None,
    n_directions: int = 12,
    seed: int = 0,
    unit_time: float = 1.0,
    energy_floor: float = 1.0,
    min_decades: float = 2.0,
) -> ScalingResult:
    """Fit ``log(-Delta G) = log c + a log E`` over ``G(1) - G(0)`` at zero temperature.

    At each energy the worst case (least dissipation) over a fixed set of
    directions is used; the same directions are reused at every energy.
    ``dt`` defaults to :func:`suggest_dt` at the largest energy with safety
    0.01: the deterministic runs are cheap and leapfrog energy error must stay
    well below the energy lost from interior-site initial conditions.
    """
    E = np.asarray(sorted(energies), dtype=float)
    if E.min() < energy_floor:
        raise AnalysisError(f"energies must be >= {energy_floor}")
    if math.log10(E.max() / E.min()) < min_decades - 1e-9:
        raise AnalysisError(f"energies must span at least {min_decades} decades")
    rng = trajectory_rng(seed)
    dirs = shell_directions(config, n_directions, rng)
    if dt is None:
        dt = suggest_dt(config, energy=float(E.max()), safety=0.01)
    worst, flagged = [], []
    for e in E:
        dG = []
        for d in dirs:
            x0 = scale_to_energy(config, d, e)
            res = relax_deterministic(config, SystemState.from_vector(config, x0), dt, unit_time)
            dG.append(res.delta_G)
        w = float(max(dG))
        if w >= 0:
            flagged.append(float(e))
        worst.append(w)
    worst = np.array(worst)
    ok = worst < 0
    if ok.sum() < 2:
        raise AnalysisError("fewer than two energies with energy loss; cannot fit")
    fit = stats.linregress(np.log(E[ok]), np.log(-worst[ok]))
    k2 = config.pair.degree if config.topology.edges else config.onsite.degree
    return ScalingResult(E, worst, float(fit.slope), float(fit.stderr), float(fit.intercept), 2.0 / k2, flagged)


# ---------------------------------------------------------------------------
# Mixing rate
# ---------------------------------------------------------------------------


@dataclass
class MixingResult:
    rate: float
    rate_ci: tuple[float, float]
    r2: float
    fit_window: tuple[float, float]
    decay_time: float
    passed: bool
    lags: np.ndarray = field(repr=False, default=None)
    acf: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "rate": self.rate,
            "rate_ci": list(self.rate_ci),
            "r2": self.r2,
            "fit_window": list(self.fit_window),
            "decay_time": self.decay_time,
            "pass": self.passed,
        }


def mixing_rate(
    records,
    observable: str,
    max_lag_time: float | None = None,
    r2_threshold: float = 0.9,
    start_fraction: float = 0.25,
    noise_level: float = 5.0,
) -> MixingResult:
    """Exponential decay rate of the autocorrelation envelope of ``observable``.

    The normalized autocorrelation is averaged over records.  Its envelope
    is the running maximum of ``|C|`` taken from the right, which is
    monotone and follows the slowest surviving mode once faster ones have
    died out.  The fit window runs from ``start_fraction`` of the noise
    cutoff (first lag where the envelope drops below ``noise_level``
    standard errors of the estimator) to that cutoff.  The running maximum
    of pure noise over many lags sits near 3 standard errors, hence the
    default of 5.
    """
    recs = _records(records)
    series = [np.asarray(r[observable], float) for r in recs]
    dt = float(recs[0].sample_times[1] - recs[0].sample_times[0])
    n = min(s.size for s in series)
    max_lag = n // 2 if max_lag_time is None else min(int(round(max_lag_time / dt)), n - 1)
    mean_all = float(np.mean([s[:n].mean() for s in series]))
    acfs = np.array([_acov_about(s[:n], mean_all, max_lag) for s in series])
    C = acfs.mean(axis=0)
    C = C / C[0]
    lags = np.arange(C.size) * dt
    below = np.flatnonzero(np.abs(C) < math.exp(-1))
    decay_time = float(lags[below[0]]) if below.size else float(lags[-1])
    # standard error of the normalized ACF (Bartlett), in the white-noise limit
    total = n * len(series)
    bart = np.sqrt((1.0 + 2.0 * np.concatenate([[0.0, 0.0], np.cumsum(C[1:-1] ** 2)])) / total)
    env = np.maximum.accumulate(np.abs(C)[::-1])[::-1]
    noisy = np.flatnonzero(env < noise_level * bart)
    cut = int(noisy[0]) if noisy.size else C.size - 1
    start = int(start_fraction * cut)
    if cut - start < 5:
        rate = 1.0 / max(decay_time, dt)
        return MixingResult(rate, (rate, rate), float("nan"), (start * dt, cut * dt), decay_time, False, lags, C)
    # envelope points: distinct local peaks of |C| inside the window
    seg = np.abs(C[start : cut + 1])
    idx = np.flatnonzero(env[start : cut + 1] == seg) + start
    if idx.size < 3:
        idx = np.arange(start, cut + 1)
    # log-envelope points weighted by their signal-to-noise ratio
    x, y, wts = lags[idx], np.log(env[idx]), env[idx] / bart[idx]
    coef, cov = np.polyfit(x, y, 1, w=wts, cov="unscaled")
    resid = y - np.polyval(coef, x)
    dof = max(idx.size - 2, 1)
    scale = float(np.sum((wts * resid) ** 2) / dof)
    rate = -float(coef[0])
    slope_se = math.sqrt(cov[0, 0] * scale)
    tq = stats.t.ppf(0.975, dof)
    ci = (rate - tq * slope_se, rate + tq * slope_se)
    ybar = np.average(y, weights=wts**2)
    ss_tot = float(np.sum((wts * (y - ybar)) ** 2))
    r2 = float(1.0 - np.sum((wts * resid) ** 2) / ss_tot) if ss_tot > 0 else 0.0
    duration = n * dt
    if rate > 0 and duration < 10.0 / rate:
        raise AnalysisError(f"record length {duration:.3g} too short for decay time {1 / rate:.3g}")
    return MixingResult(rate, ci, r2, (float(lags[start]), float(lags[cut])), decay_time, r2 >= r2_threshold and rate > 0,
                        lags, C)


# ---------------------------------------------------------------------------
# Nondegeneracy
# ---------------------------------------------------------------------------


def nondegeneracy_probe(
    f,
    n: int,
    samples: int = 200,
    tries: int = 50,
    scale: float = 1.0,
    threshold: float = 1e-8,
    seed: int = 0,
) -> dict:
    """Fraction of random ``q`` for which some ``q'`` gives ``det f(q'_i - q_j) != 0``.

    ``f`` is a callable (for instance ``pair.derivative(2)``).  A determinant
    counts as nonzero when ``|det| > threshold * max|entry|^n``.  Points are
    uniform in ``[-scale, scale]^n``.
    """
    rng = trajectory_rng(seed)
    found = 0
    for _ in range(samples):
        q = rng.uniform(-scale, scale, n)
        for _ in range(tries):
            qp = rng.uniform(-scale, scale, n)
            M = np.asarray(f(qp[:, None] - q[None, :]), dtype=float) * np.ones((n, n))
            big = np.abs(M).max()
            if big > 0 and abs(np.linalg.det(M)) > threshold * big**n:
                found += 1
                break
    return {"n": n, "samples": samples, "tries": tries, "witness_fraction": found / samples}


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def _round(obj, digits: int):
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
        return float(f"{obj:.{digits}g}")
    if isinstance(obj, dict):
        return {k: _round(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v, digits) for v in obj]
    if isinstance(obj, np.ndarray):
        return _round(obj.tolist(), digits)
    if isinstance(obj, (np.floating,)):
        return _round(float(obj), digits)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def report_envelope(analysis: str, results: dict, config: SystemConfig | None = None, seeds=None,
                    passed: bool | None = None, grids: dict | None = None) -> dict:
    """Common JSON envelope: estimates plus provenance."""
    return {
        "analysis": analysis,
        "package_version": __version__,
        "config_digest": config.digest() if config is not None else None,
        "config": config.to_dict() if config is not None else None,
        "seeds": seeds,
        "grids": grids or {},
        "pass": passed,
        "results": results,
    }


def write_report(path, report: dict, digits: int = 8, raw: bool = False) -> Path:
    """Write a report rounded to ``digits`` significant digits; ``raw`` adds a full-precision sidecar."""
    path = Path(path)
    path.write_text(json.dumps(_round(report, digits), indent=2, sort_keys=True) + "\n")
    if raw:
        path.with_suffix(".raw.json").write_text(json.dumps(_round(report, 17), indent=2, sort_keys=True) + "\n")
    return path


def write_curve_csv(path, columns: dict[str, Sequence[float]], comment: str | None = None) -> Path:
    """Plot-ready CSV with round-trip float formatting and an optional ``#`` comment line."""
    import csv

    path = Path(path)
    names = list(columns)
    with path.open("w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*(columns[k] for k in names)):
            w.writerow([repr(float(v)) for v in row])
    return path
