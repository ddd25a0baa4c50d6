"""Time integration of the lattice SDEs and the memory-kernel particle.

Two schemes are available.  ``splitting`` (default) composes a half step of
the exactly solvable bath block, a full leapfrog step of the Hamiltonian
part and another half bath step.  The bath block of a boundary site is the
linear SDE in ``(p_i, r_b, ...)`` (auxiliary-variable baths) or ``p_i``
alone (Langevin baths); it is advanced with its exact Gaussian transition.
``euler_maruyama`` is kept as a cross-check.

Randomness: every trajectory owns a counter-based Philox stream keyed by
its 64-bit seed; ensemble seeds are derived from ``(base_seed, index)``.
Noise is drawn in fixed-size blocks of standard normals, so a record is a
pure function of ``(config, initial state, spec, seed)``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from . import _kernels as K
from .model import (
    LANGEVIN,
    MARKOVIAN_AUX,
    LatticeTopology,
    ModelWarning,
    PolynomialPotential,
    ReservoirSpec,
    SystemConfig,
    SystemState,
    hessian_at,
    potential_gradient,
    total_energy_G,
)
from .observables import evaluate_observables, validate_observable_names

SCHEMES = ("splitting", "euler_maruyama")
CHUNK_STEPS = 4096
DEFAULT_CAP_FACTOR = 1e6


class IntegratorFault(RuntimeError):
    """Integration aborted; carries the failing time and a state digest."""

    def __init__(self, message: str, time: float, state_digest: str):
        super().__init__(f"{message} at t={time:.6g} (state {state_digest})")
        self.time = time
        self.state_digest = state_digest


class NonFiniteError(IntegratorFault):
    pass


class EnergyCapError(IntegratorFault):
    pass


class EnsembleError(RuntimeError):
    """One or more ensemble members failed; ``failures`` maps index -> exception."""

    def __init__(self, failures: dict, results: list):
        super().__init__(f"{len(failures)} trajectories failed: {sorted(failures)[:10]}")
        self.failures = failures
        self.results = results


@dataclass(frozen=True)
class IntegratorSpec:
    dt: float
    scheme: str = "splitting"
    cap_G: float | None = None

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.cap_G is not None and not self.cap_G > 0:
            raise ValueError("cap_G must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


def trajectory_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator for one trajectory."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def derive_seed(base_seed: int, index: int) -> int:
    """64-bit seed of ensemble member ``index``."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# Vector fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Drift:
    q: np.ndarray
    p: np.ndarray
    r: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.p, self.r], axis=-1)


def drift(config: SystemConfig, state: SystemState) -> Drift:
    """Deterministic part of the SDE, ``(q', p', r')``."""
    qdot = np.array(state.p, dtype=float, copy=True)
    pdot = -potential_gradient(config, state.q)
    pdot = np.array(pdot, dtype=float, copy=True)
    rdot = np.zeros(state.r.shape)
    for a, (v, res) in enumerate(config.attachments()):
        if res.kind == MARKOVIAN_AUX:
            pdot[..., v] -= res.coupling * state.r[..., a]
            rdot[..., a] = -res.rate * state.r[..., a] + res.coupling * state.p[..., v]
        else:
            pdot[..., v] -= res.coupling * state.p[..., v]
    return Drift(qdot, pdot, rdot)


def coordinate_names(config: SystemConfig) -> list[str]:
    n, m = config.n, config.aux_count
    return [f"q_{i + 1}" for i in range(n)] + [f"p_{i + 1}" for i in range(n)] + [f"r_{b + 1}" for b in range(m)]


def diffusion_amplitudes(config: SystemConfig) -> list[tuple[str, int, float]]:
    """Noisy coordinates as ``(name, vector_index, amplitude)``.

    Auxiliary baths put ``sqrt(2 T gamma)`` on ``r_b``; Langevin baths put
    ``sqrt(2 lam T)`` on the attached ``p_i``.  Zero amplitudes are omitted.
    """
    n = config.n
    names = coordinate_names(config)
    out = []
    for a, (v, res) in enumerate(config.attachments()):
        if res.kind == MARKOVIAN_AUX:
            idx, amp = 2 * n + a, math.sqrt(2.0 * res.temperature * res.rate)
        else:
            idx, amp = n + v, math.sqrt(2.0 * res.coupling * res.temperature)
        if amp > 0:
            out.append((names[idx], idx, amp))
    return out


# ---------------------------------------------------------------------------
# Compilation to kernel arrays
# ---------------------------------------------------------------------------


def _bath_blocks(config: SystemConfig):
    """Index sets, generator and noise covariance of each bath block."""
    n = config.n
    per_vertex: dict[int, list[tuple[int, ReservoirSpec]]] = {}
    for a, (v, res) in enumerate(config.attachments()):
        per_vertex.setdefault(v, []).append((a, res))
    blocks = []
    for v in sorted(per_vertex):
        items = per_vertex[v]
        if config.kind == LANGEVIN:
            (_, res), = items
            M = np.array([[-res.coupling]])
            Q = np.array([[2.0 * res.coupling * res.temperature]])
            idx = [n + v]
        else:
            k = 1 + len(items)
            M = np.zeros((k, k))
            Q = np.zeros((k, k))
            idx = [n + v]
            for c, (a, res) in enumerate(items, start=1):
                M[0, c] = -res.coupling
                M[c, 0] = res.coupling
                M[c, c] = -res.rate
                Q[c, c] = 2.0 * res.temperature * res.rate
                idx.append(2 * n + a)
        blocks.append((idx, M, Q))
    return blocks


def ou_transition(M: np.ndarray, Q: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact transition of ``dx = M x dt + S dW`` (``S S^T = Q``) over time ``h``.

    Returns ``(Phi, L)`` with ``x(h) = Phi x(0) + L z``, ``z`` standard normal.
    Uses Van Loan's block exponential for the noise covariance.
    """
    k = M.shape[0]
    C = np.zeros((2 * k, 2 * k))
    C[:k, :k] = -M
    C[:k, k:] = Q
    C[k:, k:] = M.T
    E = expm(C * h)
    phi = E[k:, k:].T
    cov = phi @ E[:k, k:]
    cov = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(cov)
    L = V * np.sqrt(np.clip(w, 0.0, None))
    return phi, L


@dataclass(frozen=True, eq=False)
class _Compiled:
    n: int
    c1: np.ndarray
    d1: np.ndarray
    c2: np.ndarray
    d2: np.ndarray
    ei: np.ndarray
    ej: np.ndarray
    aux_v: np.ndarray
    aux_lam: np.ndarray
    aux_gam: np.ndarray
    lang_v: np.ndarray
    lang_lam: np.ndarray
    blk_idx: np.ndarray
    blk_k: np.ndarray
    blk_phi: np.ndarray
    blk_l: np.ndarray
    em_idx: np.ndarray
    em_amp: np.ndarray
    noisy: bool

    def noise_width(self, scheme: int) -> int:
        if scheme == K.SPLITTING:
            return 2 * int(self.blk_k.sum())
        return int(self.em_idx.size)


def _coeffs(pot: PolynomialPotential, order: int = 0) -> np.ndarray:
    return np.ascontiguousarray(pot.derivative(order).coefficients, dtype=np.float64)


@lru_cache(maxsize=128)
def _compile(config: SystemConfig, dt: float) -> _Compiled:
    n = config.n
    if config.topology.edges:
        e = np.asarray(config.topology.edges, dtype=np.int64)
        ei, ej = np.ascontiguousarray(e[:, 0]), np.ascontiguousarray(e[:, 1])
    else:
        ei = ej = np.zeros(0, dtype=np.int64)
    att = config.attachments()
    aux = [(v, r) for v, r in att if r.kind == MARKOVIAN_AUX]
    lang = [(v, r) for v, r in att if r.kind == LANGEVIN]
    blocks = _bath_blocks(config)
    kmax = max(len(b[0]) for b in blocks)
    nb = len(blocks)
    blk_idx = -np.ones((nb, kmax), dtype=np.int64)
    blk_k = np.zeros(nb, dtype=np.int64)
    blk_phi = np.zeros((nb, kmax, kmax))
    blk_l = np.zeros((nb, kmax, kmax))
    for b, (idx, M, Q) in enumerate(blocks):
        k = len(idx)
        phi, L = ou_transition(M, Q, 0.5 * dt)
        blk_idx[b, :k] = idx
        blk_k[b] = k
        blk_phi[b, :k, :k] = phi
        blk_l[b, :k, :k] = L
    amps = diffusion_amplitudes(config)
    return _Compiled(
        n=n,
        c1=_coeffs(config.onsite),
        d1=_coeffs(config.onsite, 1),
        c2=_coeffs(config.pair),
        d2=_coeffs(config.pair, 1),
        ei=ei,
        ej=ej,
        aux_v=np.array([v for v, _ in aux], dtype=np.int64),
        aux_lam=np.array([r.coupling for _, r in aux], dtype=np.float64),
        aux_gam=np.array([r.rate for _, r in aux], dtype=np.float64),
        lang_v=np.array([v for v, _ in lang], dtype=np.int64),
        lang_lam=np.array([r.coupling for _, r in lang], dtype=np.float64),
        blk_idx=blk_idx,
        blk_k=blk_k,
        blk_phi=blk_phi,
        blk_l=blk_l,
        em_idx=np.array([i for _, i, _ in amps], dtype=np.int64),
        em_amp=np.array([a for _, _, a in amps], dtype=np.float64),
        noisy=bool(amps),
    )


def _scheme_code(spec: IntegratorSpec) -> int:
    return K.SPLITTING if spec.scheme == "splitting" else K.EULER_MARUYAMA


def _digest(x: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(x).tobytes()).hexdigest()[:16]


def _cap(config: SystemConfig, spec: IntegratorSpec, x: np.ndarray) -> float:
    if spec.cap_G is not None:
        return float(spec.cap_G)
    state = SystemState.from_vector(config, x)
    return DEFAULT_CAP_FACTOR * max(float(total_energy_G(config, state)), 1.0)


class _Runner:
    """Drives the compiled kernel over noise blocks drawn from one stream."""

    def __init__(self, config: SystemConfig, spec: IntegratorSpec, rng: np.random.Generator, cap: float):
        self.config = config
        self.spec = spec
        self.rng = rng
        self.cap = cap
        self.c = _compile(config, float(spec.dt))
        self.scheme = _scheme_code(spec)
        self.width = self.c.noise_width(self.scheme)
        self.steps_done = 0

    def _noise(self, k: int) -> np.ndarray:
        if self.c.noisy:
            return self.rng.standard_normal((k, self.width))
        return np.zeros((k, self.width))

    def advance(self, x: np.ndarray, n_steps: int, stride: int = 1, record: bool = False) -> np.ndarray:
        """Advance ``x`` in place; returns samples taken at multiples of ``stride``."""
        c = self.c
        dim = x.size
        samples = []
        done = 0
        while done < n_steps:
            k = min(CHUNK_STEPS, n_steps - done)
            noise = self._noise(k)
            out = np.empty((k // stride + 1 if record else 0, dim))
            status, steps, written = K.run(
                x, done, k, stride, record, self.spec.dt, self.scheme, noise,
                c.n, c.c1, c.d1, c.c2, c.d2, c.ei, c.ej,
                c.aux_v, c.aux_lam, c.aux_gam, c.lang_v, c.lang_lam,
                c.blk_idx, c.blk_k, c.blk_phi, c.blk_l, c.em_idx, c.em_amp,
                self.cap, out,
            )
            self.steps_done += steps
            if record and written:
                samples.append(out[:written].copy())
            if status != K.OK:
                t = self.steps_done * self.spec.dt
                cls, what = (NonFiniteError, "non-finite state") if status == K.NONFINITE else (
                    EnergyCapError, f"G exceeded cap {self.cap:.4g}")
                err = cls(what, t, _digest(x))
                err.samples = samples
                raise err
            done += k
        if samples:
            return np.vstack(samples)
        return np.empty((0, dim))


def steps_for(duration: float, dt: float) -> int:
    """Number of steps covering ``duration`` (ceil, tolerant to rounding)."""
    if duration <= 0:
        return 0
    return int(math.ceil(duration / dt - 1e-9))


# ---------------------------------------------------------------------------
# Single steps and trajectories
# ---------------------------------------------------------------------------


def step(config: SystemConfig, state: SystemState, spec: IntegratorSpec, rng: np.random.Generator) -> SystemState:
    """One integrator step; raises :class:`IntegratorFault` subclasses on blow-up."""
    state.validate(config)
    x = state.to_vector().astype(float).copy()
    runner = _Runner(config, spec, rng, _cap(config, spec, x))
    try:
        runner.advance(x, 1)
    except IntegratorFault as err:
        err.time += state.t
        raise
    return SystemState.from_vector(config, x, state.t + spec.dt)


@dataclass
class TrajectoryRecord:
    """Sampled observables (and optionally states) of one seeded run."""

    sample_times: np.ndarray
    observable_samples: dict[str, np.ndarray]
    seed: int
    config_hash: str
    states: np.ndarray | None = None
    spec: dict | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sample_times = np.asarray(self.sample_times, dtype=float)
        for name, series in self.observable_samples.items():
            if len(series) != len(self.sample_times):
                raise ValueError(f"series {name!r} has {len(series)} samples, expected {len(self.sample_times)}")

    def __len__(self):
        return len(self.sample_times)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.observable_samples[name]

    def header(self) -> dict:
        return {
            "config_digest": self.config_hash,
            "seed": int(self.seed),
            "spec": self.spec,
            "columns": ["t", *self.observable_samples],
            "n_samples": len(self),
            **self.meta,
        }

    def write_csv(self, path) -> Path:
        path = Path(path)
        names = list(self.observable_samples)
        cols = [self.sample_times] + [self.observable_samples[k] for k in names]
        with path.open("w", newline="") as fh:
            fh.write(f"# config_digest={self.config_hash} seed={int(self.seed)}\n")
            w = csv.writer(fh)
            w.writerow(["t", *names])
            for row in zip(*cols):
                w.writerow([repr(float(v)) for v in row])
        return path

    def write(self, stem) -> tuple[Path, Path]:
        """Write ``<stem>.csv`` and ``<stem>.json`` (header)."""
        stem = Path(stem)
        csv_path = self.write_csv(stem.with_suffix(".csv"))
        json_path = stem.with_suffix(".json")
        json_path.write_text(json.dumps(self.header(), indent=2, sort_keys=True))
        return csv_path, json_path

    @classmethod
    def read_csv(cls, path, seed: int = 0, config_hash: str = "") -> "TrajectoryRecord":
        with Path(path).open() as fh:
            lines = fh.read().splitlines()
        for line in lines:
            if not line.startswith("#"):
                break
            fields = dict(f.split("=", 1) for f in line[1:].split() if "=" in f)
            seed = int(fields.get("seed", seed))
            config_hash = fields.get("config_digest", config_hash)
        rows = list(csv.reader(line for line in lines if not line.startswith("#")))
        names = rows[0][1:]
        data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(rows[0]))
        return cls(data[:, 0], {k: data[:, i + 1] for i, k in enumerate(names)}, seed, config_hash)


Sampler = Callable[[np.random.Generator], SystemState]


def simulate(
    config: SystemConfig,
    state0: SystemState | Sampler,
    spec: IntegratorSpec,
    horizon: float,
    seed: int,
    observers: Sequence[str] = ("G",),
    sample_stride: int = 1,
    burn_in: float = 0.0,
    store_states: bool = False,
) -> TrajectoryRecord:
    """Integrate one trajectory and sample observables every ``sample_stride`` steps.

    Parameters
    ----------
    state0 : SystemState or callable
        Initial state, or a sampler ``rng -> SystemState`` that is fed the
        trajectory's own stream before integration starts.
    horizon : float
        Recorded duration; ``ceil(horizon / dt)`` steps are taken after an
        unrecorded ``burn_in``.  ``horizon=0`` gives a single sample.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    if sample_stride < 1:
        raise ValueError("sample_stride must be >= 1")
    observers = list(observers)
    validate_observable_names(config, observers)
    rng = trajectory_rng(seed)
    if callable(state0):
        state0 = state0(rng)
    state0.validate(config)
    x = state0.to_vector().astype(float).copy()
    runner = _Runner(config, spec, rng, _cap(config, spec, x))
    n_burn = steps_for(burn_in, spec.dt)
    n_steps = steps_for(horizon, spec.dt)
    try:
        runner.advance(x, n_burn)
        first = x.copy()
        samples = runner.advance(x, n_steps, sample_stride, record=True)
    except IntegratorFault as err:
        err.time += state0.t
        raise
    states = np.vstack([first[None, :], samples])
    steps = n_burn + sample_stride * np.arange(states.shape[0])
    times = state0.t + steps * spec.dt
    batch = SystemState.from_vector(config, states)
    obs = evaluate_observables(config, batch, observers)
    return TrajectoryRecord(
        sample_times=times,
        observable_samples=obs,
        seed=int(seed),
        config_hash=config.digest(),
        states=states if store_states else None,
        spec=spec.to_dict(),
        meta={"burn_in_steps": n_burn, "steps": n_steps, "sample_stride": sample_stride},
    )


def simulate_ensemble(
    config: SystemConfig,
    sampler: SystemState | Sampler,
    spec: IntegratorSpec,
    horizon: float,
    n_traj: int,
    base_seed: int,
    observers: Sequence[str] = ("G",),
    sample_stride: int = 1,
    burn_in: float = 0.0,
    workers: int = 1,
    reducer: Callable[[TrajectoryRecord], object] | None = None,
    store_states: bool = False,
) -> list:
    """Independent trajectories with seeds ``derive_seed(base_seed, i)``.

    Results come back in trajectory order and do not depend on ``workers``.
    ``reducer`` (applied per trajectory inside the worker) replaces each
    record by a summary to bound memory.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")

    def one(i):
        try:
            rec = simulate(config, sampler, spec, horizon, derive_seed(base_seed, i), observers,
                           sample_stride, burn_in, store_states)
        except IntegratorFault as err:
            return err
        return reducer(rec) if reducer is not None else rec

    if workers <= 1:
        results = [one(i) for i in range(n_traj)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(n_traj)))
    failures = {i: r for i, r in enumerate(results) if isinstance(r, IntegratorFault)}
    if failures:
        raise EnsembleError(failures, results)
    return results


# ---------------------------------------------------------------------------
# Initial-state samplers and step-size heuristic
# ---------------------------------------------------------------------------


def gaussian_sampler(config: SystemConfig, temperature: float) -> Sampler:
    """Gaussian approximation of the Gibbs state ``exp(-G/T)``.

    Momenta and auxiliaries are exact; positions use the Hessian of ``V`` at
    the origin (exact for quadratic potentials).
    """
    n, m = config.n, config.aux_count
    Kmat = hessian_at(config, np.zeros(n))
    w, V = np.linalg.eigh(Kmat)
    if np.any(w <= 0):
        w = np.where(w > 0, w, 1.0)
    q_factor = V / np.sqrt(w) * math.sqrt(temperature)
    s = math.sqrt(temperature)

    def sample(rng: np.random.Generator) -> SystemState:
        z = rng.standard_normal(2 * n + m)
        return SystemState(s * z[n : 2 * n], q_factor @ z[:n], s * z[2 * n :])

    return sample


def suggest_dt(config: SystemConfig, energy: float | None = None, safety: float = 0.1) -> float:
    """``safety / omega_max`` with ``omega_max^2`` = largest curvature + rate^2.

    Without ``energy`` the curvature is the Hessian at the origin.  With an
    energy scale ``E`` the curvatures are evaluated at the amplitudes where
    ``U1`` and ``U2`` reach ``E``, with a Gershgorin bound over the degree.
    """
    rates = [res.rate for res in config.reservoirs] + [abs(res.coupling) for res in config.reservoirs]
    g2 = max(rates) ** 2
    if energy is None:
        w = np.linalg.eigvalsh(hessian_at(config, np.zeros(config.n)))
        curv = max(float(w.max()), 0.0)
    else:
        a1 = _amplitude(config.onsite, energy)
        a2 = _amplitude(config.pair, energy)
        deg = np.bincount(np.asarray(config.topology.edges).ravel(), minlength=config.n).max() if config.topology.edges else 0
        curv = abs(config.onsite.derivative(2)(a1)) + 2 * deg * abs(config.pair.derivative(2)(a2))
        curv = max(curv, float(np.linalg.eigvalsh(hessian_at(config, np.zeros(config.n))).max()))
    return safety / math.sqrt(curv + g2)


def _amplitude(pot: PolynomialPotential, energy: float) -> float:
    if pot.degree < 2:
        return 0.0
    lo, hi = 0.0, 1.0
    while max(pot(hi), pot(-hi)) < energy and hi < 1e12:
        hi *= 2
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if max(pot(mid), pot(-mid)) < energy:
            lo = mid
        else:
            hi = mid
    return hi


# ---------------------------------------------------------------------------
# Zero-temperature relaxation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RelaxationResult:
    G_initial: float
    G_final: float
    times: np.ndarray
    decay_curve: np.ndarray
    final_state: SystemState

    @property
    def delta_G(self) -> float:
        return self.G_final - self.G_initial


def relax_deterministic(
    config: SystemConfig,
    state0: SystemState,
    dt: float | None = None,
    unit_time: float = 1.0,
    n_curve: int = 101,
) -> RelaxationResult:
    """Noiseless run over ``[0, unit_time]`` with all baths at zero temperature."""
    if np.any(config.temperatures() != 0):
        raise ValueError("relax_deterministic needs all reservoir temperatures equal to 0")
    for res in config.reservoirs:
        if not (res.coupling > 0 and res.rate > 0):
            raise ValueError("relaxation needs lam > 0 and gamma > 0")
    state0.validate(config)
    if dt is None:
        dt = suggest_dt(config, energy=max(float(total_energy_G(config, state0)), 1.0))
    spec = IntegratorSpec(dt)
    n_steps = steps_for(unit_time, dt)
    stride = max(1, n_steps // max(n_curve - 1, 1))
    x = state0.to_vector().astype(float).copy()
    runner = _Runner(config, spec, np.random.Generator(np.random.Philox(0)), _cap(config, spec, x))
    first = x.copy()
    samples = runner.advance(x, n_steps, stride, record=True)
    states = np.vstack([first[None, :], samples])
    times = state0.t + stride * np.arange(states.shape[0]) * dt
    if n_steps % stride:
        states = np.vstack([states, x[None, :]])
        times = np.append(times, state0.t + n_steps * dt)
    G = total_energy_G(config, SystemState.from_vector(config, states))
    final = SystemState.from_vector(config, x, state0.t + n_steps * dt)
    return RelaxationResult(float(G[0]), float(G[-1]), times, G, final)


# ---------------------------------------------------------------------------
# Generalized Langevin equation (single particle, exponential memory)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GLEConfig:
    """Particle in ``V`` coupled through the kernel ``lam^2 exp(-gamma |t|)``."""

    onsite: PolynomialPotential
    lam: float
    gamma: float
    temperature: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        veff = self.effective_potential
        if not veff.is_confining:
            raise ValueError(
                "V_eff = V - lam^2 q^2 / 2 is not confining: need onsite degree > 2, "
                "or degree 2 with quadratic coefficient > lam^2 / 2"
            )

    @property
    def effective_potential(self) -> PolynomialPotential:
        return self.onsite.shifted_quadratic(-self.lam**2)

    def extended_config(self) -> SystemConfig:
        """The equivalent Markovian ``(p, q, r)`` system (one auxiliary variable)."""
        return single_particle_config(self.effective_potential, self.temperature, self.lam, self.gamma)


def single_particle_config(onsite: PolynomialPotential, T: float, lam: float, gamma: float) -> SystemConfig:
    """One site, one auxiliary-variable bath."""
    topo = LatticeTopology(1, (), ((0, 0),), "general")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ModelWarning)
        return SystemConfig(topo, onsite, PolynomialPotential((0.0,)), (ReservoirSpec(T, lam, gamma),))


def simulate_gle(
    gle: GLEConfig,
    state0: tuple[float, float],
    dt: float,
    horizon: float,
    seed: int,
    history_truncation: float | None = None,
    sample_stride: int = 1,
    burn_in: float = 0.0,
) -> TrajectoryRecord:
    """Integrate ``q' = p, p' = -V_eff'(q) - int_0^t C(t-s) p(s) ds - xi(t)``.

    The memory integral is carried by the exact exponential-kernel recursion
    ``M <- exp(-gamma dt) M + lam^2 (1 - exp(-gamma dt))/gamma * p_mid``; the
    force ``xi`` is a stationary OU process with variance ``lam^2 T`` and
    rate ``gamma``.  No history is stored, so ``history_truncation`` is
    unused for this kernel.

    Records ``q_1``, ``p_1``, ``memory`` and ``xi``.
    """
    del history_truncation
    rng = trajectory_rng(seed)
    p0, q0 = state0
    xi0 = abs(gle.lam) * math.sqrt(gle.temperature) * rng.standard_normal()
    st = np.array([float(q0), float(p0), 0.0, xi0])
    dveff = _coeffs(gle.effective_potential, 1)
    n_burn = steps_for(burn_in, dt)
    n_steps = steps_for(horizon, dt)

    def advance(k_total, stride, record):
        out_all = []
        done = 0
        while done < k_total:
            k = min(CHUNK_STEPS, k_total - done)
            noise = rng.standard_normal(k)
            out = np.empty((k // stride + 1, 4))
            status, steps, written = K.run_gle(st, done, k, stride, dt, gle.lam, gle.gamma,
                                               gle.temperature, dveff, noise, out)
            if status != K.OK:
                raise NonFiniteError("non-finite GLE state", (done + steps) * dt, _digest(st))
            if record:
                out_all.append(out[:written].copy())
            done += k
        return np.vstack(out_all) if out_all else np.empty((0, 4))

    advance(n_burn, 1, False)
    first = st.copy()
    samples = advance(n_steps, sample_stride, True)
    data = np.vstack([first[None, :], samples])
    times = (n_burn + sample_stride * np.arange(data.shape[0])) * dt
    obs = {"q_1": data[:, 0], "p_1": data[:, 1], "memory": data[:, 2], "xi": data[:, 3]}
    blob = json.dumps({"onsite": gle.onsite.to_list(), "lam": gle.lam, "gamma": gle.gamma,
                       "T": gle.temperature}, sort_keys=True)
    return TrajectoryRecord(times, obs, int(seed), hashlib.sha256(blob.encode()).hexdigest()[:32],
                            spec={"dt": dt, "scheme": "gle_leapfrog"},
                            meta={"burn_in_steps": n_burn, "steps": n_steps, "sample_stride": sample_stride})
