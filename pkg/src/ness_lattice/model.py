"""Potentials, lattice topologies, reservoirs and system assembly.

Sites carry scalar coordinates ``(p_i, q_i)``.  A system is fully determined
by a :class:`SystemConfig`: a topology, an on-site potential ``U1``, a pair
potential ``U2`` evaluated on oriented edges as ``U2(q_i - q_j)`` with
``i < j``, and one :class:`ReservoirSpec` per boundary attachment.

Two reservoir kinds exist.  ``markovian_aux`` reservoirs add one auxiliary
coordinate ``r`` per attachment::

    dp_i = (... - lam * r) dt
    dr   = (-gamma * r + lam * p_i) dt + sqrt(2 T gamma) dW

``langevin`` reservoirs act directly on the momentum::

    dp_i = (... - lam * p_i) dt + sqrt(2 lam T) dW
"""

from __future__ import annotations

import hashlib
import json
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

MARKOVIAN_AUX = "markovian_aux"
LANGEVIN = "langevin"
RESERVOIR_KINDS = (MARKOVIAN_AUX, LANGEVIN)

DEFAULT_VERTEX_CAP = 10**6


class ModelWarning(UserWarning):
    """Structural assumption violated but the configuration is still usable."""


# ---------------------------------------------------------------------------
# Potentials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolynomialPotential:
    """One-variable polynomial ``U(x) = sum_m c_m x**m``.

    Parameters
    ----------
    coefficients : sequence of float
        ``c_0, c_1, ..., c_k`` in increasing order.  Trailing zeros are
        stripped so that :attr:`degree` is the true degree.

    Notes
    -----
    Confinement (even degree >= 2, positive leading coefficient) is not
    enforced here: non-confining polynomials are needed to exercise the
    structural checks.  Use :attr:`is_confining`.
    """

    coefficients: tuple[float, ...]

    def __post_init__(self):
        coeffs = [float(c) for c in self.coefficients]
        if not coeffs:
            raise ValueError("a polynomial needs at least one coefficient")
        if not all(np.isfinite(coeffs)):
            raise ValueError(f"non-finite polynomial coefficient in {coeffs}")
        while len(coeffs) > 1 and coeffs[-1] == 0.0:
            coeffs.pop()
        object.__setattr__(self, "coefficients", tuple(coeffs))

    @classmethod
    def from_terms(cls, terms: Mapping[int, float]) -> "PolynomialPotential":
        """Build from a ``{power: coefficient}`` mapping, e.g. ``{2: 0.5, 4: 0.25}``."""
        if not terms:
            return cls((0.0,))
        k = max(terms)
        coeffs = [0.0] * (k + 1)
        for power, c in terms.items():
            if power < 0:
                raise ValueError("negative power")
            coeffs[power] += float(c)
        return cls(tuple(coeffs))

    @classmethod
    def harmonic(cls, stiffness: float = 1.0) -> "PolynomialPotential":
        """``stiffness * x**2 / 2``."""
        return cls((0.0, 0.0, 0.5 * stiffness))

    @property
    def degree(self) -> int:
        if len(self.coefficients) == 1 and self.coefficients[0] == 0.0:
            return 0
        return len(self.coefficients) - 1

    @property
    def leading_coefficient(self) -> float:
        return self.coefficients[-1]

    @property
    def is_confining(self) -> bool:
        k = self.degree
        return k >= 2 and k % 2 == 0 and self.leading_coefficient > 0

    def __call__(self, x):
        return npoly.polyval(x, self.coefficients)

    def derivative(self, order: int = 1) -> "PolynomialPotential":
        if order < 0:
            raise ValueError("derivative order must be >= 0")
        if order == 0:
            return self
        c = npoly.polyder(np.asarray(self.coefficients), order)
        if c.size == 0:
            c = np.zeros(1)
        return PolynomialPotential(tuple(c))

    def shifted_quadratic(self, delta: float) -> "PolynomialPotential":
        """Return ``U(x) + delta * x**2 / 2``."""
        coeffs = list(self.coefficients) + [0.0] * max(0, 3 - len(self.coefficients))
        coeffs[2] += 0.5 * delta
        return PolynomialPotential(tuple(coeffs))

    def to_list(self) -> list[float]:
        return list(self.coefficients)


# ---------------------------------------------------------------------------
# Topology and reservoirs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReservoirSpec:
    """Heat bath attached to one boundary vertex.

    For ``langevin`` reservoirs the friction and the noise share the single
    parameter ``coupling``; ``rate`` is kept equal to it.
    """

    temperature: float
    coupling: float
    rate: float
    kind: str = MARKOVIAN_AUX

    def __post_init__(self):
        if self.kind not in RESERVOIR_KINDS:
            raise ValueError(f"unknown reservoir kind {self.kind!r}")
        if not np.isfinite(self.temperature) or self.temperature < 0:
            raise ValueError(f"temperature must be finite and >= 0, got {self.temperature}")
        if not np.isfinite(self.coupling):
            raise ValueError("coupling must be finite")
        if not (np.isfinite(self.rate) and self.rate > 0):
            raise ValueError(f"rate gamma must be > 0, got {self.rate}")

    @classmethod
    def langevin(cls, temperature: float, coupling: float) -> "ReservoirSpec":
        if coupling <= 0:
            raise ValueError("langevin coupling must be > 0 (it is also the friction)")
        return cls(float(temperature), float(coupling), float(coupling), LANGEVIN)

    def with_temperature(self, temperature: float) -> "ReservoirSpec":
        return ReservoirSpec(float(temperature), self.coupling, self.rate, self.kind)


@dataclass(frozen=True)
class LatticeTopology:
    """Vertices ``0..vertex_count-1``, undirected edges and bath attachments.

    ``boundary`` is a tuple of ``(vertex, reservoir_index)`` pairs; a vertex
    may appear more than once (a single chain site coupled to both baths).
    Edges are stored oriented with the lower index first.
    """

    vertex_count: int
    edges: tuple[tuple[int, int], ...]
    boundary: tuple[tuple[int, int], ...]
    kind: str = "general"
    shape: tuple[int, ...] = ()
    labels: tuple = ()
    connected: bool = field(init=False)

    def __post_init__(self):
        n = self.vertex_count
        if n < 1:
            raise ValueError("vertex_count must be positive")
        if self.kind not in ("chain", "hypercube", "general"):
            raise ValueError(f"unknown topology kind {self.kind!r}")
        oriented = []
        seen = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) references a missing vertex")
            if i == j:
                raise ValueError(f"self-loop at vertex {i}")
            e = (min(i, j), max(i, j))
            if e in seen:
                raise ValueError(f"duplicate edge {e}")
            seen.add(e)
            oriented.append(e)
        object.__setattr__(self, "edges", tuple(oriented))
        if not self.boundary:
            raise ValueError("at least one boundary vertex is required")
        for v, _ in self.boundary:
            if not 0 <= v < n:
                raise ValueError(f"boundary vertex {v} not in vertex set")
        if self.kind == "chain":
            expected = tuple((i, i + 1) for i in range(n - 1))
            if tuple(sorted(self.edges)) != expected:
                raise ValueError("chain edges must be exactly (i, i+1)")
            if {v for v, _ in self.boundary} != {0, n - 1}:
                raise ValueError("chain boundary must be the two end sites")
        object.__setattr__(self, "connected", _is_connected(n, self.edges))

    @property
    def boundary_vertices(self) -> tuple[int, ...]:
        return tuple(sorted({v for v, _ in self.boundary}))

    def planes(self) -> np.ndarray:
        """Transport-direction layer index of each vertex (0-based).

        Chains: the site index.  Hypercubes: ``i_1 + N``.
        """
        if self.kind == "chain":
            return np.arange(self.vertex_count)
        if self.kind == "hypercube":
            N, dim = self.shape
            side = 2 * N + 1
            return np.arange(self.vertex_count) // side ** (dim - 1)
        raise ValueError("plane decomposition is defined for chain and hypercube topologies only")

    @property
    def plane_count(self) -> int:
        if self.kind == "hypercube":
            return 2 * self.shape[0] + 1
        if self.kind == "chain":
            return self.vertex_count
        raise ValueError("plane decomposition is defined for chain and hypercube topologies only")


def _is_connected(n: int, edges: Iterable[tuple[int, int]]) -> bool:
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    todo = deque([0])
    while todo:
        v = todo.popleft()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                todo.append(w)
    return len(seen) == n


@dataclass(frozen=True)
class SystemConfig:
    """Topology + potentials + reservoirs: everything that fixes the SDE."""

    topology: LatticeTopology
    onsite: PolynomialPotential
    pair: PolynomialPotential
    reservoirs: tuple[ReservoirSpec, ...]
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.reservoirs:
            raise ValueError("at least one reservoir is required")
        kinds = {res.kind for res in self.reservoirs}
        if len(kinds) != 1:
            raise ValueError("all reservoirs of one config must share the same kind")
        for _, b in self.topology.boundary:
            if not 0 <= b < len(self.reservoirs):
                raise ValueError(f"boundary references missing reservoir {b}")
        if self.kind == LANGEVIN:
            verts = [v for v, _ in self.topology.boundary]
            if len(verts) != len(set(verts)):
                raise ValueError("a vertex can carry at most one langevin bath")
        notes = list(self.warnings)
        if self.pair.degree < self.onsite.degree:
            notes.append(
                f"pair degree {self.pair.degree} < onsite degree {self.onsite.degree}: "
                "growth ordering k2 >= k1 violated (breather regime)"
            )
        if not self.onsite.is_confining:
            notes.append("onsite potential is not confining")
        if self.topology.edges and not self.pair.is_confining:
            notes.append("pair potential is not confining")
        if not self.topology.connected:
            notes.append("graph is disconnected; components evolve independently")
        notes = tuple(dict.fromkeys(notes))
        object.__setattr__(self, "warnings", notes)
        for msg in notes:
            warnings.warn(msg, ModelWarning, stacklevel=3)

    # -- derived structure -------------------------------------------------

    @property
    def kind(self) -> str:
        return self.reservoirs[0].kind

    @property
    def n(self) -> int:
        return self.topology.vertex_count

    @property
    def aux_count(self) -> int:
        return len(self.topology.boundary) if self.kind == MARKOVIAN_AUX else 0

    @property
    def state_dim(self) -> int:
        return 2 * self.n + self.aux_count

    def attachments(self) -> list[tuple[int, ReservoirSpec]]:
        """``(vertex, reservoir)`` per attachment, in auxiliary-variable order."""
        return [(v, self.reservoirs[b]) for v, b in self.topology.boundary]

    def temperatures(self) -> np.ndarray:
        return np.array([res.temperature for res in self.reservoirs])

    def end_temperatures(self) -> tuple[float, float]:
        """Left/right bath temperatures for chains and hypercubes."""
        if self.topology.kind not in ("chain", "hypercube"):
            raise ValueError("left/right temperatures need a chain or hypercube")
        return self.reservoirs[0].temperature, self.reservoirs[-1].temperature

    def with_end_temperatures(self, t_left: float, t_right: float) -> "SystemConfig":
        if self.topology.kind not in ("chain", "hypercube") or len(self.reservoirs) != 2:
            raise ValueError("only two-bath chain/hypercube configs can be re-tempered")
        res = (self.reservoirs[0].with_temperature(t_left), self.reservoirs[1].with_temperature(t_right))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ModelWarning)
            return SystemConfig(self.topology, self.onsite, self.pair, res)

    def with_onsite(self, onsite: PolynomialPotential) -> "SystemConfig":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ModelWarning)
            return SystemConfig(self.topology, onsite, self.pair, self.reservoirs)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        topo = self.topology
        return {
            "topology": {
                "kind": topo.kind,
                "vertex_count": topo.vertex_count,
                "edges": [list(e) for e in topo.edges],
                "boundary": [list(b) for b in topo.boundary],
                "shape": list(topo.shape),
            },
            "onsite": self.onsite.to_list(),
            "pair": self.pair.to_list(),
            "reservoirs": [
                {"T": r.temperature, "lambda": r.coupling, "gamma": r.rate, "kind": r.kind}
                for r in self.reservoirs
            ],
        }

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form (hex, first 16 bytes)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:32]


@dataclass(frozen=True, eq=False)
class SystemState:
    """Phase point ``(p, q, r)`` at time ``t``.

    Arrays may carry leading batch axes; the last axis indexes sites
    (``p``, ``q``) or auxiliary attachments (``r``).
    """

    p: np.ndarray
    q: np.ndarray
    r: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        r = np.asarray(self.r, dtype=float)
        if r.ndim == 1 and r.size == 0 and self.p.ndim > 1:
            r = np.zeros(self.p.shape[:-1] + (0,))
        object.__setattr__(self, "r", r)
        if self.p.shape != self.q.shape:
            raise ValueError(f"p shape {self.p.shape} != q shape {self.q.shape}")
        if self.t < 0:
            raise ValueError("time must be nonnegative")

    @classmethod
    def zeros(cls, config: SystemConfig) -> "SystemState":
        return cls(np.zeros(config.n), np.zeros(config.n), np.zeros(config.aux_count))

    @classmethod
    def from_vector(cls, config: SystemConfig, x, t: float = 0.0) -> "SystemState":
        """Inverse of :meth:`to_vector`; ordering is ``(q, p, r)``."""
        x = np.asarray(x, dtype=float)
        n = config.n
        if x.shape[-1] != config.state_dim:
            raise ValueError(f"vector length {x.shape[-1]} != state_dim {config.state_dim}")
        return cls(x[..., n : 2 * n], x[..., :n], x[..., 2 * n :], t)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.p, self.r], axis=-1)

    def validate(self, config: SystemConfig) -> "SystemState":
        if self.p.shape[-1] != config.n or self.r.shape[-1] != config.aux_count:
            raise ValueError(
                f"state shapes p{self.p.shape} r{self.r.shape} do not match config "
                f"(n={config.n}, aux={config.aux_count})"
            )
        if not (np.all(np.isfinite(self.p)) and np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.r))):
            raise ValueError("state contains non-finite entries")
        return self

    def replace(self, **kw) -> "SystemState":
        d = {"p": self.p, "q": self.q, "r": self.r, "t": self.t}
        d.update(kw)
        return SystemState(**d)


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def _check_potentials(onsite, pair):
    for name, pot in (("onsite", onsite), ("pair", pair)):
        if not isinstance(pot, PolynomialPotential):
            raise TypeError(f"{name} must be a PolynomialPotential")


def build_chain(
    n: int,
    onsite: PolynomialPotential,
    pair: PolynomialPotential,
    T_left: float,
    T_right: float,
    lam: float,
    gamma: float,
    kind: str = MARKOVIAN_AUX,
) -> SystemConfig:
    """Chain of ``n`` sites with baths on the first and last site.

    For ``n == 1`` both baths attach to the single site.  ``kind="langevin"``
    gives the Langevin-thermostatted variant (``gamma`` is then ignored).
    """
    if int(n) != n or n < 1:
        raise ValueError(f"chain length must be a positive integer, got {n}")
    n = int(n)
    _check_potentials(onsite, pair)
    if kind == MARKOVIAN_AUX:
        res = (ReservoirSpec(float(T_left), float(lam), float(gamma)),
               ReservoirSpec(float(T_right), float(lam), float(gamma)))
    else:
        res = (ReservoirSpec.langevin(T_left, lam), ReservoirSpec.langevin(T_right, lam))
        if n == 1:
            raise ValueError("a single langevin site cannot carry two baths")
    topo = LatticeTopology(n, tuple((i, i + 1) for i in range(n - 1)), ((0, 0), (n - 1, 1)), "chain")
    return SystemConfig(topo, onsite, pair, res)


def build_hypercube(
    N: int,
    dim: int,
    onsite: PolynomialPotential,
    pair: PolynomialPotential,
    T_L: float,
    T_R: float,
    lam: float,
    vertex_cap: int = DEFAULT_VERTEX_CAP,
) -> SystemConfig:
    """Hypercube ``{i in Z^dim : |i|_inf <= N}`` with Langevin baths on two faces.

    Vertices are flattened in C order over ``(i_1, ..., i_dim)`` so that the
    transport direction ``i_1`` is the slowest axis.  Sites with
    ``i_1 = -N`` see temperature ``T_L`` and sites with ``i_1 = N`` see ``T_R``.
    """
    if N < 1 or dim < 1:
        raise ValueError("N and dim must be >= 1")
    side = 2 * N + 1
    if side**dim > vertex_cap:
        raise OverflowError(f"hypercube has {side}**{dim} vertices, above cap {vertex_cap}")
    _check_potentials(onsite, pair)
    shape = (side,) * dim
    count = side**dim
    idx = np.arange(count).reshape(shape)
    edges = []
    for axis in range(dim):
        a = np.take(idx, range(side - 1), axis=axis).ravel()
        b = np.take(idx, range(1, side), axis=axis).ravel()
        edges.extend(zip(a.tolist(), b.tolist()))
    left = idx[0].ravel().tolist()
    right = idx[-1].ravel().tolist()
    boundary = tuple((v, 0) for v in left) + tuple((v, 1) for v in right)
    topo = LatticeTopology(count, tuple(sorted(edges)), boundary, "hypercube", (N, dim))
    res = (ReservoirSpec.langevin(T_L, lam), ReservoirSpec.langevin(T_R, lam))
    return SystemConfig(topo, onsite, pair, res)


def build_graph(
    edges: Sequence[tuple],
    boundary_specs: Mapping,
    onsite: PolynomialPotential,
    pair: PolynomialPotential,
    vertices: Sequence | None = None,
) -> SystemConfig:
    """General graph with Langevin baths.

    Parameters
    ----------
    edges : sequence of pairs of vertex labels
    boundary_specs : mapping vertex label -> ReservoirSpec
    vertices : optional explicit vertex labels (for isolated vertices)

    Labels may be any sortable hashables; they are mapped to indices in
    sorted order and kept in ``topology.labels``.
    """
    _check_potentials(onsite, pair)
    labels = set(vertices or ())
    for i, j in edges:
        labels.update((i, j))
    if not labels:
        labels.update(boundary_specs)
    labels = sorted(labels)
    index = {lab: k for k, lab in enumerate(labels)}
    for v in boundary_specs:
        if v not in index:
            raise ValueError(f"boundary vertex {v!r} is not in the vertex set")
    reservoirs = []
    boundary = []
    for v in sorted(boundary_specs, key=lambda lab: index[lab]):
        spec = boundary_specs[v]
        if spec.kind != LANGEVIN:
            spec = ReservoirSpec.langevin(spec.temperature, spec.coupling)
        boundary.append((index[v], len(reservoirs)))
        reservoirs.append(spec)
    e = tuple((index[i], index[j]) for i, j in edges)
    topo = LatticeTopology(len(labels), e, tuple(boundary), "general", labels=tuple(labels))
    return SystemConfig(topo, onsite, pair, tuple(reservoirs))


def diamond_fixture(
    onsite: PolynomialPotential | None = None,
    pair: PolynomialPotential | None = None,
    T: tuple[float, float] = (1.0, 1.0),
    lam: float = 1.0,
) -> SystemConfig:
    """Four harmonic oscillators on a square, baths on two opposite corners.

    Vertices ``1..4`` with edges ``1-2, 2-3, 3-4, 4-1`` and baths on 1 and 3.
    The reflection swapping 2 and 4 commutes with the dynamics, so the
    antisymmetric coordinate ``y = q_2 - q_4`` (with momentum ``p_2 - p_4``)
    obeys ``y'' = -(a + 2k) y`` for ``U1 = a x^2/2``, ``U2 = k x^2/2``: an
    undamped, unforced oscillator.  Every value of its conserved energy
    labels a distinct invariant measure.
    """
    onsite = onsite or PolynomialPotential.harmonic(1.0)
    pair = pair or PolynomialPotential.harmonic(1.0)
    specs = {1: ReservoirSpec.langevin(T[0], lam), 3: ReservoirSpec.langevin(T[1], lam)}
    return build_graph([(1, 2), (2, 3), (3, 4), (4, 1)], specs, onsite, pair)


# ---------------------------------------------------------------------------
# Energies
# ---------------------------------------------------------------------------


def _edge_arrays(config: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    if not config.topology.edges:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    e = np.asarray(config.topology.edges, dtype=int)
    return e[:, 0], e[:, 1]


def potential_energy(config: SystemConfig, q) -> np.ndarray:
    """``V(q) = sum_i U1(q_i) + sum_{(i,j) in E} U2(q_i - q_j)``; leading axes broadcast."""
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != config.n:
        raise ValueError(f"q has {q.shape[-1]} sites, config has {config.n}")
    ei, ej = _edge_arrays(config)
    v = config.onsite(q).sum(axis=-1)
    if ei.size:
        v = v + config.pair(q[..., ei] - q[..., ej]).sum(axis=-1)
    return v


def potential_gradient(config: SystemConfig, q) -> np.ndarray:
    """``dV/dq_i`` assembled per vertex."""
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != config.n:
        raise ValueError(f"q has {q.shape[-1]} sites, config has {config.n}")
    grad = config.onsite.derivative()(q)
    ei, ej = _edge_arrays(config)
    if ei.size:
        f = config.pair.derivative()(q[..., ei] - q[..., ej])
        grad = np.array(grad, dtype=float, copy=True)
        g = np.moveaxis(grad, -1, 0)
        np.add.at(g, ei, np.moveaxis(f, -1, 0))
        np.subtract.at(g, ej, np.moveaxis(f, -1, 0))
    return grad


def hamiltonian(config: SystemConfig, state: SystemState) -> np.ndarray:
    return 0.5 * np.sum(state.p**2, axis=-1) + potential_energy(config, state.q)


def total_energy_G(config: SystemConfig, state: SystemState) -> np.ndarray:
    """``G = sum_b r_b^2/2 + sum_i p_i^2/2 + V(q)``; equals ``H`` without auxiliaries."""
    return 0.5 * np.sum(state.r**2, axis=-1) + hamiltonian(config, state)


def hessian_at(config: SystemConfig, q) -> np.ndarray:
    """Dense Hessian of ``V`` at a single configuration ``q``."""
    q = np.asarray(q, dtype=float)
    n = config.n
    h = np.diag(config.onsite.derivative(2)(q))
    u2 = config.pair.derivative(2)
    for i, j in config.topology.edges:
        k = u2(q[i] - q[j])
        h[i, i] += k
        h[j, j] += k
        h[i, j] -= k
        h[j, i] -= k
    return h.reshape(n, n)


# ---------------------------------------------------------------------------
# Structural assumptions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class H1Report:
    k1: int
    k2: int
    onsite_confining: bool
    pair_confining: bool
    ordering_ok: bool
    hessian_bound_ok: bool

    @property
    def confining_ok(self) -> bool:
        return self.onsite_confining and self.pair_confining

    @property
    def holds(self) -> bool:
        return self.confining_ok and self.ordering_ok

    def to_dict(self) -> dict:
        return {
            "k1": self.k1,
            "k2": self.k2,
            "ordering_ok": self.ordering_ok,
            "confining_ok": self.confining_ok,
            "onsite_confining": self.onsite_confining,
            "pair_confining": self.pair_confining,
            "hessian_bound_ok": self.hessian_bound_ok,
            "holds": self.holds,
        }


def check_H1(onsite: PolynomialPotential, pair: PolynomialPotential) -> H1Report:
    """Growth-at-infinity check for polynomial potentials.

    A polynomial grows like ``|x|^k`` with the right gradient asymptotics iff
    it has even degree ``k`` and positive leading coefficient; the Hessian
    bound ``|U''| <= (C + D V)^(1 - 2/k)`` then follows since ``U''`` has
    degree ``k - 2``.  The report also flags ``k2 >= k1 >= 2``.
    """
    k1, k2 = onsite.degree, pair.degree
    c1, c2 = onsite.is_confining, pair.is_confining
    return H1Report(
        k1=k1,
        k2=k2,
        onsite_confining=c1,
        pair_confining=c2,
        ordering_ok=k2 >= k1 >= 2,
        hessian_bound_ok=c1 and c2,
    )


@dataclass(frozen=True)
class H2Report:
    holds: bool
    m0_max: int | None
    probe_m0: tuple[int | None, ...] = ()

    def to_dict(self) -> dict:
        return {"holds": self.holds, "m0_max": self.m0_max, "probe_m0": list(self.probe_m0)}


def _smallest_m0(pair: PolynomialPotential, x: float) -> int | None:
    # A^(m)(x) = U2^(m+1)(x) for scalar coordinates
    for m in range(1, max(pair.degree, 1)):
        if pair.derivative(m + 1)(x) != 0.0:
            return m
    return None


def check_H2(pair: PolynomialPotential, x_probe: Sequence[float] | None = None) -> H2Report:
    """Non-degeneracy of the pair coupling for scalar coordinates.

    With ``d = 1`` the rank condition reads: at every ``x`` some derivative
    of order ``>= 2`` of ``U2`` is nonzero.  For a polynomial of degree
    ``k2 >= 2`` the ``k2``-th derivative is a nonzero constant, so the
    condition holds everywhere with uniform ``m0 = k2 - 1``.  Optional probe
    points report the pointwise smallest ``m0``.
    """
    k2 = pair.degree
    holds = k2 >= 2
    probe = tuple(_smallest_m0(pair, float(x)) for x in (x_probe or ()))
    return H2Report(holds=holds, m0_max=k2 - 1 if holds else None, probe_m0=probe)


def config_from_dict(d: Mapping) -> SystemConfig:
    """Inverse of :meth:`SystemConfig.to_dict`."""
    t = d["topology"]
    topo = LatticeTopology(
        int(t["vertex_count"]),
        tuple(tuple(e) for e in t["edges"]),
        tuple(tuple(b) for b in t["boundary"]),
        t["kind"],
        tuple(t.get("shape", ())),
    )
    res = tuple(ReservoirSpec(r["T"], r["lambda"], r["gamma"], r["kind"]) for r in d["reservoirs"])
    return SystemConfig(topo, PolynomialPotential(tuple(d["onsite"])), PolynomialPotential(tuple(d["pair"])), res)

