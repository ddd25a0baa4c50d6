"""Local energies, heat flows, entropy production and related weights.

Indexing follows the lattice physics: local energies ``H_1..H_n`` (one per
site of a chain, or per hyperplane ``i_1 = const`` of a hypercube) and flows
``Phi_0..Phi_n`` where ``Phi_k`` carries energy from cell ``k`` to cell
``k + 1`` and ``Phi_0``/``Phi_n`` are the bath-boundary currents.  A positive
flow always means transport towards higher index, so in a steady state with
a hot left bath all flows are positive.

Every function broadcasts over leading batch axes of the state arrays.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .model import MARKOVIAN_AUX, SystemConfig, SystemState, total_energy_G

_MAX_LOG = float(np.log(np.finfo(float).max))


class ObservableError(ValueError):
    pass


def _cell_index(config: SystemConfig) -> np.ndarray:
    topo = config.topology
    if topo.kind == "general":
        return np.arange(topo.vertex_count)
    return topo.planes()


def _cell_count(config: SystemConfig) -> int:
    topo = config.topology
    return topo.vertex_count if topo.kind == "general" else topo.plane_count


def _edges(config):
    if not config.topology.edges:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    e = np.asarray(config.topology.edges)
    return e[:, 0], e[:, 1]


def local_energies(config: SystemConfig, state: SystemState) -> np.ndarray:
    """Local energies ``H_1..H_P`` with ``sum_k H_k = H(p, q)`` exactly.

    Each cell holds the kinetic and on-site energy of its sites, every pair
    term internal to the cell, and half of every pair term shared with a
    neighbouring cell.  For a chain the cells are the sites; for a
    hypercube they are the hyperplanes ``i_1 = k``; for a general graph they
    are the vertices.
    """
    cells = _cell_index(config)
    P = _cell_count(config)
    site = 0.5 * state.p**2 + config.onsite(state.q)
    out = np.zeros(site.shape[:-1] + (P,))
    for k in range(P):
        out[..., k] = site[..., cells == k].sum(axis=-1)
    ei, ej = _edges(config)
    if ei.size:
        u = config.pair(state.q[..., ei] - state.q[..., ej])
        ci, cj = cells[ei], cells[ej]
        same = ci == cj
        for k in range(P):
            w = 1.0 * (same & (ci == k)) + 0.5 * (~same & (ci == k)) + 0.5 * (~same & (cj == k))
            if np.any(w):
                out[..., k] += u @ w
    return out


@dataclass(frozen=True)
class FlowSet:
    """Heat flows; ``values[..., k]`` is ``Phi_k``.

    For chains and hypercubes ``labels`` are ``Phi_0..Phi_P``; for general
    graphs they are per-bath currents ``J_b`` into reservoir ``b``.
    """

    values: np.ndarray
    labels: tuple[str, ...]

    def __getitem__(self, k):
        return self.values[..., k]

    def __len__(self):
        return self.values.shape[-1]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def _bath_currents(config: SystemConfig, state: SystemState) -> np.ndarray:
    """Energy current from the system into each attachment's reservoir."""
    cols = []
    for a, (v, res) in enumerate(config.attachments()):
        if res.kind == MARKOVIAN_AUX:
            cols.append(res.coupling * state.r[..., a] * state.p[..., v])
        else:
            cols.append(res.coupling * (state.p[..., v] ** 2 - res.temperature))
    return np.stack(cols, axis=-1)


def heat_flows(config: SystemConfig, state: SystemState) -> FlowSet:
    """Heat flows ``Phi_0..Phi_P``.

    Interior flows are ``sum (p_i + p_j)/2 * U2'(q_i - q_j)`` over edges from
    cell ``k-1`` to cell ``k``.  Auxiliary-variable baths give
    ``Phi_0 = -lam r_1 p_1`` and ``Phi_n = lam r_n p_n``; Langevin baths use the
    drift part of the bath power, ``lam (p_i^2 - T_i)`` per site (into the
    bath).  General graphs return one current per bath.
    """
    J = _bath_currents(config, state)
    topo = config.topology
    if topo.kind == "general":
        return FlowSet(J, tuple(f"J_{b + 1}" for b in range(J.shape[-1])))
    P = topo.plane_count
    cells = topo.planes()
    out = np.zeros(state.p.shape[:-1] + (P + 1,))
    for a, (_, b) in enumerate(topo.boundary):
        if b == 0:
            out[..., 0] -= J[..., a]
        else:
            out[..., P] += J[..., a]
    ei, ej = _edges(config)
    if ei.size:
        ci, cj = cells[ei], cells[ej]
        cross = ci != cj
        if np.any(cross):
            ei, ej, ci = ei[cross], ej[cross], ci[cross]
            du = config.pair.derivative()(state.q[..., ei] - state.q[..., ej])
            term = 0.5 * (state.p[..., ei] + state.p[..., ej]) * du
            for k in range(1, P):
                sel = ci == k - 1
                out[..., k] = term[..., sel].sum(axis=-1)
    return FlowSet(out, tuple(f"Phi_{k}" for k in range(P + 1)))


def _delta_beta(config: SystemConfig) -> float:
    """``1/T_right - 1/T_left``; rejects zero temperatures."""
    t_left, t_right = config.end_temperatures()
    if t_left <= 0 or t_right <= 0:
        raise ObservableError("entropy production needs strictly positive bath temperatures")
    return 1.0 / t_right - 1.0 / t_left


def entropy_production(config: SystemConfig, state: SystemState, j: int | None = None) -> np.ndarray:
    """Entropy production ``sigma_j = (1/T_n - 1/T_1) Phi_j``.

    With a hot left bath (``T_1 > T_n``) the mean flow is positive, so the
    mean of ``sigma_j`` is nonnegative.  At ``T_1 = T_n`` the prefactor is
    exactly zero.  For general graphs (``j=None``) the bath form
    ``sum_b J_b / T_b`` is returned.
    """
    if config.topology.kind == "general":
        if j is not None:
            raise ObservableError("general graphs only define the total bath entropy production")
        temps = np.array([res.temperature for _, res in config.attachments()])
        if np.any(temps <= 0):
            raise ObservableError("entropy production needs strictly positive bath temperatures")
        return (_bath_currents(config, state) / temps).sum(axis=-1)
    if j is None:
        raise ObservableError("flow index j is required for chains and hypercubes")
    db = _delta_beta(config)
    flows = heat_flows(config, state)
    if not 0 <= j < len(flows):
        raise ObservableError(f"flow index {j} out of range 0..{len(flows) - 1}")
    if db == 0.0:
        return np.zeros(np.shape(flows[j]))
    return db * flows[j]


def boundary_entropy_production(config: SystemConfig, state: SystemState, left: str = "Phi_0") -> np.ndarray:
    """Bath-side entropy production ``Phi_n/T_n - Phi_left/T_1``.

    ``left`` selects the left current: ``"Phi_0"`` (bath into first cell) or
    ``"Phi_1"`` (first interior bond).
    """
    t_left, t_right = config.end_temperatures()
    if t_left <= 0 or t_right <= 0:
        raise ObservableError("entropy production needs strictly positive bath temperatures")
    flows = heat_flows(config, state)
    k = {"Phi_0": 0, "Phi_1": 1}[left]
    return flows[len(flows) - 1] / t_right - flows[k] / t_left


def two_temperature_weight(config: SystemConfig, state: SystemState, j: int) -> np.ndarray:
    """``R_j``: cells ``1..j`` and the left auxiliaries at ``T_1``, the rest at ``T_n``."""
    t_left, t_right = config.end_temperatures()
    H = local_energies(config, state)
    P = H.shape[-1]
    if not 0 <= j <= P:
        raise ObservableError(f"R index {j} out of range 0..{P}")
    left = H[..., :j].sum(axis=-1)
    right = H[..., j:].sum(axis=-1)
    if config.kind == MARKOVIAN_AUX:
        for a, (_, b) in enumerate(config.topology.boundary):
            e = 0.5 * state.r[..., a] ** 2
            if b == 0:
                left = left + e
            else:
                right = right + e
    return left / t_left + right / t_right


def log_lyapunov_weight(config: SystemConfig, state: SystemState, theta: float) -> np.ndarray:
    """``log W_theta = theta * G``."""
    tmax = float(config.temperatures().max())
    if theta < 0:
        raise ObservableError("theta must be nonnegative")
    if tmax > 0 and theta >= 1.0 / tmax:
        warnings.warn(
            f"theta={theta} outside (0, 1/max T) = (0, {1.0 / tmax:.4g})", RuntimeWarning, stacklevel=2
        )
    return theta * total_energy_G(config, state)


def lyapunov_weight(config: SystemConfig, state: SystemState, theta: float, return_flag: bool = False):
    """``W_theta = exp(theta * G)``, saturating at the largest float.

    With ``return_flag=True`` also returns a boolean array marking saturated
    entries.
    """
    lw = log_lyapunov_weight(config, state, theta)
    saturated = lw > _MAX_LOG
    w = np.exp(np.minimum(lw, _MAX_LOG))
    if return_flag:
        return w, saturated
    return w


# ---------------------------------------------------------------------------
# Named observables (CSV column contract)
# ---------------------------------------------------------------------------

_NAME = re.compile(r"^(G|H|H_(\d+)|Phi_(\d+)|sigma_(\d+)|sigma_b|R_(\d+)|q_(\d+)|p_(\d+)|r_(\d+)|W_theta\(([^)]+)\))$")


def validate_observable_names(config: SystemConfig, names) -> None:
    """Raise :class:`ObservableError` unless every name evaluates on ``config``."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        evaluate_observables(config, SystemState.zeros(config), names)


def evaluate_observables(config: SystemConfig, state: SystemState, names) -> dict[str, np.ndarray]:
    """Evaluate named observables on a (batched) state.

    Names: ``G``, ``H``, ``H_i`` (1-based cell), ``Phi_k``, ``sigma_k``,
    ``sigma_b``, ``R_k``, ``W_theta(x)``, and raw coordinates ``q_i``,
    ``p_i``, ``r_b`` (1-based).  On general graphs ``Phi_k`` is the current
    into bath ``k + 1`` and ``sigma_0`` the total bath entropy production.
    """
    cache: dict = {}

    def flows():
        if "flows" not in cache:
            cache["flows"] = heat_flows(config, state).values
        return cache["flows"]

    def energies():
        if "H" not in cache:
            cache["H"] = local_energies(config, state)
        return cache["H"]

    out = {}
    for name in names:
        m = _NAME.match(name)
        if not m:
            raise ObservableError(f"unknown observable {name!r}")
        if name == "G":
            val = total_energy_G(config, state)
        elif name == "H":
            val = energies().sum(axis=-1)
        elif m.group(2):
            i = int(m.group(2))
            if not 1 <= i <= energies().shape[-1]:
                raise ObservableError(f"{name}: cell index out of range")
            val = energies()[..., i - 1]
        elif m.group(3):
            k = int(m.group(3))
            if k >= flows().shape[-1]:
                raise ObservableError(f"{name}: flow index out of range")
            val = flows()[..., k]
        elif m.group(4):
            k = int(m.group(4))
            if config.topology.kind == "general":
                if k != 0:
                    raise ObservableError("general graphs define only sigma_0 (total bath form)")
                val = entropy_production(config, state, None)
            else:
                if k >= flows().shape[-1]:
                    raise ObservableError(f"{name}: flow index out of range")
                db = _delta_beta(config)
                val = db * flows()[..., k] if db != 0.0 else np.zeros(flows().shape[:-1])
        elif name == "sigma_b":
            val = boundary_entropy_production(config, state)
        elif m.group(5):
            val = two_temperature_weight(config, state, int(m.group(5)))
        elif m.group(6) or m.group(7) or m.group(8):
            arr = {6: state.q, 7: state.p, 8: state.r}
            g = 6 if m.group(6) else 7 if m.group(7) else 8
            i = int(m.group(g))
            if not 1 <= i <= arr[g].shape[-1]:
                raise ObservableError(f"{name}: coordinate index out of range")
            val = arr[g][..., i - 1]
        else:
            val = lyapunov_weight(config, state, float(m.group(9)))
        out[name] = np.asarray(val, dtype=float)
    return out


# ---------------------------------------------------------------------------
# Time integrals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EntropyAccumulator:
    """Running ``int_0^t sigma_j ds`` and ``(1/t) int_0^t sigma_j ds`` at sample times."""

    j: int
    times: np.ndarray
    integral: np.ndarray

    @property
    def elapsed(self) -> np.ndarray:
        return self.times - self.times[0]

    @property
    def average(self) -> np.ndarray:
        el = self.elapsed
        avg = np.empty_like(self.integral)
        avg[0] = self.integral[0] if el.size == 1 else np.nan
        with np.errstate(invalid="ignore", divide="ignore"):
            avg[1:] = self.integral[1:] / el[1:]
        return avg

    def reset(self) -> "EntropyAccumulator":
        return EntropyAccumulator(self.j, self.times[-1:].copy(), np.zeros(1))


def accumulate_series(times, values) -> np.ndarray:
    """Cumulative trapezoidal integral starting at zero."""
    return cumulative_trapezoid(np.asarray(values, dtype=float), np.asarray(times, dtype=float), initial=0.0)


def accumulate_entropy(record, j: int, delta_beta: float | None = None) -> EntropyAccumulator:
    """Trapezoidal accumulation of ``sigma_j`` along a trajectory record.

    Uses the ``sigma_j`` series if recorded, otherwise ``Phi_j`` scaled by
    ``delta_beta`` (which must then be given).
    """
    obs = record.observable_samples
    key = f"sigma_{j}"
    if key in obs:
        series = obs[key]
    elif f"Phi_{j}" in obs and delta_beta is not None:
        series = delta_beta * obs[f"Phi_{j}"]
    else:
        raise ObservableError(f"record lacks {key!r} (or Phi_{j} with delta_beta)")
    return EntropyAccumulator(j, np.asarray(record.sample_times), accumulate_series(record.sample_times, series))


__all__ = [
    "FlowSet",
    "EntropyAccumulator",
    "ObservableError",
    "local_energies",
    "heat_flows",
    "entropy_production",
    "boundary_entropy_production",
    "two_temperature_weight",
    "lyapunov_weight",
    "log_lyapunov_weight",
    "evaluate_observables",
    "validate_observable_names",
    "accumulate_entropy",
    "accumulate_series",
]
