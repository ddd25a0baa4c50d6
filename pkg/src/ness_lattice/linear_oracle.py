"""Exact stationary statistics of systems with quadratic potentials.

With quadratic ``U1`` and ``U2`` the SDE is linear, ``dx = A x dt + B dW``,
with state ordering ``(q, p, r)``.  The stationary covariance solves
``A S + S A^T + B B^T = 0``; every quadratic observable ``x^T M x + c`` then
has exact mean ``tr(M S) + c``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.linalg import expm, solve_continuous_lyapunov

from .dynamics import coordinate_names, diffusion_amplitudes
from .model import LANGEVIN, MARKOVIAN_AUX, SystemConfig, SystemState, hessian_at
from .observables import evaluate_observables

HURWITZ_TOL = 1e-9
KRONECKER_MAX_DIM = 40


class NonQuadraticError(ValueError):
    pass


class NonUniqueError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LinearModel:
    A: np.ndarray
    B: np.ndarray
    names: tuple[str, ...] = ()
    config: SystemConfig | None = field(default=None, repr=False)

    def __post_init__(self):
        A, B = np.asarray(self.A, float), np.asarray(self.B, float).reshape(np.shape(self.A)[0], -1)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def noise_dim(self) -> int:
        return self.B.shape[1]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.A)

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist(), "names": list(self.names)}


def assemble_linear(config: SystemConfig) -> LinearModel:
    """Drift and noise matrices of a quadratic-potential system."""
    for label, pot in (("onsite", config.onsite), ("pair", config.pair)):
        if pot.degree > 2:
            raise NonQuadraticError(f"{label} potential has degree {pot.degree}; a linear model needs degree <= 2")
        c = pot.coefficients
        if len(c) > 1 and c[1] != 0:
            raise NonQuadraticError(f"{label} potential has a linear term; the drift would be affine")
    n, m = config.n, config.aux_count
    D = 2 * n + m
    A = np.zeros((D, D))
    A[:n, n : 2 * n] = np.eye(n)
    A[n : 2 * n, :n] = -hessian_at(config, np.zeros(n))
    for a, (v, res) in enumerate(config.attachments()):
        if res.kind == MARKOVIAN_AUX:
            A[n + v, 2 * n + a] -= res.coupling
            A[2 * n + a, 2 * n + a] = -res.rate
            A[2 * n + a, n + v] = res.coupling
        elif res.kind == LANGEVIN:
            A[n + v, n + v] -= res.coupling
    amps = diffusion_amplitudes(config)
    B = np.zeros((D, len(amps)))
    for col, (_, idx, amp) in enumerate(amps):
        B[idx, col] = amp
    return LinearModel(A, B, tuple(coordinate_names(config)), config)


def is_hurwitz(A: np.ndarray, tol: float = HURWITZ_TOL) -> bool | None:
    """True if all eigenvalues have real part < -tol, False if some > tol, else None."""
    re = np.linalg.eigvals(A).real
    if np.all(re < -tol):
        return True
    if np.any(re > tol):
        return False
    return None


@dataclass(frozen=True, eq=False)
class StationaryCovariance:
    sigma: np.ndarray | None
    unique: bool
    residual: float
    classification: str
    method: str = "kronecker"

    def to_dict(self) -> dict:
        return {
            "sigma": None if self.sigma is None else self.sigma.tolist(),
            "unique": self.unique,
            "residual": self.residual,
            "classification": self.classification,
            "method": self.method,
        }


def lyapunov_kronecker(A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Solve ``A S + S A^T + Q = 0`` as one dense linear system."""
    D = A.shape[0]
    eye = np.eye(D)
    L = np.kron(eye, A) + np.kron(A, eye)
    s = np.linalg.solve(L, -Q.reshape(-1, order="F"))
    S = s.reshape(D, D, order="F")
    return 0.5 * (S + S.T)


def stationary_covariance(model: LinearModel, method: str | None = None) -> StationaryCovariance:
    """Stationary covariance; ``method`` is ``kronecker``, ``bartels_stewart`` or auto."""
    A = model.A
    Q = model.B @ model.B.T
    h = is_hurwitz(A)
    if h is not True:
        cls = "divergent" if h is False else "inconclusive (marginal spectrum)"
        return StationaryCovariance(None, False, float("nan"), cls, "none")
    if method is None:
        method = "kronecker" if model.state_dim <= KRONECKER_MAX_DIM else "bartels_stewart"
    if method == "kronecker":
        S = lyapunov_kronecker(A, Q)
    elif method == "bartels_stewart":
        S = solve_continuous_lyapunov(A, -Q)
        S = 0.5 * (S + S.T)
    else:
        raise ValueError(f"unknown method {method!r}")
    res = float(np.abs(A @ S + S @ A.T + Q).max())
    return StationaryCovariance(S, True, res, "unique", method)


@dataclass(frozen=True)
class ControllabilityReport:
    rank: int
    state_dim: int
    singular_values: tuple[float, ...]
    uncontrollable_modes: int

    @property
    def full(self) -> bool:
        return self.rank == self.state_dim

    @property
    def deficiency(self) -> int:
        return self.state_dim - self.rank

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "state_dim": self.state_dim,
            "full": self.full,
            "deficiency": self.deficiency,
            "uncontrollable_modes": self.uncontrollable_modes,
        }


def controllability_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    D = A.shape[0]
    blocks = [B]
    for _ in range(D - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks) if B.size else np.zeros((D, 0))


def controllability_rank(model: LinearModel) -> ControllabilityReport:
    """SVD rank of ``[B, AB, ..., A^{D-1} B]`` with threshold ``D eps s_max``.

    ``A`` is scaled by its norm first; this leaves the rank unchanged and
    keeps the Krylov blocks of comparable size.  ``uncontrollable_modes``
    counts the eigenvalues of ``A`` on the uncontrollable subspace, a
    complex-conjugate pair counting once (one oscillator mode).
    """
    D = model.state_dim
    if model.noise_dim == 0 or not np.any(model.B):
        return ControllabilityReport(0, D, (), _count_modes(model.A))
    scale = max(np.abs(model.A).max(), 1e-300)
    C = controllability_matrix(model.A / scale, model.B / np.abs(model.B).max())
    U, s, _ = np.linalg.svd(C, full_matrices=True)
    tol = D * np.finfo(float).eps * s[0]
    rank = int(np.sum(s > tol))
    modes = _count_modes(U[:, rank:].T @ model.A.T @ U[:, rank:]) if rank < D else 0
    return ControllabilityReport(rank, D, tuple(float(v) for v in s), modes)


def _count_modes(M: np.ndarray) -> int:
    if M.size == 0:
        return 0
    ev = np.linalg.eigvals(M)
    return int(np.sum(ev.imag >= -1e-12 * max(1.0, np.abs(ev).max())))


# ---------------------------------------------------------------------------
# Quadratic observables
# ---------------------------------------------------------------------------


def quadratic_form(config: SystemConfig, name: str) -> tuple[np.ndarray, float]:
    """``(M, c)`` with ``f(x) = x^T M x + c`` for a quadratic observable ``name``.

    Recovered by polarization on basis vectors, so it is exact whenever the
    observable is a quadratic polynomial of the state.
    """
    n, m = config.n, config.aux_count
    D = 2 * n + m
    E = np.eye(D)
    pts = [np.zeros(D)] + list(E)
    pairs = [(a, b) for a in range(D) for b in range(a + 1, D)]
    pts += [E[a] + E[b] for a, b in pairs]
    X = np.array(pts)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        f = evaluate_observables(config, SystemState.from_vector(config, X), [name])[name]
    c = float(f[0])
    diag = f[1 : D + 1] - c
    M = np.diag(diag)
    for k, (a, b) in enumerate(pairs):
        M[a, b] = M[b, a] = 0.5 * (f[D + 1 + k] - diag[a] - diag[b] - c)
    return M, c


def exact_mean(cov: StationaryCovariance, config: SystemConfig, name: str) -> float:
    """Exact stationary mean of a quadratic observable."""
    if not cov.unique:
        raise NonUniqueError(f"stationary covariance is not unique ({cov.classification})")
    M, c = quadratic_form(config, name)
    return float(np.sum(M * cov.sigma) + c)


def exact_flux(model: LinearModel, cov: StationaryCovariance, config: SystemConfig | None = None, j: int = 0) -> float:
    """Exact stationary mean of ``Phi_j``."""
    config = config if config is not None else model.config
    return exact_mean(cov, config, f"Phi_{j}")


def exact_flux_table(config: SystemConfig) -> dict:
    model = assemble_linear(config)
    cov = stationary_covariance(model)
    if not cov.unique:
        raise NonUniqueError(cov.classification)
    from .observables import heat_flows

    count = len(heat_flows(config, SystemState.zeros(config)))
    return {f"Phi_{j}": exact_flux(model, cov, config, j) for j in range(count)}


def exact_correlation(model: LinearModel, cov: StationaryCovariance, M: np.ndarray, t) -> np.ndarray:
    """Stationary ``Cov(f(x_t), f(x_0))`` for ``f = x^T M x`` (Gaussian, Isserlis)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    S = cov.sigma
    out = np.empty(t.shape)
    for k, tk in enumerate(t):
        C = expm(model.A * tk) @ S
        out[k] = 2.0 * np.trace(M @ C @ M @ C.T)
    return out


def exact_correlation_integral(model: LinearModel, cov: StationaryCovariance, config: SystemConfig, name: str) -> float:
    """``int_0^inf Cov(f(x_t), f(x_0)) dt`` for a quadratic observable."""
    M, _ = quadratic_form(config, name)
    M = 0.5 * (M + M.T)
    gap = slowest_rate(model)
    upper = 60.0 / gap
    val, _ = quad(lambda s: exact_correlation(model, cov, M, s)[0], 0.0, upper, limit=400)
    return float(val)


def slowest_rate(model: LinearModel) -> float:
    """Smallest ``|Re lambda|`` over the spectrum of ``A``."""
    return float(np.min(np.abs(np.linalg.eigvals(model.A).real)))


# ---------------------------------------------------------------------------
# The integrator as a linear map
# ---------------------------------------------------------------------------


def scheme_step_map(config: SystemConfig, spec) -> tuple[np.ndarray, np.ndarray]:
    """``(F, G)`` with one integrator step ``x' = F x + G z`` for quadratic potentials.

    Read off the compiled kernel by stepping basis vectors with zero noise
    and zero states with unit noise vectors.
    """
    from . import _kernels as K
    from .dynamics import _compile, _scheme_code

    assemble_linear(config)  # rejects non-quadratic potentials
    c = _compile(config, float(spec.dt))
    code = _scheme_code(spec)
    width = c.noise_width(code)
    D = 2 * config.n + config.aux_count

    def one(x, z):
        x = np.array(x, dtype=float)
        K.run(x, 0, 1, 1, False, spec.dt, code, z.reshape(1, -1), c.n, c.c1, c.d1, c.c2, c.d2, c.ei, c.ej,
              c.aux_v, c.aux_lam, c.aux_gam, c.lang_v, c.lang_lam, c.blk_idx, c.blk_k, c.blk_phi, c.blk_l,
              c.em_idx, c.em_amp, 0.0, np.empty((0, D)))
        return x

    zero_z = np.zeros(width)
    F = np.column_stack([one(e, zero_z) for e in np.eye(D)])
    G = np.column_stack([one(np.zeros(D), e) for e in np.eye(width)]) if width else np.zeros((D, 0))
    return F, G


def scheme_stationary_covariance(config: SystemConfig, spec) -> np.ndarray:
    """Exact stationary covariance of the discretized chain ``x' = F x + G z``."""
    from scipy.linalg import solve_discrete_lyapunov

    F, G = scheme_step_map(config, spec)
    if np.max(np.abs(np.linalg.eigvals(F))) >= 1.0:
        raise NonUniqueError("discrete map is not contracting")
    S = solve_discrete_lyapunov(F, G @ G.T)
    return 0.5 * (S + S.T)
