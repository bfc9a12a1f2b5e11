"""Online control-experiment design for T-persistently exciting data.

The designer drives an opaque plant step by step, choosing each input so the
row rank of the stacked data matrix G_T(t) grows, until G_T(L) is certified
full row rank.  Input selection follows a three-way branch per step:

* membership holds and the kernel-direction gradient is nonzero: pick the
  input along the gradient of the left-kernel scalar ("step8");
* gradient vanishes: pick a small input that raises the rank of the input
  Hankel matrix of depth n+k ("step11");
* membership fails: any small input raises the rank ("step14").
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .hankel import (DEFAULT_REL_RANK_TOL, DataMatrices, RankCertificate,
                     build_data_matrices, hankel, min_data_length,
                     rank_certificate)
from .systems import BilinearSystem, DivergenceError, Trajectory, simulate, step

MEMBERSHIP_TOL = 1e-8
GRADIENT_TOL = 1e-10


class NonTerminationError(RuntimeError):
    """Experiment hit the step cap before reaching full row rank."""

    def __init__(self, certificate: RankCertificate, steps: int):
        self.certificate = certificate
        self.steps = steps
        super().__init__(
            f"experiment did not terminate in {steps} steps "
            f"(rank {certificate.rank}/{certificate.shape[0]})")


class KernelContradictionError(RuntimeError):
    """Left kernel had no direction with nonzero tail blocks.

    Signals a violated structural guarantee, i.e. a tolerance failure or a
    membership misclassification upstream.
    """


class DegenerateExcitationError(RuntimeError):
    """Random fallback draws failed to raise the input Hankel rank."""


class Plant(Protocol):
    """Opaque stepper interface: the designer never sees system matrices."""

    def reset(self) -> np.ndarray: ...

    def step(self, u: np.ndarray) -> np.ndarray: ...


class SimulatedPlant:
    """Plant backed by a known bilinear system (for tests and the CLI)."""

    def __init__(self, sys: BilinearSystem, x0: np.ndarray | None = None):
        self._sys = sys
        self._x0 = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float)
        self._x = self._x0.copy()
        self._t = 0

    @property
    def m(self) -> int:
        return self._sys.m

    @property
    def n(self) -> int:
        return self._sys.n

    def reset(self) -> np.ndarray:
        self._x = self._x0.copy()
        self._t = 0
        return self._x.copy()

    def step(self, u: np.ndarray) -> np.ndarray:
        self._x = step(self._sys, self._x, u)
        self._t += 1
        norm = float(np.linalg.norm(self._x))
        if not np.isfinite(norm) or norm > 1e12:
            raise DivergenceError(self._t, norm)
        return self._x.copy()


@dataclass(frozen=True)
class ExperimentConfig:
    T: int
    epsilon: float = 1e-2
    rel_rank_tol: float = DEFAULT_REL_RANK_TOL
    max_steps: int = 0  # 0: choose from min_data_length at run time
    seed: int = 0
    max_rescales: int = 6

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class KernelDirection:
    """Unit left-null vector of G_T(t) split into its named blocks."""

    xi: np.ndarray    # (n,)
    eta: np.ndarray   # (m T,)
    chi: np.ndarray   # (m n T,)

    def tail_norm(self, n: int, m: int, T: int) -> float:
        return float(np.linalg.norm(
            np.concatenate([self.eta[m * (T - 1):], self.chi[m * n * (T - 1):]])))


@dataclass(frozen=True)
class ExperimentResult:
    trajectory: Trajectory
    dm: DataMatrices
    certificate: RankCertificate
    log: list[dict]
    epsilon: float
    seed: int

    @property
    def L(self) -> int:
        return self.trajectory.length


def _sphere_input(rng: np.random.Generator, m: int, radius: float) -> np.ndarray:
    v = rng.standard_normal(m)
    nv = np.linalg.norm(v)
    while nv < 1e-14:
        v = rng.standard_normal(m)
        nv = np.linalg.norm(v)
    return v * (radius / nv)


def membership_check(states: np.ndarray, inputs: np.ndarray, krons: np.ndarray,
                     T: int, tol: float = MEMBERSHIP_TOL) -> tuple[bool, float]:
    """Test whether the most recent window lies in the image of the depth-(T-1)
    data matrix built from everything before it.

    ``states`` holds x(0..t), ``inputs`` u(0..t-1), ``krons`` w(0..t-1) with
    t >= T.  Returns (membership, least-squares residual norm).
    """
    t = inputs.shape[0]
    if t < T:
        raise ValueError(f"need t >= T, got t={t}, T={T}")
    v_parts = [states[t - T + 1]]
    m_parts = [hankel(states[: t - T + 1], 1)]
    if T > 1:
        v_parts += [inputs[t - T + 1:t].reshape(-1), krons[t - T + 1:t].reshape(-1)]
        m_parts += [hankel(inputs[: t - 1], T - 1), hankel(krons[: t - 1], T - 1)]
    v = np.concatenate(v_parts)
    M = np.vstack(m_parts)
    coeff, *_ = np.linalg.lstsq(M, v, rcond=None)
    residual = float(np.linalg.norm(M @ coeff - v))
    return residual < tol * (1.0 + float(np.linalg.norm(v))), residual


def find_kernel_direction(dm: DataMatrices,
                          rel_tol: float = DEFAULT_REL_RANK_TOL) -> KernelDirection:
    """Left-null direction of G_T(t) maximizing the norm of its last blocks.

    Requires G_T(t) rank deficient; the returned unit vector has
    ``[eta_T; chi_T]`` nonzero whenever the structural guarantee holds.
    """
    n, m, T = dm.n, dm.m, dm.T
    G = dm.GT
    U, sv, _ = np.linalg.svd(G)
    tol = rel_tol * (sv[0] if sv.size else 0.0) * max(G.shape)
    rank = int(np.count_nonzero(sv > tol))
    if rank == G.shape[0]:
        raise ValueError("G_T(t) is full row rank; no kernel direction exists")
    basis = U[:, rank:]  # orthonormal left-null basis
    tail_rows = np.concatenate([
        np.arange(n + m * (T - 1), n + m * T),
        np.arange(n + m * T + m * n * (T - 1), n + m * T + m * n * T),
    ])
    tail = basis[tail_rows, :]
    tu, tsv, tvt = np.linalg.svd(tail, full_matrices=False)
    if tsv.size == 0 or tsv[0] <= 1e-12:
        raise KernelContradictionError(
            "left kernel has zero projection on the (eta_T, chi_T) blocks")
    d = basis @ tvt[0]
    d /= np.linalg.norm(d)
    return KernelDirection(d[:n], d[n:n + m * T], d[n + m * T:])


def select_input(direction: KernelDirection, x_t: np.ndarray,
                 window_x0: np.ndarray, window_u: np.ndarray, window_w: np.ndarray,
                 epsilon: float, tol_g: float = GRADIENT_TOL) -> np.ndarray | None:
    """Input making the left-kernel scalar nonzero, or None for the fallback.

    The scalar is affine in u(t): value c at u(t)=0 plus gradient
    g = eta_T + (x(t) kron I_m)^T chi_T.  Returns (epsilon/2) g/||g|| with the
    sign that avoids cancellation against c, or None when ||g|| <= tol_g.
    """
    n = x_t.shape[0]
    m = window_u.shape[1]
    T = direction.eta.shape[0] // m
    eta_T = direction.eta[m * (T - 1):]
    chi_T = direction.chi[m * n * (T - 1):]
    g = eta_T + chi_T.reshape(n, m).T @ x_t
    gn = float(np.linalg.norm(g))
    if gn <= tol_g:
        return None
    c = float(direction.xi @ window_x0)
    if T > 1:
        c += float(direction.eta[: m * (T - 1)] @ window_u.reshape(-1))
        c += float(direction.chi[: m * n * (T - 1)] @ window_w.reshape(-1))
    sign = 1.0 if c >= 0 else -1.0
    return sign * (epsilon / 2.0) * g / gn


def pe_fallback_input(u_history: np.ndarray, k: int, n: int, epsilon: float,
                      rng: np.random.Generator,
                      rel_tol: float = DEFAULT_REL_RANK_TOL,
                      max_draws: int = 50) -> np.ndarray:
    """Small random input raising the rank of the depth-(n+k) input Hankel matrix.

    Rank increase is generic, so rejection sampling succeeds quickly; 50
    failures indicate degenerate excitation.
    """
    m = u_history.shape[1]
    depth = n + k
    t = u_history.shape[0]
    if t + 1 < depth:
        # Hankel matrix not yet buildable at this depth: any draw is fine
        return _sphere_input(rng, m, epsilon / 2.0)
    if t < depth:
        rank_before = 0
    else:
        cert = rank_certificate(hankel(u_history, depth), rel_tol)
        if cert.full_row_rank:
            raise ValueError("input Hankel matrix is already full row rank")
        rank_before = cert.rank
    for _ in range(max_draws):
        u = _sphere_input(rng, m, epsilon / 2.0)
        extended = np.vstack([u_history, u[None, :]])
        if rank_certificate(hankel(extended, depth), rel_tol).rank > rank_before:
            return u
    raise DegenerateExcitationError(
        f"no rank-increasing input found in {max_draws} draws (depth {depth})")


def _kron_rows(states: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    t = inputs.shape[0]
    return (states[:t, :, None] * inputs[:, None, :]).reshape(t, -1)


def design_experiment(plant: Plant, cfg: ExperimentConfig) -> ExperimentResult:
    """Run the online experiment until G_T(L) is certified full row rank.

    Restarts with epsilon/10 if the simulation diverges or the rank stalls
    for 5x(row count) consecutive steps.
    """
    epsilon = cfg.epsilon
    last_error: Exception | None = None
    for attempt in range(cfg.max_rescales + 1):
        try:
            return _run_experiment(plant, cfg, epsilon, cfg.seed + attempt)
        except (DivergenceError, _RankStall, DegenerateExcitationError) as err:
            last_error = err
            epsilon /= 10.0
    raise last_error


class _RankStall(RuntimeError):
    def __init__(self, certificate):
        self.certificate = certificate
        super().__init__("rank stalled")


def _run_experiment(plant: Plant, cfg: ExperimentConfig, epsilon: float,
                    seed: int) -> ExperimentResult:
    rng = np.random.default_rng(seed)
    T = cfg.T
    x0 = np.asarray(plant.reset(), dtype=float)
    n = x0.shape[0]
    states = [x0]
    inputs: list[np.ndarray] = []
    # seed phase: T random small inputs so that G_T(T) is nonzero
    for _ in range(T):
        u = _sphere_input(rng, _plant_m(plant, n), epsilon / 2.0)
        inputs.append(u)
        states.append(np.asarray(plant.step(u), dtype=float))

    m = inputs[0].shape[0]
    rows = n + m * T + m * n * T
    max_steps = cfg.max_steps or max(10 * min_data_length(n, m, T), 200)
    stall_budget = 5 * rows
    k = 1
    t = T
    log: list[dict] = []
    stall = 0
    last_rank = 0
    while True:
        xs = np.asarray(states)
        us = np.asarray(inputs)
        ws = _kron_rows(xs, us)
        traj = Trajectory(xs, us)
        dm = build_data_matrices(traj, T)
        cert = dm.certificate(cfg.rel_rank_tol)
        if log and log[-1]["rank_after"] is None:
            log[-1]["rank_after"] = cert.rank
        if cert.full_row_rank:
            return ExperimentResult(traj, dm, cert, log, epsilon, seed)
        if cert.rank > last_rank:
            stall = 0
        else:
            stall += 1
            if stall > stall_budget:
                raise _RankStall(cert)
        last_rank = cert.rank
        if t >= max_steps:
            raise NonTerminationError(cert, t)

        while _input_hankel_full_rank(us, n + k, cfg.rel_rank_tol):
            k += 1
        member, residual = membership_check(xs, us, ws, T)
        if member:
            direction = find_kernel_direction(dm, cfg.rel_rank_tol)
            u = select_input(direction, xs[t],
                             xs[t - T + 1], us[t - T + 1:t], ws[t - T + 1:t],
                             epsilon)
            if u is None:
                branch = "step11"
                u = pe_fallback_input(us, k, n, epsilon, rng, cfg.rel_rank_tol)
            else:
                branch = "step8"
        else:
            branch = "step14"
            u = _sphere_input(rng, m, epsilon / 2.0)
        inputs.append(u)
        states.append(np.asarray(plant.step(u), dtype=float))
        t += 1
        log.append({
            "t": t - 1,
            "u_norm": float(np.linalg.norm(u)),
            "branch": branch,
            "membership": bool(member),
            "membership_residual": residual,
            "rank_before": cert.rank,
            "rank_after": None,  # filled at the next certificate
        })


def _plant_m(plant: Plant, n: int) -> int:
    m = getattr(plant, "m", None)
    if m is None:
        raise ValueError("plant must expose its input dimension as attribute 'm'")
    return int(m)


def _input_hankel_full_rank(us: np.ndarray, depth: int, rel_tol: float) -> bool:
    t = us.shape[0]
    if t < depth or (t - depth + 1) < us.shape[1] * depth:
        return False
    return rank_certificate(hankel(us, depth), rel_tol).full_row_rank


def random_experiment(sys: BilinearSystem, x0: np.ndarray, L: int,
                      input_bound: float, seed: int) -> Trajectory:
    """Offline experiment with componentwise-uniform random inputs in
    [-input_bound, input_bound]; the route used when rank can be checked
    after the fact rather than enforced online."""
    rng = np.random.default_rng(seed)
    inputs = rng.uniform(-input_bound, input_bound, size=(L, sys.m))
    return simulate(sys, x0, inputs)
