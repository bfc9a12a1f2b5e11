"""Bilinear system models, simulation, and test-system generation.

A bilinear system evolves as

    x(t+1) = A x(t) + B u(t) + N (x(t) kron u(t)),

where ``N = [N_1 ... N_n]`` row-concatenates n blocks of size n x m, so that
``N (x kron u) = sum_j x_j N_j u``.  The Kronecker product stacks the blocks
``x_1 u, ..., x_n u``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

DIVERGENCE_LIMIT = 1e12

FIXTURE_NAMES = ("example1", "example2", "example3")


class DivergenceError(RuntimeError):
    """Simulation produced a non-finite or runaway state."""

    def __init__(self, t: int, norm: float):
        self.t = t
        self.norm = norm
        super().__init__(f"state diverged at step {t} (norm {norm:.3e})")


class GenerationError(RuntimeError):
    """Random-system rejection sampling exhausted its budget."""


@dataclass(frozen=True)
class BilinearSystem:
    """Immutable container for the matrices (A, B, N) of a bilinear system."""

    A: np.ndarray
    B: np.ndarray
    N: np.ndarray  # n x (m*n), row-concatenation [N_1 ... N_n]

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        N = np.atleast_2d(np.asarray(self.N, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got {B.shape}")
        m = B.shape[1]
        if N.shape != (n, m * n):
            raise ValueError(f"N must be {n}x{m * n}, got {N.shape}")
        for name, M in (("A", A), ("B", B), ("N", N)):
            if not np.all(np.isfinite(M)):
                raise ValueError(f"{name} contains non-finite entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "N", N)
        A.setflags(write=False)
        B.setflags(write=False)
        N.setflags(write=False)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def n_block(self, j: int) -> np.ndarray:
        """The j-th (0-based) n x m block N_j."""
        m = self.m
        return self.N[:, j * m:(j + 1) * m]

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist(), "N": self.N.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "BilinearSystem":
        return cls(np.asarray(d["A"], dtype=float),
                   np.asarray(d["B"], dtype=float),
                   np.asarray(d["N"], dtype=float))

    @classmethod
    def from_json(cls, path) -> "BilinearSystem":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class Trajectory:
    """A state sequence x(0..K) with the inputs u(0..K-1) that produced it."""

    states: np.ndarray  # (K+1, n)
    inputs: np.ndarray  # (K, m)

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        if states.shape[0] != inputs.shape[0] + 1:
            raise ValueError(
                f"need len(states) == len(inputs)+1, got "
                f"{states.shape[0]} vs {inputs.shape[0]}")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)
        states.setflags(write=False)
        inputs.setflags(write=False)

    @property
    def length(self) -> int:
        """Number of inputs L; there are L+1 states."""
        return self.inputs.shape[0]

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def m(self) -> int:
        return self.inputs.shape[1]

    def kron_sequence(self) -> np.ndarray:
        """Per-sample Kronecker products, row t = x(t) kron u(t), shape (L, n*m)."""
        # row-wise kron: block j of row t is x_j(t) * u(t)
        x = self.states[:-1]
        u = self.inputs
        return (x[:, :, None] * u[:, None, :]).reshape(self.length, -1)


def step(sys: BilinearSystem, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """One transition x+ = A x + B u + N (x kron u)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.shape[0] != sys.n:
        raise ValueError(f"state has dimension {x.shape[0]}, expected {sys.n}")
    if u.shape[0] != sys.m:
        raise ValueError(f"input has dimension {u.shape[0]}, expected {sys.m}")
    return sys.A @ x + sys.B @ u + sys.N @ np.kron(x, u)


def simulate(sys: BilinearSystem, x0: np.ndarray, inputs: np.ndarray) -> Trajectory:
    """Iterate :func:`step` from x0 under the given input sequence.

    Raises :class:`DivergenceError` if a state becomes non-finite or its norm
    exceeds ``DIVERGENCE_LIMIT``.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.size == 0:
        raise ValueError("inputs must be nonempty")
    if inputs.shape[1] != sys.m:
        raise ValueError(f"inputs have dimension {inputs.shape[1]}, expected {sys.m}")
    K = inputs.shape[0]
    states = np.empty((K + 1, sys.n))
    states[0] = np.asarray(x0, dtype=float).reshape(-1)
    for t in range(K):
        states[t + 1] = step(sys, states[t], inputs[t])
        norm = float(np.linalg.norm(states[t + 1]))
        if not np.isfinite(norm) or norm > DIVERGENCE_LIMIT:
            raise DivergenceError(t + 1, norm)
    return Trajectory(states, inputs)


def is_pair_controllable(A: np.ndarray, B2: np.ndarray,
                         rel_tol: float = 1e-9) -> tuple[bool, int]:
    """Kalman rank test for the pair (A, B2).

    Returns ``(controllable, numerical_rank)`` where the rank is that of
    ``[B2, A B2, ..., A^{n-1} B2]`` under the SVD tolerance policy
    ``tol = rel_tol * sigma_max * max(shape)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B2 = np.atleast_2d(np.asarray(B2, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or B2.shape[0] != n:
        raise ValueError("inconsistent dimensions for controllability test")
    blocks = [B2]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    C = np.hstack(blocks)
    sv = np.linalg.svd(C, compute_uv=False)
    tol = rel_tol * (sv[0] if sv.size else 0.0) * max(C.shape)
    rank = int(np.count_nonzero(sv > tol))
    return rank == n, rank


def random_system(n: int, m: int, seed: int,
                  spectral_radius_bound: float = 0.95,
                  bilinear_scale: float = 0.3) -> BilinearSystem:
    """Draw a random bilinear system with (A, B) controllable.

    Deterministic in ``seed``.  A is rescaled so its spectral radius does not
    exceed the bound; N entries are Gaussian scaled by ``bilinear_scale / n``
    to keep small-input simulations well behaved.  Rejection-samples up to 100
    draws for controllability of (A, B).
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be positive")
    rng = np.random.default_rng(seed)
    for _ in range(100):
        A = rng.standard_normal((n, n))
        rho = max(np.abs(np.linalg.eigvals(A)).max(), 1e-12)
        if rho > spectral_radius_bound:
            A = A * (spectral_radius_bound / rho)
        B = rng.standard_normal((n, m))
        N = rng.standard_normal((n, m * n)) * (bilinear_scale / n)
        if is_pair_controllable(A, B)[0]:
            return BilinearSystem(A, B, N)
    raise GenerationError(
        f"no controllable (A, B) found in 100 draws for n={n}, m={m}")


def load_fixture(name: str) -> BilinearSystem:
    """Load one of the bundled example systems by name."""
    if name not in FIXTURE_NAMES:
        raise KeyError(f"unknown fixture {name!r}; choose from {FIXTURE_NAMES}")
    ref = resources.files("bilinopt.fixtures").joinpath(f"{name}.json")
    return BilinearSystem.from_dict(json.loads(ref.read_text()))


def fixture_problem(name: str) -> dict:
    """The optimal-control setup (Q, R, x0, xf, T, L, ...) bundled with a fixture."""
    ref = resources.files("bilinopt.fixtures").joinpath(f"{name}.json")
    doc = json.loads(ref.read_text())
    return doc.get("problem", {})
