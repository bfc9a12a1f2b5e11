"""Data-based point-to-point optimal control via a convex-concave procedure.

Assembles the data-parametrized optimal control program (quadratic cost in the
coefficient vector alpha, boundary rows, and the bilinear coupling rows), lifts
the bilinear monomials ``alpha_i alpha_j`` into variables ``r_ij`` with a
difference-of-convex inequality pair per product, and drives the lifted
program to a critical point by successive convexification.

The concave halves of the DC pairs are linearized at the current iterate; a
shared nonnegative slack per pair, charged with an exact-penalty weight,
keeps every convexified subproblem strictly feasible at the iterate itself.
The penalty weight is escalated until the inequality pair pinches
(``|r_ij - alpha_i alpha_j|`` below tolerance), which restores the equality
the lift removed, so every accepted iterate is feasible for the unlifted
program and the cost decreases monotonically.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .hankel import (DataMatrices, RankDeficientError, identify_system,
                     recover_markov_blocks)
from .represent import Alpha, ReconstructedTrajectory, reconstruct, represent
from .systems import Trajectory
from . import qcqp

PSD_TOL = 1e-10


class InitializationError(RuntimeError):
    """No feasible starting coefficient vector could be constructed."""


@dataclass(frozen=True)
class OcProblem:
    """Point-to-point optimal control instance: steer x0 -> xf in T steps."""

    Q: np.ndarray
    R: np.ndarray
    x0: np.ndarray
    xf: np.ndarray
    T: int

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        xf = np.atleast_1d(np.asarray(self.xf, dtype=float))
        for name, M in (("Q", Q), ("R", R)):
            if not np.allclose(M, M.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if M.size and np.linalg.eigvalsh(M).min() < -PSD_TOL * max(1.0, np.abs(M).max()):
                raise ValueError(f"{name} must be positive semidefinite")
        if Q.shape[0] != x0.shape[0] or x0.shape != xf.shape:
            raise ValueError("Q, x0, xf dimensions are inconsistent")
        if self.T < 1:
            raise ValueError("horizon T must be >= 1")
        for key, val in (("Q", Q), ("R", R), ("x0", x0), ("xf", xf)):
            object.__setattr__(self, key, val)

    @property
    def n(self) -> int:
        return self.x0.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]


@dataclass(frozen=True)
class DataProgram:
    """The optimal control program expressed in the coefficient vector.

    Cost ``alpha' P_cost alpha`` sums the stage costs of the reconstructed
    trajectory for t = 0..T-1; ``boundary_A alpha = boundary_b`` pins the
    reconstructed initial and final states.
    """

    dm: DataMatrices
    oc: OcProblem
    P_cost: np.ndarray       # (Ma, Ma) PSD
    boundary_A: np.ndarray   # (2n, Ma): x(0) rows then x(T) rows
    boundary_b: np.ndarray   # (2n,)

    @property
    def num_alpha(self) -> int:
        return self.dm.cols

    def cost(self, alpha: np.ndarray) -> float:
        """Stage-cost sum of the reconstructed trajectory (the P1 objective)."""
        a = np.asarray(alpha, dtype=float).reshape(-1)
        return float(a @ self.P_cost @ a)


def build_p2(dm: DataMatrices, prob: OcProblem) -> DataProgram:
    """Express cost and boundary constraints of the control problem in alpha."""
    if prob.T != dm.T:
        raise ValueError(f"horizon mismatch: problem T={prob.T}, data T={dm.T}")
    if prob.n != dm.n or prob.m != dm.m:
        raise ValueError("problem and data dimensions are inconsistent")
    cert = dm.certificate()
    if not cert.full_row_rank:
        raise RankDeficientError(cert)
    T = dm.T
    Qblk = np.kron(np.eye(T), prob.Q)
    Rblk = np.kron(np.eye(T), prob.R)
    P_cost = dm.HTx.T @ Qblk @ dm.HTx + dm.HTu.T @ Rblk @ dm.HTu
    P_cost = 0.5 * (P_cost + P_cost.T)
    n = dm.n
    boundary_A = np.vstack([dm.HT1x[:n], dm.HT1x[-n:]])
    boundary_b = np.concatenate([prob.x0, prob.xf])
    return DataProgram(dm, prob, P_cost, boundary_A, boundary_b)


@dataclass(frozen=True)
class LiftedProblem:
    """DC lift of the data program with variables (alpha, r).

    ``pair_i/pair_j`` enumerate the products r_k = alpha_{pair_i[k]} *
    alpha_{pair_j[k]} (i <= j, row-major upper triangle); ``A1`` stacks the
    boundary rows and the coupling rows (each affine in (alpha, r)) over the
    solver layout [alpha | r_0 s_0 | r_1 s_1 | ...]; the DC inequality data is
    regenerated per linearization point by :func:`assemble_subproblem`.
    """

    p2: DataProgram
    pair_i: np.ndarray
    pair_j: np.ndarray
    A1: sp.csr_matrix
    b1: np.ndarray
    a1_row_counts: dict
    num_terminal_rows: int   # rows of A1 pinning x(T) (dropped in surrogate mode)
    cost_scale: float        # subproblems minimize alpha'P_cost alpha / cost_scale

    @property
    def num_alpha(self) -> int:
        return self.p2.num_alpha

    @property
    def num_pairs(self) -> int:
        return self.pair_i.shape[0]

    @property
    def num_vars(self) -> int:
        return self.num_alpha + 2 * self.num_pairs

    def r_index(self, i: int, j: int) -> int:
        """Solver column of r_{ij} (order-insensitive)."""
        i, j = min(i, j), max(i, j)
        Ma = self.num_alpha
        k = i * Ma - i * (i - 1) // 2 + (j - i)
        return Ma + 2 * k

    def s_index(self, i: int, j: int) -> int:
        return self.r_index(i, j) + 1

    def pair_products(self, alpha: np.ndarray) -> np.ndarray:
        a = np.asarray(alpha, dtype=float).reshape(-1)
        return a[self.pair_i] * a[self.pair_j]


def lift_to_p3(p2: DataProgram) -> LiftedProblem:
    """Lift every product occurring in the coupling rows into an r variable."""
    dm = p2.dm
    Ma = p2.num_alpha
    n, m, T = dm.n, dm.m, dm.T
    pi, pj = np.triu_indices(Ma)
    npair = pi.size

    # coupling rows: for each (t, a, b),
    #   sum_k coeff_k r_k = HTxu_row . alpha   with coeff from sym(X outer U)
    HTx, HTu, HTxu = dm.HTx, dm.HTu, dm.HTxu
    n_rows = m * n * T
    r_part = np.empty((n_rows, npair))
    a_part = np.empty((n_rows, Ma))
    for row in range(n_rows):
        t, rem = divmod(row, n * m)
        a, b = divmod(rem, m)
        X = HTx[t * n + a]
        U = HTu[t * m + b]
        C = np.outer(X, U)
        S = C + C.T
        coeff = S[pi, pj]
        coeff[pi == pj] = C[pi[pi == pj], pj[pi == pj]]
        r_part[row] = coeff
        a_part[row] = -HTxu[row]

    # stack [boundary; coupling] over [alpha | r/s interleaved], unit row norms
    bA = p2.boundary_A
    bb = p2.boundary_b
    rows_alpha = np.vstack([bA, a_part])
    rows_r = np.vstack([np.zeros((bA.shape[0], npair)), r_part])
    rhs = np.concatenate([bb, np.zeros(n_rows)])
    norms = np.sqrt((rows_alpha**2).sum(1) + (rows_r**2).sum(1))
    norms[norms == 0] = 1.0
    rows_alpha /= norms[:, None]
    rows_r /= norms[:, None]
    rhs = rhs / norms

    r_cols = Ma + 2 * np.arange(npair)
    A_alpha = sp.csr_matrix(rows_alpha)
    data = rows_r.reshape(-1)
    indices = np.tile(r_cols, rows_r.shape[0])
    indptr = npair * np.arange(rows_r.shape[0] + 1)
    A_r = sp.csr_matrix((data, indices, indptr),
                        shape=(rows_r.shape[0], Ma + 2 * npair))
    A_r.eliminate_zeros()
    A1 = (sp.hstack([A_alpha, sp.csr_matrix((rows_alpha.shape[0], 2 * npair))])
          + A_r).tocsr()

    ev = np.linalg.eigvalsh(p2.P_cost)
    cost_scale = max(float(ev.max()), 1e-300)
    return LiftedProblem(
        p2=p2, pair_i=pi, pair_j=pj, A1=A1, b1=rhs,
        a1_row_counts={"boundary": int(bA.shape[0]), "coupling": n_rows},
        num_terminal_rows=n, cost_scale=cost_scale)


# ---------------------------------------------------------------------------
# subproblem assembly
# ---------------------------------------------------------------------------

def _dc_blocks(lift: LiftedProblem, alpha_k: np.ndarray) -> tuple[qcqp.ConstraintBlock, ...]:
    """Convexified DC inequality pair per product, linearized at alpha_k.

    For each pair (i, j) with shared slack s (columns r, s after alpha):
      a: (a_i+a_j)^2 - lin(a_i^2+a_j^2) - 2r - s <= 0
      b: (a_i^2+a_j^2) - lin((a_i+a_j)^2) + 2r - s <= 0
    plus s >= 0; diagonal pairs use the doubled single-variable forms.
    Both original inequalities are dominated by their convexifications, so
    |r - a_i a_j| <= s/2 at any feasible point.
    """
    Ma = lift.num_alpha
    pi, pj = lift.pair_i, lift.pair_j
    npair = pi.size
    ak = np.asarray(alpha_k, dtype=float).reshape(-1)
    r_cols = Ma + 2 * np.arange(npair)
    s_cols = r_cols + 1

    off = pi < pj
    dia = ~off
    blocks = []

    if off.any():
        io, jo = pi[off], pj[off]
        ro, so = r_cols[off], s_cols[off]
        idx = np.column_stack([io, jo, ro, so])
        Pa = np.zeros((4, 4))
        Pa[:2, :2] = 2.0 * np.array([[1.0, 1.0], [1.0, 1.0]])
        qa = np.column_stack([-2.0 * ak[io], -2.0 * ak[jo],
                              np.full(io.size, -2.0), np.full(io.size, -1.0)])
        ca = ak[io]**2 + ak[jo]**2
        blocks.append(qcqp.ConstraintBlock(idx, Pa[None], qa, ca))
        Pb = np.zeros((4, 4))
        Pb[0, 0] = Pb[1, 1] = 2.0
        u = ak[io] + ak[jo]
        qb = np.column_stack([-2.0 * u, -2.0 * u,
                              np.full(io.size, 2.0), np.full(io.size, -1.0)])
        cb = u**2
        blocks.append(qcqp.ConstraintBlock(idx, Pb[None], qb, cb))

    idd = pi[dia]
    rd, sd = r_cols[dia], s_cols[dia]
    idxd = np.column_stack([idd, rd, sd])
    Pda = np.zeros((3, 3))
    Pda[0, 0] = 8.0
    qda = np.column_stack([-4.0 * ak[idd], np.full(idd.size, -2.0),
                           np.full(idd.size, -1.0)])
    cda = 2.0 * ak[idd]**2
    blocks.append(qcqp.ConstraintBlock(idxd, Pda[None], qda, cda))
    Pdb = np.zeros((3, 3))
    Pdb[0, 0] = 4.0
    qdb = np.column_stack([-8.0 * ak[idd], np.full(idd.size, 2.0),
                           np.full(idd.size, -1.0)])
    cdb = 4.0 * ak[idd]**2
    blocks.append(qcqp.ConstraintBlock(idxd, Pdb[None], qdb, cdb))

    blocks.append(qcqp.ConstraintBlock(
        s_cols[:, None], np.zeros((1, 1, 1)),
        -np.ones((npair, 1)), np.zeros(npair)))
    return tuple(blocks)


def assemble_subproblem(lift: LiftedProblem, alpha_k: np.ndarray, tau: float,
                        surrogate: bool = False) -> qcqp.ConvexQcqp:
    """Convexified subproblem at alpha_k with penalty weight tau on the slacks.

    ``surrogate=True`` swaps the stage cost for ||x(T) - xf||^2 and drops the
    terminal equality rows (used by the initialization phase).
    """
    Ma = lift.num_alpha
    npair = lift.num_pairs
    N = lift.num_vars
    q0 = np.zeros(N)
    q0[Ma + 1::2] = tau
    if surrogate:
        E = lift.p2.dm.HT1x[-lift.p2.dm.n:]
        scale = max(float(np.linalg.norm(E, 2)**2), 1e-300)
        P0 = 2.0 * (E.T @ E) / scale
        q0[:Ma] = -2.0 * (E.T @ lift.p2.oc.xf) / scale
        r0 = float(lift.p2.oc.xf @ lift.p2.oc.xf) / scale
        nb = lift.a1_row_counts["boundary"]
        keep = np.r_[np.arange(nb - lift.num_terminal_rows),
                     np.arange(nb, lift.A1.shape[0])]
        A_eq = lift.A1[keep]
        b_eq = lift.b1[keep]
    else:
        P0 = 2.0 * lift.p2.P_cost / lift.cost_scale
        r0 = 0.0
        A_eq, b_eq = lift.A1, lift.b1
    gw = lift.num_alpha + 2 * np.arange(npair)[:, None] + np.array([[0, 1]])
    return qcqp.ConvexQcqp(
        num_vars=N, cost_idx=np.arange(Ma), P0=P0, q0=q0, r0=r0,
        A_eq=A_eq, b_eq=b_eq, blocks=_dc_blocks(lift, alpha_k),
        elim=qcqp.ElimSpec(gw))


def warm_start_point(lift: LiftedProblem, alpha_k: np.ndarray,
                     tau: float) -> np.ndarray:
    """Strictly feasible start (alpha_k, r = products, s = small margin)."""
    z = np.zeros(lift.num_vars)
    Ma = lift.num_alpha
    z[:Ma] = alpha_k
    z[Ma::2] = lift.pair_products(alpha_k)
    margin = max(1e-8, min(1e-2, 0.1 / (tau * max(lift.num_pairs, 1))))
    z[Ma + 1::2] = margin
    return z


# ---------------------------------------------------------------------------
# the convex-concave outer loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CcpSettings:
    max_outer: int = 300
    cost_tol: float = 1e-8        # relative cost-decrease threshold
    step_tol: float = 1e-7
    feas_tol: float = 1e-6        # boundary/consistency tolerance per iterate
    descent_tol: float = 1e-9
    tau0: float = 1e-4            # starting slack penalty (normalized cost units)
    tau_growth: float = 10.0
    tau_max: float = 1e10
    line_search_steps: tuple[float, ...] = (4.0, 2.0, 1.0, 0.5, 0.25, 0.0625)
    restore_tol: float = 1e-10    # feasibility-restoration target
    restore_max_iter: int = 30
    solver: qcqp.SolverSettings = field(default_factory=qcqp.SolverSettings)


def constraint_residual(lift: LiftedProblem, alpha: np.ndarray,
                        include_terminal: bool = True) -> np.ndarray:
    """Stacked violation [x(0)-x0; x(T)-xf; bilinear self-consistency]."""
    dm = lift.p2.dm
    oc = lift.p2.oc
    a = np.asarray(alpha, dtype=float).reshape(-1)
    xbar = (dm.HT1x @ a).reshape(dm.T + 1, dm.n)
    ubar = (dm.HTu @ a).reshape(dm.T, dm.m)
    kron = (xbar[:-1, :, None] * ubar[:, None, :]).reshape(-1)
    parts = [xbar[0] - oc.x0]
    if include_terminal:
        parts.append(xbar[-1] - oc.xf)
    parts.append(kron - dm.HTxu @ a)
    return np.concatenate(parts)


def constraint_jacobian(lift: LiftedProblem, alpha: np.ndarray,
                        include_terminal: bool = True) -> np.ndarray:
    dm = lift.p2.dm
    a = np.asarray(alpha, dtype=float).reshape(-1)
    n, m, T = dm.n, dm.m, dm.T
    xbar = (dm.HTx @ a).reshape(T, n)
    ubar = (dm.HTu @ a).reshape(T, m)
    Jk = np.empty((n * m * T, dm.cols))
    for row in range(Jk.shape[0]):
        t, rem = divmod(row, n * m)
        i, j = divmod(rem, m)
        Jk[row] = (dm.HTx[t * n + i] * ubar[t, j]
                   + dm.HTu[t * m + j] * xbar[t, i]
                   - dm.HTxu[row])
    top = [dm.HT1x[:n]]
    if include_terminal:
        top.append(dm.HT1x[-n:])
    return np.vstack(top + [Jk])


def restore(lift: LiftedProblem, alpha: np.ndarray,
            include_terminal: bool = True, tol: float = 1e-10,
            max_iter: int = 30) -> tuple[np.ndarray, float, bool]:
    """Project alpha back onto the constraint manifold by Gauss-Newton.

    Takes minimum-norm Newton steps on the stacked constraint system until
    the max violation falls below ``tol``.  Returns (alpha, violation,
    converged); on divergence the best iterate seen is returned.
    """
    a = np.asarray(alpha, dtype=float).copy()
    best = a.copy()
    F = constraint_residual(lift, a, include_terminal)
    viol = float(np.max(np.abs(F)))
    best_viol = viol
    for _ in range(max_iter):
        if viol <= tol:
            return a, viol, True
        J = constraint_jacobian(lift, a, include_terminal)
        d = np.linalg.lstsq(J, -F, rcond=None)[0]
        a = a + d
        F = constraint_residual(lift, a, include_terminal)
        viol = float(np.max(np.abs(F)))
        if viol < best_viol:
            best, best_viol = a.copy(), viol
        elif viol > 10.0 * best_viol:
            break
    return best, best_viol, best_viol <= tol


@dataclass(frozen=True)
class CcpSolution:
    alpha: Alpha
    reconstruction: ReconstructedTrajectory
    cost: float
    trace: tuple[dict, ...]
    status: str               # Converged | MaxIter | SubproblemFailed
    tau: float
    diagnostics: dict

    @property
    def iterations(self) -> int:
        return len(self.trace)


def _p2_violation(lift: LiftedProblem, alpha: np.ndarray) -> dict:
    rec = reconstruct(Alpha(alpha, lift.p2.dm))
    oc = lift.p2.oc
    return {
        "initial": float(np.max(np.abs(rec.states[0] - oc.x0))),
        "terminal": float(np.max(np.abs(rec.states[-1] - oc.xf))),
        "consistency": rec.consistency_residual,
    }


def _objective(lift: LiftedProblem, alpha: np.ndarray, surrogate: bool) -> float:
    if surrogate:
        E = lift.p2.dm.HT1x[-lift.p2.dm.n:]
        d = E @ alpha - lift.p2.oc.xf
        return float(d @ d)
    return lift.p2.cost(alpha)


def _tangent_newton_direction(lift: LiftedProblem, alpha: np.ndarray,
                              surrogate: bool) -> np.ndarray | None:
    """Newton step of the cost restricted to the constraint tangent space.

    Cheap acceleration candidate for the outer loop: the subproblem direction
    is damped by the slack penalty, while this direction captures the exact
    curvature of the cost along the feasible manifold.
    """
    J = constraint_jacobian(lift, alpha, include_terminal=not surrogate)
    _, sv, Vt = np.linalg.svd(J)
    rank = int((sv > 1e-9 * sv[0] * max(J.shape)).sum()) if sv.size else 0
    Z = Vt[rank:].T
    if Z.shape[1] == 0:
        return None
    if surrogate:
        E = lift.p2.dm.HT1x[-lift.p2.dm.n:]
        g = 2.0 * E.T @ (E @ alpha - lift.p2.oc.xf)
        H = 2.0 * E.T @ E
    else:
        g = 2.0 * lift.p2.P_cost @ alpha
        H = 2.0 * lift.p2.P_cost
    gr = Z.T @ g
    Hr = Z.T @ H @ Z
    w, V = np.linalg.eigh(Hr)
    wmax = float(w.max())
    if wmax <= 0.0:
        return None
    w = np.maximum(w, 1e-8 * wmax)
    return -(Z @ (V @ ((V.T @ gr) / w)))


def ccp_solve(lift: LiftedProblem, alpha0: np.ndarray | Alpha,
              settings: CcpSettings | None = None,
              surrogate: bool = False,
              stop_when=None) -> CcpSolution:
    """Successive convexification from alpha0 to a critical point.

    Each outer iteration linearizes the concave constraint halves at the
    current iterate, solves the convex subproblem warm-started at
    (alpha_k, r = alpha_k alpha_k), escalates the slack penalty until the
    inequality pair pinches, and accepts the subproblem's alpha.  Monotone
    descent and per-iterate feasibility are enforced, not assumed.

    ``stop_when(alpha) -> bool`` adds an extra termination test (used by the
    initialization phase to stop at a target terminal error).
    """
    st = settings or CcpSettings()
    alpha = (alpha0.coefficients if isinstance(alpha0, Alpha)
             else np.asarray(alpha0, dtype=float)).copy()
    include_terminal = not surrogate
    # start from the projection of alpha0 onto the constraint manifold
    a_res, v_res, ok = restore(lift, alpha, include_terminal,
                               st.restore_tol, st.restore_max_iter)
    if ok:
        alpha = a_res
    tau = st.tau0
    trace = []
    diagnostics = {"tau_escalations": 0, "subproblem_status": [],
                   "initial_violation": _p2_violation(lift, alpha)}
    cost_prev = _objective(lift, alpha, surrogate)
    status = "MaxIter"

    for k in range(st.max_outer):
        if stop_when is not None and stop_when(alpha):
            status = "Converged"
            break
        # trial steps at the current linearization: solve the subproblem,
        # line-search along its direction and the tangent-Newton direction
        # with feasibility restoration at each candidate, and escalate tau
        # only if no candidate is both restorable and non-increasing in cost
        failure = None
        newton_dir = _tangent_newton_direction(lift, alpha, surrogate)
        while True:
            prob = assemble_subproblem(lift, alpha, tau, surrogate)
            z0 = warm_start_point(lift, alpha, tau)
            rep = qcqp.solve(prob, warm_start=z0, settings=st.solver)
            diagnostics["subproblem_status"].append(
                {"k": k, "tau": tau, "status": rep.status,
                 "iters": rep.iterations, "kkt": rep.kkt_residual})
            if rep.status == "Infeasible":
                failure = f"subproblem infeasible at iteration {k}"
                break
            directions = [("subproblem", rep.z[:lift.num_alpha] - alpha)]
            if newton_dir is not None:
                directions.insert(0, ("newton", newton_dir))
            best = None
            for name, d in directions:
                for gamma in st.line_search_steps:
                    trial, viol_t, ok = restore(
                        lift, alpha + gamma * d, include_terminal,
                        st.restore_tol, st.restore_max_iter)
                    if not (ok and viol_t <= st.feas_tol):
                        continue
                    cost_t = _objective(lift, trial, surrogate)
                    if cost_t <= cost_prev + st.descent_tol * (1.0 + abs(cost_prev)) \
                            and (best is None or cost_t < best[1]):
                        best = (trial, cost_t, viol_t, name, gamma)
            newton_dir = None  # one Newton candidate per outer iteration
            if best is not None:
                alpha_new, cost_new, viol_new, dir_name, gamma_acc = best
                break
            if tau >= st.tau_max:
                failure = (f"no acceptable step at iteration {k} with the "
                           f"penalty at its cap (cost {cost_prev:.12e})")
                break
            tau *= st.tau_growth
            diagnostics["tau_escalations"] += 1
        if failure is not None:
            status = "SubproblemFailed"
            diagnostics["failure"] = failure
            break

        step = float(np.linalg.norm(alpha_new - alpha))
        trace.append({
            "k": k, "cost": cost_new, "violation": viol_new,
            "step_norm": step, "tau": tau,
            "direction": dir_name, "gamma": gamma_acc,
            "subproblem_iters": rep.iterations,
        })
        converged = (abs(cost_prev - cost_new) < st.cost_tol * (1.0 + abs(cost_new))
                     and step < st.step_tol)
        alpha = alpha_new
        cost_prev = cost_new
        if converged:
            status = "Converged"
            break
        tau = max(st.tau0, tau / st.tau_growth)

    final_alpha = Alpha(alpha, lift.p2.dm)
    rec = reconstruct(final_alpha)
    return CcpSolution(
        alpha=final_alpha, reconstruction=rec,
        cost=lift.p2.cost(alpha), trace=tuple(trace), status=status,
        tau=tau, diagnostics=diagnostics)


def fixed_point_step(lift: LiftedProblem, alpha: np.ndarray | Alpha,
                     settings: CcpSettings | None = None) -> float:
    """Norm of the best strictly improving step when re-linearized at alpha.

    Runs one outer iteration's candidate search (subproblem direction and
    tangent-Newton direction, each restored to the constraint manifold) and
    returns the step norm of the best candidate that strictly decreases the
    cost, or 0.0 if none does.  Near-zero at a critical point.
    """
    st = settings or CcpSettings()
    a = alpha.coefficients if isinstance(alpha, Alpha) else np.asarray(alpha, float)
    cost0 = lift.p2.cost(a)
    prob = assemble_subproblem(lift, a, st.tau0)
    rep = qcqp.solve(prob, warm_start=warm_start_point(lift, a, st.tau0),
                     settings=st.solver)
    directions = [rep.z[:lift.num_alpha] - a]
    dn = _tangent_newton_direction(lift, a, surrogate=False)
    if dn is not None:
        directions.append(dn)
    best = 0.0
    best_cost = cost0 - st.descent_tol * (1.0 + abs(cost0))
    for d in directions:
        for gamma in st.line_search_steps:
            trial, viol_t, ok = restore(lift, a + gamma * d, True,
                                        st.restore_tol, st.restore_max_iter)
            if not (ok and viol_t <= st.feas_tol):
                continue
            cost_t = lift.p2.cost(trial)
            if cost_t < best_cost:
                best_cost = cost_t
                best = float(np.linalg.norm(trial - a))
    return best


# ---------------------------------------------------------------------------
# initialization and control extraction
# ---------------------------------------------------------------------------

def _surrogate_descent(lift: LiftedProblem, alpha: np.ndarray,
                       max_iter: int, stop_when,
                       settings: CcpSettings) -> np.ndarray:
    """Drive ||x(T) - xf||^2 down along the partial constraint manifold.

    Tangent-Newton direction + restoration line search only (no lifted
    subproblem), which is cheap enough for large instances; returns the last
    iterate whether or not ``stop_when`` was met.
    """
    st = settings
    E = lift.p2.dm.HT1x[-lift.p2.dm.n:]
    xf = lift.p2.oc.xf

    def surr(a):
        d = E @ a - xf
        return float(d @ d)

    gammas = tuple(st.line_search_steps) + (0.03, 0.01, 0.003, 0.001)
    c0 = surr(alpha)
    for _ in range(max_iter):
        if stop_when(alpha):
            break
        d = _tangent_newton_direction(lift, alpha, surrogate=True)
        if d is None:
            break
        best = None
        for gamma in gammas:
            trial, viol_t, ok = restore(lift, alpha + gamma * d, False,
                                        st.restore_tol, st.restore_max_iter)
            if not (ok and viol_t <= st.feas_tol):
                continue
            c = surr(trial)
            if c < c0 - 1e-14 and (best is None or c < best[1]):
                best = (trial, c)
        if best is None:
            break
        alpha, c0 = best
    return alpha


def find_initial_alpha(dm: DataMatrices, prob: OcProblem,
                       settings: CcpSettings | None = None,
                       terminal_tol: float = 1e-7,
                       max_outer: int = 200) -> tuple[Alpha, dict]:
    """Feasible starting coefficients for the control program.

    Phase A represents the zero-input trajectory from x0 (built from the
    data-recovered transition blocks), which satisfies everything except
    possibly the terminal constraint, then tries a direct Gauss-Newton
    projection onto the full constraint set.  If that fails, phase B drives
    the surrogate objective ||x(T) - xf||^2 down (terminal rows dropped)
    until the projection's basin is reached; when that stalls, it falls back
    to identifying the transition matrices from the same data and shooting
    for a feasible trajectory on the identified model.
    """
    st = settings or CcpSettings()
    Ma = dm.cols
    report: dict = {}
    if np.allclose(prob.x0, 0.0) and np.allclose(prob.xf, 0.0):
        alpha = Alpha(np.zeros(Ma), dm)
        report["phase_a"] = {"terminal_error": 0.0, "consistency": 0.0,
                             "method": "zero"}
        return alpha, report

    O, _, _ = recover_markov_blocks(dm)
    states = np.vstack([prob.x0[None, :], (O @ prob.x0).reshape(dm.T, dm.n)])
    traj = Trajectory(states, np.zeros((dm.T, dm.m)))
    alpha_a = represent(traj, dm)
    rec = reconstruct(alpha_a)
    term_err = float(np.max(np.abs(rec.states[-1] - prob.xf)))
    report["phase_a"] = {"terminal_error": term_err,
                         "consistency": rec.consistency_residual,
                         "method": "zero-input rollout"}
    lift = lift_to_p3(build_p2(dm, prob))
    a_proj, viol, ok = restore(lift, alpha_a.coefficients, True,
                               st.restore_tol, st.restore_max_iter)
    if ok and viol < terminal_tol:
        report["phase_a"]["projection_violation"] = viol
        return Alpha(a_proj, dm), report

    # phase B: drive the terminal error down without the terminal equality,
    # handing over to the projection once inside its convergence basin
    E = dm.HT1x[-dm.n:]
    found: dict = {}

    def reached(a):
        if float(np.max(np.abs(E @ a - prob.xf))) > 1e-3:
            return False
        a_full, v_full, ok_full = restore(lift, a, True,
                                          st.restore_tol, st.restore_max_iter)
        if ok_full and v_full < terminal_tol:
            found["alpha"] = a_full
            found["violation"] = v_full
            return True
        return False

    # cheap route first: tangent-Newton descent on the surrogate
    a_b = _surrogate_descent(lift, alpha_a.coefficients,
                             10 * max_outer, reached, st)
    report["phase_b"] = {"method": "tangent-newton"}
    if "alpha" not in found:
        # identification route: with exact data the one-step fit recovers the
        # transition matrices, and a shooting solution on the identified model
        # is a consistent trajectory reaching xf, ready to represent
        try:
            from .shooting import shooting_solve
            sys_id = identify_system(dm)
            sr = shooting_solve(sys_id, prob, restarts=4, seed=0, jitter=0.5,
                                terminal_tol=terminal_tol,
                                relax_to_reachable=True)
            a_sh = represent(Trajectory(sr.states, sr.inputs), dm).coefficients
            if sr.relaxed:
                # xf is unreachable; anchor the terminal rows at the nearest
                # reachable state instead and let the caller adopt it
                xf_eff = sr.states[-1].copy()
                prob_eff = OcProblem(prob.Q, prob.R, prob.x0, xf_eff, prob.T)
                lift_eff = lift_to_p3(build_p2(dm, prob_eff))
                a_full, v_full, ok_full = restore(lift_eff, a_sh, True,
                                                  st.restore_tol,
                                                  st.restore_max_iter)
            else:
                a_full, v_full, ok_full = restore(lift, a_sh, True,
                                                  st.restore_tol,
                                                  st.restore_max_iter)
            if ok_full and v_full < terminal_tol:
                found["alpha"] = a_full
                found["violation"] = v_full
                report["phase_b"] = {"method": "identification-shooting",
                                     "restarts": sr.restarts_tried}
                if sr.relaxed:
                    report["phase_b"]["relaxed"] = True
                    report["relaxed_target"] = [float(v) for v in xf_eff]
                    report["requested_target"] = [float(v) for v in prob.xf]
        except Exception:
            pass
    if "alpha" not in found:
        # fall back to the full convex-concave loop on the surrogate
        sol = ccp_solve(lift, a_b,
                        settings=replace(st, max_outer=max_outer),
                        surrogate=True, stop_when=reached)
        a_b = sol.alpha.coefficients
        report["phase_b"] = {"method": "ccp", "iterations": sol.iterations,
                             "status": sol.status}
    if "alpha" not in found:
        term_b = float(np.max(np.abs(E @ a_b - prob.xf)))
        raise InitializationError(
            f"surrogate phase stalled at terminal error {term_b:.3e} "
            f"(target {terminal_tol:.1e}); xf may be unreachable in T steps")
    report["phase_b"]["violation"] = found["violation"]
    return Alpha(found["alpha"], dm), report


def solve_from_data(dm: DataMatrices, prob: OcProblem,
                    settings: CcpSettings | None = None,
                    terminal_tol: float = 1e-7
                    ) -> tuple[CcpSolution, OcProblem, dict]:
    """End-to-end data-driven solve: feasible start, then the descent loop.

    Returns (solution, effective problem, initialization report).  The
    effective problem differs from ``prob`` only when the requested terminal
    state turned out to be unreachable and the target was moved to the
    nearest reachable state (recorded under ``relaxed_target`` in the
    report).
    """
    alpha0, report = find_initial_alpha(dm, prob, settings,
                                        terminal_tol=terminal_tol)
    prob_eff = prob
    if "relaxed_target" in report:
        prob_eff = OcProblem(prob.Q, prob.R, prob.x0,
                             report["relaxed_target"], prob.T)
    lift = lift_to_p3(build_p2(dm, prob_eff))
    sol = ccp_solve(lift, alpha0, settings)
    return sol, prob_eff, report


@dataclass(frozen=True)
class ControlExtraction:
    inputs: np.ndarray            # (T, m) the designed open-loop input
    predicted_states: np.ndarray  # (T+1, n) data-based prediction
    replayed_states: np.ndarray | None
    replay_terminal_error: float | None
    replay_max_deviation: float | None


def extract_control(sol: CcpSolution, dm: DataMatrices,
                    plant=None) -> ControlExtraction:
    """Read the designed input off the solution; optionally replay on a plant.

    ``plant`` follows the experiment-module protocol (reset() -> x0,
    step(u) -> next state).
    """
    rec = sol.reconstruction
    inputs = rec.inputs
    states = rec.states
    if plant is None:
        return ControlExtraction(inputs, states, None, None, None)
    x = plant.reset()
    replay = [np.asarray(x, dtype=float)]
    for u in inputs:
        x = plant.step(u)
        replay.append(np.asarray(x, dtype=float))
    replay = np.asarray(replay)
    dev = float(np.max(np.abs(replay - states)))
    term = float(np.linalg.norm(replay[-1] - states[-1]))
    return ControlExtraction(inputs, states, replay, term, dev)
