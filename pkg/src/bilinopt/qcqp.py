"""Barrier interior-point solver for convex QCQPs.

Solves

    min  0.5 z' P0 z + q0' z + r0
    s.t. A_eq z = b_eq
         0.5 z' P_i z + q_i' z + c_i <= 0,  i = 1..M

with every P_i positive semidefinite.  Inequalities are stored in batches
that share a sparsity pattern: each constraint touches only a small index
set, which keeps Hessian assembly linear in the number of constraints.

An optional elimination spec marks disjoint groups of variables that appear
only in "local" constraints (every inequality touches at most one group).
The Newton KKT system is then condensed onto the remaining variables and the
equality multipliers, which is what makes the large lifted subproblems of the
convex-concave outer loop affordable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.linalg as la

PSD_TOL = 1e-10


class NumericError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConstraintBlock:
    """Batch of quadratic constraints g(z) = 0.5 z[idx]'P z[idx] + q'z[idx] + c <= 0.

    ``idx``: (C, k) variable indices; ``P``: (C, k, k) or (1, k, k) shared;
    ``q``: (C, k); ``c``: (C,).
    """

    idx: np.ndarray
    P: np.ndarray
    q: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        idx = np.atleast_2d(np.asarray(self.idx, dtype=np.intp))
        P = np.asarray(self.P, dtype=float)
        q = np.atleast_2d(np.asarray(self.q, dtype=float))
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        if P.ndim == 2:
            P = P[None, :, :]
        k = idx.shape[1]
        if P.shape[1:] != (k, k) or q.shape[1] != k:
            raise ValueError("inconsistent constraint block shapes")
        object.__setattr__(self, "idx", idx)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "c", c)

    @property
    def count(self) -> int:
        return self.idx.shape[0]

    def check_psd(self) -> None:
        scale = np.abs(self.P).max() if self.P.size else 0.0
        if self.P.shape[1] == 0 or scale == 0.0:
            return
        ev = np.linalg.eigvalsh(self.P)
        if ev.min() < -PSD_TOL * scale:
            raise ValueError(
                f"constraint block is not PSD (min eigenvalue {ev.min():.3e})")

    def evaluate(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values g (C,) and local gradients (C, k) at z."""
        zi = z[self.idx]
        Pz = np.einsum("ckl,cl->ck", np.broadcast_to(self.P, (self.count,) + self.P.shape[1:]), zi) \
            if self.P.shape[0] == 1 else np.einsum("ckl,cl->ck", self.P, zi)
        g = 0.5 * np.einsum("ck,ck->c", zi, Pz) + np.einsum("ck,ck->c", self.q, zi) + self.c
        return g, Pz + self.q


@dataclass(frozen=True)
class ElimSpec:
    """Groups of variables to condense out of every Newton solve.

    ``groups_w``: (G, kg) indices of eliminated variables (disjoint).
    Each inequality may touch at most one group, each eliminated variable must
    be absent from the quadratic cost, and at most one variable per group may
    carry equality-constraint coefficients.
    """

    groups_w: np.ndarray

    def __post_init__(self):
        gw = np.atleast_2d(np.asarray(self.groups_w, dtype=np.intp))
        object.__setattr__(self, "groups_w", gw)


@dataclass(frozen=True)
class ConvexQcqp:
    """Convex QCQP instance; cost support may be restricted to ``cost_idx``."""

    num_vars: int
    cost_idx: np.ndarray      # (k0,) indices carrying the quadratic cost
    P0: np.ndarray            # (k0, k0) PSD
    q0: np.ndarray            # (num_vars,) full linear cost
    r0: float
    A_eq: sp.csr_matrix       # (M_eq, num_vars); may have 0 rows
    b_eq: np.ndarray
    blocks: tuple[ConstraintBlock, ...]
    elim: ElimSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "cost_idx", np.asarray(self.cost_idx, dtype=np.intp))
        object.__setattr__(self, "q0", np.asarray(self.q0, dtype=float))
        object.__setattr__(self, "b_eq", np.atleast_1d(np.asarray(self.b_eq, dtype=float)))
        A = self.A_eq
        if not sp.issparse(A):
            A = sp.csr_matrix(np.atleast_2d(np.asarray(A, dtype=float)))
        object.__setattr__(self, "A_eq", sp.csr_matrix(A))
        for b in self.blocks:
            b.check_psd()
        scale = np.abs(self.P0).max() if self.P0.size else 0.0
        if scale > 0:
            ev = np.linalg.eigvalsh(0.5 * (self.P0 + self.P0.T))
            if ev.min() < -PSD_TOL * scale:
                raise ValueError("cost matrix is not PSD")

    @property
    def num_ineq(self) -> int:
        return sum(b.count for b in self.blocks)

    def objective(self, z: np.ndarray) -> float:
        zi = z[self.cost_idx]
        return float(0.5 * zi @ self.P0 @ zi + self.q0 @ z + self.r0)

    def cost_gradient(self, z: np.ndarray) -> np.ndarray:
        g = self.q0.copy()
        g[self.cost_idx] += self.P0 @ z[self.cost_idx]
        return g

    def constraint_values(self, z: np.ndarray) -> np.ndarray:
        if not self.blocks:
            return np.zeros(0)
        return np.concatenate([b.evaluate(z)[0] for b in self.blocks])

    def to_dict(self) -> dict:
        """JSON-friendly dump for offline cross-checking."""
        return {
            "num_vars": self.num_vars,
            "cost": {"idx": self.cost_idx.tolist(), "P": self.P0.tolist(),
                     "q": self.q0.tolist(), "r": self.r0},
            "equalities": {"A": self.A_eq.toarray().tolist(),
                           "b": self.b_eq.tolist()},
            "inequalities": [
                {"idx": b.idx.tolist(),
                 "P": np.broadcast_to(b.P, (b.count,) + b.P.shape[1:]).tolist(),
                 "q": b.q.tolist(), "c": b.c.tolist()}
                for b in self.blocks],
        }


@dataclass(frozen=True)
class SolverSettings:
    max_iter: int = 200        # total Newton steps across all barrier stages
    mu: float = 20.0
    t0: float = 1.0
    tol_gap: float = 1e-9      # target duality gap, relative to 1+|objective|
    tol_newton: float = 1e-10
    tol_feas: float = 1e-8
    line_search_beta: float = 0.5
    line_search_alpha: float = 0.01
    feas_weight: float = 1.0   # weight of infeasibility in the gap surrogate


@dataclass(frozen=True)
class SolveReport:
    z: np.ndarray
    objective: float
    eq_residual: float
    ineq_violation: float
    kkt_residual: float
    iterations: int
    status: str                # Optimal | MaxIter | Infeasible
    duality_gap: float
    lam: np.ndarray            # inequality multipliers
    nu: np.ndarray             # equality multipliers
    effective_vars: int
    num_constraints: int


class _Condenser:
    """Precomputed index machinery for the grouped Newton condensation."""

    def __init__(self, prob: ConvexQcqp):
        N = prob.num_vars
        elim = prob.elim
        gw = elim.groups_w
        G, kg = gw.shape
        is_w = np.zeros(N, dtype=bool)
        is_w[gw.reshape(-1)] = True
        if is_w[prob.cost_idx].any():
            raise ValueError("eliminated variables may not carry quadratic cost")
        w_group = np.full(N, -1, dtype=np.intp)
        w_pos = np.full(N, -1, dtype=np.intp)
        for p in range(kg):
            w_group[gw[:, p]] = np.arange(G)
            w_pos[gw[:, p]] = p
        y_idx = np.flatnonzero(~is_w)
        y_of = np.full(N, -1, dtype=np.intp)
        y_of[y_idx] = np.arange(y_idx.size)

        self.N, self.G, self.kg = N, G, kg
        self.gw = gw
        self.is_w, self.w_group, self.w_pos = is_w, w_group, w_pos
        self.y_idx, self.y_of = y_idx, y_of
        self.ny = y_idx.size

        # column split per block (each idx column must be uniformly y or w)
        self.block_meta = []
        # group-local y lists
        gy_sets: list[list[int]] = [[] for _ in range(G)]
        for b in prob.blocks:
            col_w = is_w[b.idx]
            if not np.all(col_w == col_w[0:1], axis=0).all():
                raise ValueError("constraint block mixes y/w within a column")
            wcols = np.flatnonzero(col_w[0])
            ycols = np.flatnonzero(~col_w[0])
            if wcols.size:
                gids = w_group[b.idx[:, wcols[0]]]
                for wc in wcols[1:]:
                    if not np.array_equal(w_group[b.idx[:, wc]], gids):
                        raise ValueError("constraint touches multiple groups")
            else:
                gids = None
            self.block_meta.append((ycols, wcols, gids))
            if gids is not None and ycols.size:
                # register y couplings per group
                for c in range(b.count):
                    g = gids[c]
                    for yc in ycols:
                        v = int(y_of[b.idx[c, yc]])
                        if v not in gy_sets[g]:
                            gy_sets[g].append(v)
        self.max_gy = max((len(s) for s in gy_sets), default=0)
        gy = np.zeros((G, max(self.max_gy, 1)), dtype=np.intp)
        gy_len = np.zeros(G, dtype=np.intp)
        for g, s in enumerate(gy_sets):
            gy[g, :len(s)] = s
            gy_len[g] = len(s)
        self.gy, self.gy_len = gy, gy_len

        # per-block mapping of constraint y vars to group-local y positions
        self.block_yloc = []
        for b, (ycols, wcols, gids) in zip(prob.blocks, self.block_meta):
            if gids is None or not ycols.size:
                self.block_yloc.append(None)
                continue
            yloc = np.zeros((b.count, ycols.size), dtype=np.intp)
            for jj, yc in enumerate(ycols):
                vv = y_of[b.idx[:, yc]]
                # position of vv within gy[gids]
                pos = np.argmax(gy[gids] == vv[:, None], axis=1)
                yloc[:, jj] = pos
            self.block_yloc.append(yloc)

        # equality columns: dense y part + single active w column per group
        A = prob.A_eq.tocsc()
        self.M_eq = A.shape[0]
        self.Ay = np.asarray(A[:, y_idx].todense())
        w_nnz = np.diff(A.indptr)
        active = np.flatnonzero(is_w & (w_nnz > 0))
        act_group = w_group[active]
        if np.unique(act_group).size != act_group.size:
            raise ValueError("at most one eliminated variable per group may "
                             "appear in the equality constraints")
        self.act_pos = np.full(G, -1, dtype=np.intp)   # position within group
        self.act_col = np.full(G, -1, dtype=np.intp)   # global variable index
        self.act_pos[act_group] = w_pos[active]
        self.act_col[act_group] = active
        self.has_act = self.act_pos >= 0
        self.Ar = np.zeros((self.M_eq, G))
        if active.size:
            self.Ar[:, act_group] = np.asarray(A[:, active].todense())


def _dense_A(prob: ConvexQcqp) -> np.ndarray:
    return np.asarray(prob.A_eq.todense())




class _InteriorPointSolver:
    """Primal-dual path-following method.

    Newton steps target the perturbed KKT conditions of the log-barrier
    problem; the barrier parameter follows the surrogate duality gap and is
    tightened geometrically (factor ``settings.mu``).  Keeping the inequality
    multipliers as independent variables avoids the 1/g amplification of
    rounding noise that limits a pure primal barrier near active constraints.
    """

    def __init__(self, prob: ConvexQcqp, settings: SolverSettings):
        self.prob = prob
        self.st = settings
        self.cond = _Condenser(prob) if prob.elim is not None else None
        self.A_dense = None if self.cond is not None else _dense_A(prob)
        self.newton_count = 0

    # -- evaluation ---------------------------------------------------------

    def _eval_blocks(self, z):
        out = []
        for b in self.prob.blocks:
            g, grad = b.evaluate(z)
            if np.any(g >= 0):
                return None  # outside the strictly feasible region
            out.append((g, grad))
        return out

    def _dual_residual(self, z, nu, lam_s, evals):
        """r_dual = grad f0 + sum lam_i grad g_i + A' nu (full length)."""
        grad = self.prob.cost_gradient(z)
        for b, lam, (g, gr) in zip(self.prob.blocks, lam_s, evals):
            np.add.at(grad, b.idx, lam[:, None] * gr)
        if self.prob.A_eq.shape[0]:
            grad = grad + self.prob.A_eq.T @ nu
        return grad

    def _full_residual_norm(self, z, nu, lam_s, t_b, evals):
        r_d = self._dual_residual(z, nu, lam_s, evals)
        r_c = np.concatenate([
            -lam * g - 1.0 / t_b for lam, (g, _) in zip(lam_s, evals)
        ]) if lam_s else np.zeros(0)
        r_p = (self.prob.A_eq @ z - self.prob.b_eq) if self.prob.A_eq.shape[0] \
            else np.zeros(0)
        return float(np.sqrt(np.linalg.norm(r_d)**2 + np.linalg.norm(r_c)**2
                             + np.linalg.norm(r_p)**2))

    # -- Newton step --------------------------------------------------------
    #
    # After eliminating the multiplier increments, the reduced system is
    #
    #   [H  A'] [dz]    [-(grad f0 + sum lamhat_i grad g_i + A' nu)]
    #   [A  0 ] [dnu] = [-(A z - b)]
    #
    # with H = P0 + sum(lam_i P_i + (lam_i/(-g_i)) grad g_i grad g_i') and
    # lamhat_i = 1/(t_b (-g_i));  dlam_i then follows in closed form.

    def _newton_dense(self, z, nu, lam_s, t_b, evals):
        prob = self.prob
        N = prob.num_vars
        H = np.zeros((N, N))
        ci = prob.cost_idx
        H[np.ix_(ci, ci)] += prob.P0
        grad = prob.cost_gradient(z)
        for b, lam, (g, gr) in zip(prob.blocks, lam_s, evals):
            c1 = lam
            c2 = lam / (-g)
            lamhat = 1.0 / (t_b * (-g))
            P = np.broadcast_to(b.P, (b.count,) + b.P.shape[1:])
            Hc = c1[:, None, None] * P + c2[:, None, None] * gr[:, :, None] * gr[:, None, :]
            np.add.at(H, (b.idx[:, :, None], b.idx[:, None, :]), Hc)
            np.add.at(grad, b.idx, lamhat[:, None] * gr)
        A = self.A_dense
        M = A.shape[0]
        rhs_d = grad + (A.T @ nu if M else 0.0)
        r_pri = (A @ z - prob.b_eq) if M else np.zeros(0)
        KKT = np.zeros((N + M, N + M))
        KKT[:N, :N] = H
        if M:
            KKT[:N, N:] = A.T
            KKT[N:, :N] = A
        rhs = np.concatenate([-rhs_d, -r_pri])
        try:
            sol = np.linalg.solve(KKT, rhs)
        except np.linalg.LinAlgError:
            KKT[:N, :N] += 1e-10 * (1.0 + np.abs(H).max()) * np.eye(N)
            sol = np.linalg.solve(KKT, rhs)
        return sol[:N], sol[N:]

    def _newton_condensed(self, z, nu, lam_s, t_b, evals):
        prob, cn = self.prob, self.cond
        G, kg, ny, M = cn.G, cn.kg, cn.ny, cn.M_eq
        gy_w = max(cn.max_gy, 1)
        act = cn.has_act
        apos = cn.act_pos[act]
        mask = np.arange(gy_w)[None, :] < cn.gy_len[:, None]

        Hyy = np.zeros((ny, ny))
        Hww = np.zeros((G, kg, kg))
        Hyw = np.zeros((G, gy_w, kg))
        grad_y = np.zeros(ny)
        grad_w = np.zeros((G, kg))

        ci = prob.cost_idx
        ciy = cn.y_of[ci]
        Hyy[np.ix_(ciy, ciy)] += prob.P0
        full_grad = prob.cost_gradient(z)
        grad_y += full_grad[cn.y_idx]
        grad_w += full_grad[cn.gw]

        for b, (ycols, wcols, gids), yloc, lam, (g, gr) in zip(
                prob.blocks, cn.block_meta, cn.block_yloc, lam_s, evals):
            c1 = lam
            c2 = lam / (-g)
            lamhat = 1.0 / (t_b * (-g))
            P = np.broadcast_to(b.P, (b.count,) + b.P.shape[1:])
            Hc = c1[:, None, None] * P + c2[:, None, None] * gr[:, :, None] * gr[:, None, :]
            gc = lamhat[:, None] * gr
            if wcols.size == 0:
                yi = cn.y_of[b.idx]
                np.add.at(Hyy, (yi[:, :, None], yi[:, None, :]), Hc)
                np.add.at(grad_y, yi, gc)
                continue
            wloc = cn.w_pos[b.idx[:, wcols]]
            np.add.at(Hww, (gids[:, None, None], wloc[:, :, None], wloc[:, None, :]),
                      Hc[:, wcols[:, None], wcols[None, :]])
            np.add.at(grad_w, (gids[:, None], wloc), gc[:, wcols])
            if ycols.size:
                yi = cn.y_of[b.idx[:, ycols]]
                np.add.at(Hyy, (yi[:, :, None], yi[:, None, :]),
                          Hc[:, ycols[:, None], ycols[None, :]])
                np.add.at(grad_y, yi, gc[:, ycols])
                np.add.at(Hyw, (gids[:, None, None], yloc[:, :, None], wloc[:, None, :]),
                          Hc[:, ycols[:, None], wcols[None, :]])

        Ay, Ar = cn.Ay, cn.Ar
        rhs_d_y = grad_y + (Ay.T @ nu if M else 0.0)
        rhs_d_w = grad_w
        if M:
            Arnu = Ar.T @ nu
            rhs_d_w[act, apos] += Arnu[act]
            r_pri = Ay @ z[cn.y_idx] - prob.b_eq
            zw = z[cn.gw]
            r_pri += Ar @ np.where(cn.has_act,
                                   zw[np.arange(G), np.maximum(cn.act_pos, 0)], 0.0)
        else:
            r_pri = np.zeros(0)

        b1y, b1w, b2 = -rhs_d_y, -rhs_d_w, -r_pri

        # proportional jitter: near-active constraints make these blocks
        # ill-conditioned in floating point; the resulting inexactness is
        # repaired by iterative refinement against the unregularized system
        try:
            Hwwinv = np.linalg.inv(Hww)
        except np.linalg.LinAlgError:
            jit = 1e-13 * np.abs(Hww).max(axis=(1, 2)) + 1e-300
            Hwwinv = np.linalg.inv(Hww + jit[:, None, None] * np.eye(kg))
        HywI = np.einsum("gak,gkl->gal", Hyw, Hwwinv)
        Xg = np.einsum("gal,gbl->gab", HywI, Hyw)
        Hr = Hyy.copy()
        np.subtract.at(Hr, (cn.gy[:, :, None], cn.gy[:, None, :]), Xg)

        if M:
            d_act = np.zeros((G, kg))   # row act_pos of Hwwinv per group
            d_act[act] = Hwwinv[act, apos, :]
            Vg = np.einsum("gk,gak->ga", d_act, Hyw)      # (G, gy)
            Msc = sp.csr_matrix(
                (Vg.reshape(-1),
                 (np.repeat(np.arange(G), gy_w), cn.gy.reshape(-1))),
                shape=(G, ny))
            Z = (Msc.T @ Ar.T).T                          # (M, ny)
            drr = np.zeros(G)
            drr[act] = Hwwinv[act, apos, apos]
            W = (Ar * drr[None, :]) @ Ar.T
            KKT = np.zeros((ny + M, ny + M))
            KKT[:ny, :ny] = Hr
            KKT[:ny, ny:] = (Ay - Z).T
            KKT[ny:, :ny] = Ay - Z
            KKT[ny:, ny:] = -W
        else:
            KKT = Hr
        try:
            lu = la.lu_factor(KKT)
        except (np.linalg.LinAlgError, ValueError):
            KKT[:ny, :ny] += 1e-10 * (1.0 + np.abs(Hr).max()) * np.eye(ny)
            lu = la.lu_factor(KKT)

        def red_solve(r1y, r1w, r2):
            """One condensed solve of the Newton KKT system."""
            rhs_y = r1y.copy()
            t1 = np.einsum("gak,gk->ga", HywI, r1w)
            np.subtract.at(rhs_y, cn.gy, t1)
            if M:
                rhs_nu = r2 - Ar @ np.einsum("gk,gk->g", d_act, r1w)
                sol = la.lu_solve(lu, np.concatenate([rhs_y, rhs_nu]))
                dy, dnu = sol[:ny], sol[ny:]
            else:
                dy = la.lu_solve(lu, rhs_y)
                dnu = np.zeros(0)
            rw = r1w - np.einsum("gak,ga->gk", Hyw, dy[cn.gy] * mask)
            if M:
                Adnu = Ar.T @ dnu
                rw[act, apos] -= Adnu[act]
            dw = np.einsum("gkl,gl->gk", Hwwinv, rw)
            return dy, dw, dnu

        def kkt_apply(dy, dw, dnu):
            """Exact product of the (unregularized) Newton KKT matrix."""
            oy = Hyy @ dy
            t = np.einsum("gak,gk->ga", Hyw, dw)
            np.add.at(oy, cn.gy, t * mask)
            ow = np.einsum("gak,ga->gk", Hyw, dy[cn.gy] * mask)
            ow += np.einsum("gkl,gl->gk", Hww, dw)
            if M:
                oy += Ay.T @ dnu
                Adnu = Ar.T @ dnu
                ow[act, apos] += Adnu[act]
                op = Ay @ dy
                dw_act = np.where(cn.has_act,
                                  dw[np.arange(G), np.maximum(cn.act_pos, 0)], 0.0)
                op += Ar @ dw_act
            else:
                op = np.zeros(0)
            return oy, ow, op

        dy, dw, dnu = red_solve(b1y, b1w, b2)
        rhs_norm = np.sqrt(np.linalg.norm(b1y)**2 + np.linalg.norm(b1w)**2
                           + np.linalg.norm(b2)**2) + 1e-300
        for _ in range(3):
            oy, ow, op = kkt_apply(dy, dw, dnu)
            e1y, e1w, e2 = b1y - oy, b1w - ow, b2 - op
            err = np.sqrt(np.linalg.norm(e1y)**2 + np.linalg.norm(e1w)**2
                          + np.linalg.norm(e2)**2)
            if err <= 1e-13 * rhs_norm:
                break
            cy, cw, cnu = red_solve(e1y, e1w, e2)
            dy, dw, dnu = dy + cy, dw + cw, dnu + cnu

        dz = np.zeros(prob.num_vars)
        dz[cn.y_idx] = dy
        dz[cn.gw.reshape(-1)] = dw.reshape(-1)
        return dz, dnu

    # -- line search helpers -------------------------------------------------

    def _max_feasible_step(self, z, dz, evals):
        """Largest step along dz keeping every g < 0 (exact quadratic roots)."""
        amax = np.inf
        for b, (g, gr) in zip(self.prob.blocks, evals):
            di = dz[b.idx]
            P = np.broadcast_to(b.P, (b.count,) + b.P.shape[1:])
            a2 = 0.5 * np.einsum("ck,ckl,cl->c", di, P, di)
            a1 = np.einsum("ck,ck->c", gr, di)
            # g + a1*t + a2*t^2 = 0, smallest positive root per constraint
            with np.errstate(invalid="ignore", divide="ignore"):
                disc = a1**2 - 4.0 * a2 * g
                sq = np.sqrt(np.maximum(disc, 0.0))
                qq = -0.5 * (a1 + np.sign(a1 + (a1 == 0)) * sq)
                r1 = np.where(a2 != 0, qq / np.where(a2 != 0, a2, 1.0), np.inf)
                r2 = np.where(qq != 0, g / np.where(qq != 0, qq, 1.0), np.inf)
            roots = np.concatenate([r1, r2])
            roots = roots[np.isfinite(roots) & (roots > 0)]
            if roots.size:
                amax = min(amax, float(roots.min()))
        return amax

    # -- driver -------------------------------------------------------------

    def solve(self, z0: np.ndarray) -> SolveReport:
        prob, st = self.prob, self.st
        M_ineq = prob.num_ineq
        nu = np.zeros(prob.A_eq.shape[0])
        z = z0.copy()
        scale = 1.0 + abs(prob.objective(z))
        if M_ineq == 0:
            if self.cond is not None:
                dz, dnu = self._newton_condensed(z, nu, [], 1.0, [])
            else:
                dz, dnu = self._newton_dense(z, nu, [], 1.0, [])
            self.newton_count += 1
            return self._report(z + dz, nu + dnu, [], status_hint="Optimal")

        evals = self._eval_blocks(z)
        if evals is None:
            raise NumericError("starting point is not strictly feasible")
        # cap the initial multipliers: 1/(-g) alone explodes when the start
        # sits close to a boundary, creating a huge artificial dual residual
        lam_s = [np.minimum(1.0 / (-g), 1e2) for g, _ in evals]
        status_hint = "MaxIter"
        best_merit = np.inf
        since_best = 0
        while self.newton_count < st.max_iter:
            eta = -sum(float(lam @ g) for lam, (g, _) in zip(lam_s, evals))
            r_d = self._dual_residual(z, nu, lam_s, evals)
            r_p = (prob.A_eq @ z - prob.b_eq) if nu.size else np.zeros(0)
            res_feas = np.sqrt(np.linalg.norm(r_d)**2 + np.linalg.norm(r_p)**2)
            if eta <= st.tol_gap * scale and res_feas <= 1e3 * st.tol_newton * scale:
                status_hint = "Optimal"
                break
            merit = eta + res_feas
            if merit < 0.9 * best_merit:
                best_merit = merit
                since_best = 0
            else:
                since_best += 1
                if since_best >= 10:
                    break   # numerical floor; report what we have
            # keep the barrier parameter tied to the worse of gap and
            # infeasibility, else the gap collapses prematurely and iterates
            # get pinned against curved constraints
            t_b = st.mu * M_ineq / max(eta, st.feas_weight * res_feas)
            if self.cond is not None:
                dz, dnu = self._newton_condensed(z, nu, lam_s, t_b, evals)
            else:
                dz, dnu = self._newton_dense(z, nu, lam_s, t_b, evals)
            self.newton_count += 1
            # multiplier step: dlam = (lam/(-g)) (grad g . dz) - lam + lamhat
            dlam_s = [
                (lam / (-g)) * np.einsum("ck,ck->c", gr, dz[b.idx])
                - lam + 1.0 / (t_b * (-g))
                for b, lam, (g, gr) in zip(prob.blocks, lam_s, evals)
            ]
            # step limits: lam + s dlam > 0 and strict primal feasibility
            s_max = 1.0
            for lam, dlam in zip(lam_s, dlam_s):
                neg = dlam < 0
                if np.any(neg):
                    s_max = min(s_max, float((-lam[neg] / dlam[neg]).min()))
            step = 0.99 * min(s_max, self._max_feasible_step(z, dz, evals))
            step = min(step, 1.0)
            res0 = self._full_residual_norm(z, nu, lam_s, t_b, evals)
            accepted = False
            for _ in range(50):
                z_new = z + step * dz
                evals_new = self._eval_blocks(z_new)
                if evals_new is not None:
                    nu_new = nu + step * dnu
                    lam_new = [lam + step * dlam
                               for lam, dlam in zip(lam_s, dlam_s)]
                    res_new = self._full_residual_norm(
                        z_new, nu_new, lam_new, t_b, evals_new)
                    if res_new <= (1.0 - st.line_search_alpha * step) * res0 \
                            + 1e-14 * scale:
                        accepted = True
                        break
                step *= st.line_search_beta
            if not accepted:
                # stalled at the numerical floor; report what we have
                break
            z, nu, lam_s, evals = z_new, nu_new, lam_new, evals_new
        return self._report(z, nu, lam_s, status_hint)

    def _report(self, z, nu, lam_s, status_hint):
        prob = self.prob
        g_all = prob.constraint_values(z)
        lam = np.concatenate(lam_s) if lam_s else np.zeros(0)
        stat = prob.cost_gradient(z)
        off = 0
        for b in prob.blocks:
            _, gr = b.evaluate(z)
            np.add.at(stat, b.idx, lam[off:off + b.count, None] * gr)
            off += b.count
        if prob.A_eq.shape[0]:
            stat = stat + prob.A_eq.T @ nu
            eq_res = float(np.max(np.abs(prob.A_eq @ z - prob.b_eq)))
        else:
            eq_res = 0.0
        viol = float(np.max(g_all)) if g_all.size else 0.0
        kkt = float(np.max(np.abs(stat)))
        gap = float(-(lam @ g_all)) if g_all.size else 0.0
        scale = 1.0 + abs(prob.objective(z))
        status = status_hint
        if status == "Optimal" and not (
                eq_res < 1e-8 * scale and viol < 1e-8 and kkt < 1e-6 * scale):
            status = "MaxIter"
        return SolveReport(
            z=z, objective=prob.objective(z), eq_residual=eq_res,
            ineq_violation=max(viol, 0.0), kkt_residual=kkt,
            iterations=self.newton_count, status=status, duality_gap=gap,
            lam=lam, nu=np.asarray(nu), effective_vars=prob.num_vars,
            num_constraints=prob.num_ineq + prob.A_eq.shape[0])


def _least_squares_eq_point(prob: ConvexQcqp) -> np.ndarray:
    if prob.A_eq.shape[0] == 0:
        return np.zeros(prob.num_vars)
    A = np.asarray(prob.A_eq.todense())
    z, *_ = np.linalg.lstsq(A, prob.b_eq, rcond=None)
    return z


def phase1(prob: ConvexQcqp, settings: SolverSettings | None = None,
           z_hint: np.ndarray | None = None) -> np.ndarray | None:
    """Strictly feasible point via slack minimization, or None if infeasible.

    Minimizes an extra scalar s with every inequality relaxed to g(z) <= s
    (bounded below by s >= -1), keeping the equalities exact.
    """
    settings = settings or SolverSettings()
    N = prob.num_vars
    z0 = z_hint if z_hint is not None else _least_squares_eq_point(prob)
    if not prob.blocks:
        return z0
    g0 = prob.constraint_values(z0)
    s0 = float(max(g0.max(), 0.0)) + 1.0
    blocks = []
    for b in prob.blocks:
        k = b.idx.shape[1]
        idx = np.hstack([b.idx, np.full((b.count, 1), N, dtype=np.intp)])
        P = np.zeros((b.P.shape[0], k + 1, k + 1))
        P[:, :k, :k] = b.P
        q = np.hstack([b.q, np.full((b.count, 1), -1.0)])
        blocks.append(ConstraintBlock(idx, P, q, b.c))
    blocks.append(ConstraintBlock(
        np.array([[N]]), np.zeros((1, 1, 1)), np.array([[-1.0]]), np.array([-1.0])))
    A = prob.A_eq
    A1 = sp.hstack([A, sp.csr_matrix((A.shape[0], 1))]).tocsr() if A.shape[0] else \
        sp.csr_matrix((0, N + 1))
    q0 = np.zeros(N + 1)
    q0[N] = 1.0
    aux = ConvexQcqp(
        num_vars=N + 1, cost_idx=np.array([], dtype=np.intp),
        P0=np.zeros((0, 0)), q0=q0, r0=0.0, A_eq=A1, b_eq=prob.b_eq,
        blocks=tuple(blocks), elim=None)
    zs0 = np.concatenate([z0, [s0]])
    rep = _InteriorPointSolver(aux, replace(settings, tol_gap=1e-6)).solve(zs0)
    z, s = rep.z[:N], rep.z[N]
    if s < -1e-9:
        return z
    return None


def solve(prob: ConvexQcqp, warm_start: np.ndarray | None = None,
          settings: SolverSettings | None = None) -> SolveReport:
    """Interior-point solve from a warm start (used when strictly feasible) or
    a phase-1 point; reports Infeasible when no strictly feasible point exists."""
    settings = settings or SolverSettings()
    z0 = None
    if warm_start is not None:
        w = np.asarray(warm_start, dtype=float)
        g = prob.constraint_values(w)
        if g.size == 0 or g.max() < 0:
            z0 = w
    if z0 is None:
        z0 = phase1(prob, settings, z_hint=warm_start)
        if z0 is None:
            zero = np.zeros(prob.num_vars)
            return SolveReport(
                z=zero, objective=float("nan"), eq_residual=float("inf"),
                ineq_violation=float("inf"), kkt_residual=float("inf"),
                iterations=0, status="Infeasible", duality_gap=float("inf"),
                lam=np.zeros(prob.num_ineq), nu=np.zeros(prob.A_eq.shape[0]),
                effective_vars=prob.num_vars,
                num_constraints=prob.num_ineq + prob.A_eq.shape[0])
    return _InteriorPointSolver(prob, settings).solve(z0)
