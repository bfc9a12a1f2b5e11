import numpy as np
import pytest

from bilinopt import ccp, qcqp
from bilinopt.represent import Alpha, reconstruct, represent
from bilinopt.systems import random_system, simulate
from conftest import make_system_and_data


def _lift_for(n=1, m=1, T=2, seed=0, xf_from_inputs=None):
    """Small lifted instance with a reachable target (built by simulation)."""
    sys_, traj, dm = make_system_and_data(n, m, T, seed=seed, extra=2)
    gen = np.random.default_rng(seed + 7)
    x0 = gen.standard_normal(n) * 0.3
    u_demo = (xf_from_inputs if xf_from_inputs is not None
              else gen.uniform(-0.4, 0.4, (T, m)))
    xf = simulate(sys_, x0, u_demo).states[-1]
    prob = ccp.OcProblem(np.eye(n), np.eye(m), x0, xf, T)
    lift = ccp.lift_to_p3(ccp.build_p2(dm, prob))
    return sys_, dm, prob, lift


def test_oc_problem_validation():
    with pytest.raises(ValueError):
        ccp.OcProblem(np.array([[0.0, 1.0], [1.0, 0.0]]), np.eye(1),
                      np.zeros(2), np.zeros(2), 3)   # indefinite Q
    with pytest.raises(ValueError):
        ccp.OcProblem(np.eye(2), np.eye(1), np.zeros(2), np.zeros(2), 0)
    with pytest.raises(ValueError):
        ccp.OcProblem(np.eye(2), np.eye(1), np.zeros(3), np.zeros(2), 1)


def test_build_p2_cost_matches_rollout():
    sys_, dm, prob, _ = _lift_for(n=2, m=1, T=3, seed=1)
    p2 = ccp.build_p2(dm, prob)
    gen = np.random.default_rng(0)
    traj = simulate(sys_, prob.x0, gen.uniform(-0.3, 0.3, (3, 1)))
    a = represent(traj, dm).coefficients
    direct = sum(traj.states[t] @ prob.Q @ traj.states[t]
                 + traj.inputs[t] @ prob.R @ traj.inputs[t] for t in range(3))
    assert abs(p2.cost(a) - direct) < 1e-8 * (1 + abs(direct))


def test_build_p2_dimension_checks():
    _, _, dm = make_system_and_data(2, 1, 3, seed=2)
    bad_T = ccp.OcProblem(np.eye(2), np.eye(1), np.zeros(2), np.zeros(2), 4)
    with pytest.raises(ValueError):
        ccp.build_p2(dm, bad_T)
    bad_n = ccp.OcProblem(np.eye(3), np.eye(1), np.zeros(3), np.zeros(3), 3)
    with pytest.raises(ValueError):
        ccp.build_p2(dm, bad_n)


def test_lift_indexing_invariants():
    _, dm, _, lift = _lift_for(n=1, m=1, T=2, seed=3)
    Ma = lift.num_alpha
    assert Ma == dm.cols
    assert lift.num_pairs == Ma * (Ma + 1) // 2
    # row-major upper-triangular pair order and interleaved (r, s) layout
    k = 0
    for i in range(Ma):
        for j in range(i, Ma):
            assert lift.pair_i[k] == i and lift.pair_j[k] == j
            assert lift.r_index(i, j) == Ma + 2 * k
            assert lift.s_index(i, j) == Ma + 2 * k + 1
            k += 1
    assert lift.a1_row_counts == {"boundary": 2 * dm.n,
                                  "coupling": dm.m * dm.n * dm.T}
    assert lift.A1.shape == (2 * dm.n + dm.m * dm.n * dm.T,
                             Ma + 2 * lift.num_pairs)
    assert lift.num_terminal_rows == dm.n


def test_pair_products():
    _, _, _, lift = _lift_for(n=1, m=1, T=2, seed=4)
    a = np.random.default_rng(0).standard_normal(lift.num_alpha)
    prods = lift.pair_products(a)
    np.testing.assert_allclose(prods, a[lift.pair_i] * a[lift.pair_j],
                               atol=1e-14)


def test_lifted_equalities_hold_on_exact_lift():
    # plugging (alpha, r = alpha alpha') of a represented trajectory into the
    # lifted equality block must satisfy it
    sys_, dm, prob, lift = _lift_for(n=2, m=1, T=3, seed=5)
    a, viol, ok = ccp.restore(lift, np.zeros(lift.num_alpha), True,
                              1e-12, 50)
    assert ok and viol < 1e-9
    z = np.zeros(lift.num_vars)
    z[:lift.num_alpha] = a
    z[lift.num_alpha::2] = lift.pair_products(a)
    resid = lift.A1 @ z - lift.b1
    assert float(np.max(np.abs(resid))) < 1e-8


def test_warm_start_strictly_feasible():
    _, _, _, lift = _lift_for(n=1, m=1, T=2, seed=6)
    a = 0.1 * np.random.default_rng(1).standard_normal(lift.num_alpha)
    for tau in (1e-4, 1.0, 1e4):
        z = ccp.warm_start_point(lift, a, tau)
        prob_q = ccp.assemble_subproblem(lift, a, tau)
        g = prob_q.constraint_values(z)
        assert g.max() < 0.0, f"tau {tau}: not strictly feasible"


def test_restore_projects_back():
    _, _, _, lift = _lift_for(n=2, m=1, T=3, seed=7)
    a0, viol0, ok0 = ccp.restore(lift, np.zeros(lift.num_alpha), True,
                                 1e-11, 50)
    assert ok0
    noisy = a0 + 1e-3 * np.random.default_rng(2).standard_normal(a0.size)
    a1, viol1, ok1 = ccp.restore(lift, noisy, True, 1e-11, 50)
    assert ok1 and viol1 < 1e-10


def test_trivial_zero_problem():
    _, _, dm = make_system_and_data(1, 1, 2, seed=8)
    prob = ccp.OcProblem(np.eye(1), np.eye(1), np.zeros(1), np.zeros(1), 2)
    sol, prob_eff, report = ccp.solve_from_data(dm, prob)
    assert sol.status == "Converged"
    assert abs(sol.cost) < 1e-12
    assert report["phase_a"]["method"] == "zero"
    assert prob_eff is prob


def test_small_end_to_end_contract():
    sys_, dm, prob, lift = _lift_for(n=1, m=1, T=2, seed=9)
    sol, prob_eff, _ = ccp.solve_from_data(dm, prob)
    assert sol.status == "Converged"
    # monotone descent and per-iterate feasibility straight off the trace
    costs = [rec["cost"] for rec in sol.trace]
    assert all(c2 <= c1 + 1e-9 for c1, c2 in zip(costs, costs[1:]))
    assert all(rec["violation"] < 1e-6 for rec in sol.trace)
    # critical point: no strictly improving re-linearized step remains
    assert ccp.fixed_point_step(lift, sol.alpha) < 1e-6
    # the reconstruction is a genuine trajectory hitting the endpoints
    rec = sol.reconstruction
    assert rec.consistency_residual < 1e-6
    np.testing.assert_allclose(rec.states[0], prob.x0, atol=1e-6)
    np.testing.assert_allclose(rec.states[-1], prob_eff.xf, atol=1e-6)


def test_dc_pinch_at_subproblem_solution():
    _, _, _, lift = _lift_for(n=1, m=1, T=2, seed=10)
    a0, _, ok = ccp.restore(lift, np.zeros(lift.num_alpha), True, 1e-11, 50)
    assert ok
    rep = qcqp.solve(ccp.assemble_subproblem(lift, a0, tau=1.0),
                     warm_start=ccp.warm_start_point(lift, a0, 1.0))
    assert rep.kkt_residual < 1e-5
    z = rep.z
    Ma = lift.num_alpha
    r = z[Ma::2]
    s = z[Ma + 1::2]
    prods = z[lift.pair_i] * z[lift.pair_j]
    # feasibility of the convexified pair forces |r - a_i a_j| <= s/2
    assert np.all(np.abs(r - prods) <= 0.5 * s + 1e-9)


def test_initialization_unreachable_raises():
    # a stable uncontrolled scalar system cannot reach a far-away target
    _, _, dm = make_system_and_data(1, 1, 2, seed=11)
    prob = ccp.OcProblem(np.eye(1), np.eye(1), np.zeros(1),
                         np.array([1e6]), 2)
    with pytest.raises(Exception):
        ccp.find_initial_alpha(dm, prob,
                               settings=ccp.CcpSettings(max_outer=5),
                               max_outer=5)


def test_extract_control_replay():
    from bilinopt.experiment import SimulatedPlant

    sys_, dm, prob, lift = _lift_for(n=1, m=1, T=2, seed=12)
    sol, prob_eff, _ = ccp.solve_from_data(dm, prob)
    ext = ccp.extract_control(sol, dm, SimulatedPlant(sys_, prob.x0))
    assert ext.replay_max_deviation < 1e-6
    np.testing.assert_allclose(ext.replayed_states[-1], prob_eff.xf,
                               atol=1e-5)
