import warnings

import numpy as np
import pytest
from scipy.optimize import brentq

from hjtraj.bi_phase import (
    LineInterface,
    bi_phase_arcs,
    interface_of,
    total_cost,
    two_phase_hessian,
)
from hjtraj.errors import MaxIterations, NoSignChange
from hjtraj.model import Instance, QuadraticPhase
from hjtraj.single_phase import evaluate, positions, solve_arc, value
from hjtraj.solvers import (
    MultipleCrossingsWarning,
    SolverConfig,
    aoa,
    b_algo,
    bisection_depth,
    brute_force,
    check_single_crossing,
    cost_grid,
    grad_algo,
    interface_grid,
    mpc,
    plan_single_phase,
    sample_plan,
)
from instances import random_two_hotspot

MIRROR = Instance(K=1.0, t0=0.0, T=2.0, z0=(-2, 0.5), zT=(2, 0.5),
                  phases=(QuadraticPhase((-1, 0), -1.5, 0.2), QuadraticPhase((1, 0), -1.5, 0.2)))


def _identical(interface_x=0.5):
    ph = QuadraticPhase((0.5, 0.5), -1.2, 0.0)
    return Instance(K=1.3, t0=0.0, T=2.0, z0=(-1, 0), zT=(2, 1.5), phases=(ph, ph),
                    interface=LineInterface((1, 0), interface_x))


def _instances(seed, n):
    rng = np.random.default_rng(seed)
    return [random_two_hotspot(rng) for _ in range(n)]


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(eps_p=0)
    with pytest.raises(ValueError):
        SolverConfig(M_tau=0)
    with pytest.raises(ValueError):
        SolverConfig(delta_tau=-1.0)
    assert SolverConfig().eps_B == 2e-4


def test_bisection_depth():
    assert bisection_depth(2e-4) == 12
    assert bisection_depth(1e-3) == 10


def test_b_algo_iterations_and_residuals():
    for inst in _instances(100, 8):
        res = b_algo(inst)
        sol = res.solution
        assert res.outer_iterations == 12
        assert res.converged
        assert sol.g_p < 2e-4 and sol.g_H < 2e-4
        assert abs(sol.mu) <= 1e-9 * np.linalg.norm(sol.p_minus)
        assert res.S_total == pytest.approx(sum(value(a) for a in res.trajectory))
        a1, a2 = res.trajectory
        np.testing.assert_array_equal(a1.z_end, a2.z_start)
        assert a1.t_end == a2.t_start == sol.tau


def test_b_algo_plain_bisection_variant():
    inst = _instances(101, 1)[0]
    res = b_algo(inst, SolverConfig(b_refine=False))
    assert res.outer_iterations == 12
    refined = b_algo(inst)
    assert abs(res.solution.tau - refined.solution.tau) <= 2 ** -12 * inst.duration


def test_b_algo_is_deterministic():
    inst = _instances(102, 1)[0]
    r1, r2 = b_algo(inst), b_algo(inst)
    assert r1.solution.tau == r2.solution.tau
    np.testing.assert_array_equal(r1.solution.xi, r2.solution.xi)
    assert r1.cost_history == r2.cost_history


def test_b_algo_needs_sign_change():
    inst = _instances(103, 1)[0]
    mid = inst.t0 + 0.5 * inst.duration
    with pytest.raises(NoSignChange):
        b_algo(inst, bracket=(mid, mid + 1e-9))


def test_b_algo_identical_phases_finds_single_phase_crossing():
    inst = _identical()
    arc = solve_arc(inst.K, inst.phases[0], inst.t0, inst.z0, inst.T, inst.zT)
    t_star = brentq(lambda t: positions(arc, t)[0] - 0.5, inst.t0, inst.T, xtol=1e-14)
    res = b_algo(inst)
    assert abs(res.solution.tau - t_star) <= 2e-4 * inst.duration
    np.testing.assert_allclose(res.solution.xi, positions(arc, res.solution.tau), atol=1e-12)


def test_grad_algo_identical_phases():
    inst = _identical()
    res = grad_algo(inst)
    arc = solve_arc(inst.K, inst.phases[0], inst.t0, inst.z0, inst.T, inst.zT)
    assert res.converged and res.outer_iterations <= 2
    assert res.S_total == pytest.approx(value(arc), rel=1e-6)


def test_grad_algo_mirror_symmetric():
    res = grad_algo(MIRROR)
    assert res.converged
    assert res.solution.tau == pytest.approx(1.0, abs=1e-6)
    assert res.solution.xi[0] == pytest.approx(0.0, abs=1e-12)


def test_grad_and_b_agree_and_satisfy_stationarity():
    for inst in _instances(104, 8):
        g, b = grad_algo(inst), b_algo(inst)
        assert g.converged
        assert abs(g.S_total - b.S_total) <= 1e-3 * abs(b.S_total)
        assert g.solution.g_p < 2e-4 and g.solution.g_H < 2e-4
        assert len(g.pd_history) == g.outer_iterations
        assert abs(interface_of(inst).level(g.solution.xi)) < 1e-9


def test_velocity_continuity_at_solution():
    for inst in _instances(105, 8):
        res = b_algo(inst)
        a1, a2 = res.trajectory
        v_minus = evaluate(a1, a1.t_end)[1]
        v_plus = evaluate(a2, a2.t_start)[1]
        scale = max(np.linalg.norm(v_minus), np.linalg.norm(v_plus))
        assert np.linalg.norm(v_minus - v_plus) / scale < 2e-4


def test_aoa_from_b_solution_is_stationary():
    inst = _instances(106, 1)[0]
    b = b_algo(inst)
    start = interface_of(inst).project(b.solution.xi)  # AOA needs a feasible crossing
    res = aoa(inst, SolverConfig(), (b.solution.tau, start))
    assert res.converged and res.outer_iterations <= 2
    assert res.solution.tau == b.solution.tau
    np.testing.assert_array_equal(res.solution.xi, start)


def test_aoa_small_step_reaches_b_cost():
    cfg = SolverConfig()
    for inst in _instances(107, 3):
        b = b_algo(inst)
        res = aoa(inst, SolverConfig(delta_tau=1e-5 * inst.duration, max_outer=200_000))
        hist = np.array(res.cost_history)
        assert np.all(np.diff(hist) <= cfg.eps_S)
        assert abs(res.S_total - b.S_total) <= 10 * cfg.eps_S


def test_aoa_max_iterations_carries_partial_result():
    inst = _instances(108, 1)[0]
    with pytest.raises(MaxIterations) as info:
        aoa(inst, SolverConfig(max_outer=3))
    partial = info.value.partial
    assert partial is not None and not partial.converged
    assert len(partial.cost_history) == 4


def test_mpc_single_phase_is_closed_form():
    ph = QuadraticPhase((0.3, -0.2), -0.9, 0.1)
    inst = Instance(K=1.1, t0=0.0, T=3.0, z0=(-1, 2), zT=(2, -1), phases=(ph,))
    res = mpc(inst, dt=0.03)
    arc = plan_single_phase(inst).trajectory[0]
    np.testing.assert_allclose(res.positions, positions(arc, res.times), atol=1e-9)
    assert res.cost == pytest.approx(value(arc), rel=1e-9)


def test_mpc_endpoint_and_cost_bound():
    for inst in _instances(109, 6):
        res = mpc(inst)
        np.testing.assert_allclose(res.positions[-1], inst.zT, atol=1e-9)
        b = b_algo(inst)
        if b.hessian.is_positive_definite:
            assert res.cost >= b.S_total - 1e-6


def test_brute_force_refinement_is_monotone():
    # nested grids: tau grid with (n-1) doubling, angle grid with n doubling
    inst = next(i for i in _instances(110, 20) if type(interface_of(i)).__name__ == "CircleInterface")
    mins = [brute_force(inst, n_tau=25 * 2 ** k + 1, n_xi=50 * 2 ** k).S for k in range(4)]
    assert all(b <= a for a, b in zip(mins, mins[1:]))


def test_brute_force_matches_sequential_scan():
    inst = _instances(111, 1)[0]
    res = brute_force(inst, n_tau=17, n_xi=23)
    taus = np.linspace(inst.t0 + 1e-3 * inst.duration, inst.T - 1e-3 * inst.duration, 17)
    xis, _ = interface_grid(inst, 23)
    best = (np.inf, None)
    for i, t in enumerate(taus):
        for j, x in enumerate(xis):
            s = total_cost(inst, t, x)
            if s < best[0]:
                best = (s, (i, j))
    i, j = best[1]
    assert res.tau == taus[i]
    np.testing.assert_array_equal(res.xi, xis[j])
    np.testing.assert_allclose(cost_grid(inst, taus, xis)[i, j], best[0], rtol=1e-12)


def test_brute_force_identical_phases_approaches_crossing():
    inst = _identical()
    arc = solve_arc(inst.K, inst.phases[0], inst.t0, inst.z0, inst.T, inst.zT)
    t_star = brentq(lambda t: positions(arc, t)[0] - 0.5, inst.t0, inst.T, xtol=1e-14)
    coarse = brute_force(inst, 50, 50)
    fine = brute_force(inst, 400, 400)
    err = lambda r: abs(r.tau - t_star)
    assert err(fine) <= err(coarse) + 1e-12
    assert err(fine) <= 2 * fine.h_tau
    assert fine.S >= value(arc) - 1e-12


def test_multiple_crossings_warning():
    inst = _identical(interface_x=0.0).replace(z0=(-1, 0), zT=(-1, 0.5))
    arcs = bi_phase_arcs(inst, 1.0, (1.0, 0.2))
    with pytest.warns(MultipleCrossingsWarning):
        assert check_single_crossing(inst, arcs) == 2
    good = bi_phase_arcs(inst.replace(zT=(1, 0.5)), 1.0, (0.0, 0.2))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert check_single_crossing(inst.replace(zT=(1, 0.5)), good) == 1


def test_sample_plan_invariants():
    for inst in _instances(112, 4):
        res = b_algo(inst)
        s = sample_plan(res, inst)
        assert len(s["t"]) == 512
        np.testing.assert_allclose([s["x"][0], s["y"][0]], inst.z0, atol=1e-12)
        np.testing.assert_allclose([s["x"][-1], s["y"][-1]], inst.zT, atol=1e-9)
        for k in (1, 2):
            H = s["H"][s["phase"] == k]
            assert np.ptp(H) <= 1e-6 * np.max(np.abs(H))
        assert np.all(np.diff(s["phase"]) >= 0)


def test_two_phase_hessian_recorded_on_result():
    inst = _instances(113, 1)[0]
    res = grad_algo(inst)
    direct = two_phase_hessian(inst, res.solution.tau, res.solution.xi)
    np.testing.assert_allclose(res.hessian.eigenvalues, direct.eigenvalues)
