"""Planning procedures for the bi-phase crossing problem and a brute-force oracle.

``grad_algo``
    Alternates ``xi <- Proj(B(tau))`` with Newton steps on ``tau``.
``b_algo``
    Bisection on ``tau`` for the crossing of the B-curve with the interface.
``aoa``
    Alternating fixed-step descent on ``tau`` and projection on ``xi``.
``mpc``
    Greedy receding-horizon baseline over the max-traffic landscape.
``brute_force``
    Exhaustive grid over ``(tau, interface parameter)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .bi_phase import (
    CircleInterface,
    CrossingSolution,
    HessianSummary,
    _require_hyperbolic,
    b_point,
    bi_phase_arcs,
    crossing_state,
    in_zone2,
    interface_of,
    total_cost,
    two_phase_hessian,
)
from .errors import MaxIterations, NoSignChange
from .model import Instance, QuadraticPhase, vec2
from .single_phase import TrajectoryArc, evaluate, simpson, solve_arc, value, value_batch

__all__ = [
    "SolverConfig",
    "PlanResult",
    "MPCResult",
    "BruteForceResult",
    "MultipleCrossingsWarning",
    "grad_algo",
    "b_algo",
    "aoa",
    "mpc",
    "brute_force",
    "in_zone2",
    "plan_single_phase",
    "sample_plan",
]

WINDOW_MARGIN = 1e-3  # fraction of the window kept clear of t0 and T


@dataclass(frozen=True)
class SolverConfig:
    eps_p: float = 2e-4
    eps_H: float = 2e-4
    eps_B: float = 2e-4
    M_tau: int = 10
    delta_tau: float | None = None  # AOA step; None means 1e-3 of the window
    eps_tau: float = 1e-12
    eps_xi: float = 1e-12
    eps_S: float = 1e-9
    max_outer: int = 5000
    mpc_dt: float | None = None  # None means window / 200
    b_refine: bool = True  # interpolate the B-Algo crossing inside the last bracket

    def __post_init__(self) -> None:
        for name in ("eps_p", "eps_H", "eps_B", "eps_tau", "eps_xi", "eps_S"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.M_tau < 1:
            raise ValueError("M_tau must be at least 1")
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")
        if self.delta_tau is not None and not self.delta_tau > 0:
            raise ValueError("delta_tau must be positive")
        if self.mpc_dt is not None and not self.mpc_dt > 0:
            raise ValueError("mpc_dt must be positive")


@dataclass(frozen=True, eq=False)
class PlanResult:
    solution: CrossingSolution | None
    trajectory: tuple[TrajectoryArc, ...]
    outer_iterations: int
    converged: bool
    cost_history: list[float]
    solver: str = ""
    hessian: HessianSummary | None = None
    pd_history: list[bool] = field(default_factory=list)
    clamped: bool = False

    @property
    def S_total(self) -> float:
        return sum(value(a) for a in self.trajectory)


class MultipleCrossingsWarning(UserWarning):
    """The planned trajectory crosses the interface more than once."""


def _window(instance: Instance) -> tuple[float, float]:
    m = WINDOW_MARGIN * instance.duration
    return instance.t0 + m, instance.T - m


def _zone_side(instance: Instance, z: np.ndarray) -> np.ndarray:
    iface = interface_of(instance)
    return np.asarray(iface.level(z)) > 0.0


def check_single_crossing(instance: Instance, arcs, n: int = 1000) -> int:
    """Count zone changes along the trajectory and warn when there is more than one."""
    t = np.linspace(instance.t0, instance.T, n)
    z = _sample_positions(arcs, t)
    side = _zone_side(instance, z)
    changes = int(np.count_nonzero(side[1:] != side[:-1]))
    if changes > 1:
        warnings.warn(f"trajectory changes zone {changes} times", MultipleCrossingsWarning,
                      stacklevel=3)
    return changes


def _finish(instance, solver, tau, xi, iters, converged, history, pd_history=(),
            clamped=False) -> PlanResult:
    sol = crossing_state(instance, tau, xi, iterations=iters)
    arcs = bi_phase_arcs(instance, tau, xi)
    check_single_crossing(instance, arcs)
    return PlanResult(
        solution=sol, trajectory=arcs, outer_iterations=iters, converged=converged,
        cost_history=list(history), solver=solver,
        hessian=two_phase_hessian(instance, tau, xi), pd_history=list(pd_history),
        clamped=clamped,
    )


def plan_single_phase(instance: Instance) -> PlanResult:
    """Closed-form plan for a one-phase instance."""
    (ph,) = instance.phases
    arc = solve_arc(instance.K, ph, instance.t0, instance.z0, instance.T, instance.zT)
    return PlanResult(solution=None, trajectory=(arc,), outer_iterations=0, converged=True,
                      cost_history=[value(arc)], solver="closed-form")


# -- Grad-Algo -------------------------------------------------------------------


def default_init(instance: Instance) -> tuple[float, np.ndarray]:
    iface = interface_of(instance)
    tau0 = 0.5 * (instance.t0 + instance.T)
    return tau0, iface.project(0.5 * (instance.z0 + instance.zT))


def _converged(sol: CrossingSolution, config: SolverConfig) -> bool:
    return sol.g_p < config.eps_p and sol.g_H < config.eps_H


def grad_algo(instance: Instance, config: SolverConfig = SolverConfig(),
              init: tuple[float, np.ndarray] | None = None) -> PlanResult:
    """Projected-B / Newton-on-tau iteration.

    Each outer iteration sets ``xi`` to the projection of ``B(tau)`` and then
    takes ``M_tau`` Newton steps ``tau <- tau - (H+ - H-)/alpha``.  When
    ``alpha`` is not safely positive, or the step would leave the window, a
    damped gradient step is taken instead and ``tau`` is clamped.
    """
    _require_hyperbolic(instance)
    iface = interface_of(instance)
    lo, hi = _window(instance)
    tau, xi = init if init is not None else default_init(instance)
    tau = min(max(float(tau), lo), hi)
    xi = vec2(xi)
    history: list[float] = []
    pd_history: list[bool] = []
    clamped = False
    converged = False
    it = 0
    for it in range(1, config.max_outer + 1):
        xi = iface.project(b_point(instance, tau))
        for _ in range(config.M_tau):
            sol = crossing_state(instance, tau, xi)
            dH = sol.delta_H
            h_scale = max(abs(sol.H_plus), abs(sol.H_minus), 1e-300)
            if abs(dH) <= 1e-15 * h_scale:
                break
            alpha = two_phase_hessian(instance, tau, xi).alpha
            new_tau = tau - dH / alpha if alpha > 1e-12 * h_scale else math.nan
            if not lo <= new_tau <= hi:  # NaN also lands here
                lam = 0.1 * instance.duration / h_scale
                new_tau = tau - lam * dH
                if not lo <= new_tau <= hi:
                    clamped = True
                    new_tau = min(max(new_tau, lo), hi)
            tau = new_tau
        sol = crossing_state(instance, tau, xi)
        history.append(sol.S_total)
        pd_history.append(two_phase_hessian(instance, tau, xi).is_positive_definite)
        if _converged(sol, config):
            converged = True
            break
    return _finish(instance, "grad", tau, xi, it, converged, history, pd_history, clamped)


# -- B-Algo ----------------------------------------------------------------------


def bisection_depth(eps_B: float) -> int:
    """Number of halvings ``m`` with ``2**-m`` closest to ``eps_B`` on a log scale."""
    return max(1, round(math.log2(1.0 / eps_B)))


def b_algo(instance: Instance, config: SolverConfig = SolverConfig(),
           bracket: tuple[float, float] | None = None) -> PlanResult:
    """Bisection on ``tau`` until the B-curve crosses the interface.

    The bracket is halved ``m = round(log2(1/eps_B))`` times (12 for the
    default tolerance).  With ``config.b_refine`` the crossing time is then
    read off by linear interpolation of the interface level of ``B`` across
    the final bracket; otherwise it is the last midpoint tested.  The result
    sits at ``xi = B(tau)`` where the impulsion jump vanishes, so ``mu = 0``
    and ``xi`` is within the bracket resolution of the interface.
    """
    _require_hyperbolic(instance)
    iface = interface_of(instance)
    a, b = bracket if bracket is not None else _window(instance)
    side_b = in_zone2(instance, b_point(instance, b))
    if in_zone2(instance, b_point(instance, a)) == side_b:
        raise NoSignChange(f"B({a}) and B({b}) lie in the same zone")
    target = 2.0 ** -bisection_depth(config.eps_B)
    t1, t2 = float(a), float(b)
    width = abs(b - a)
    history: list[float] = []
    it = 0
    tau = 0.5 * (t1 + t2)
    # The slack absorbs rounding in the bracket ratio, which is an exact power of two.
    while abs(t2 - t1) / width > target * (1.0 + 1e-9):
        tau = 0.5 * (t1 + t2)
        xi = b_point(instance, tau)
        if in_zone2(instance, xi) == side_b:
            t2 = tau
        else:
            t1 = tau
        it += 1
        history.append(total_cost(instance, tau, xi))
    if config.b_refine:
        l1 = float(iface.level(b_point(instance, t1)))
        l2 = float(iface.level(b_point(instance, t2)))
        if l1 != l2:
            tau = min(max(t1 + l1 / (l1 - l2) * (t2 - t1), t1), t2)
    xi = b_point(instance, tau)
    sol = crossing_state(instance, tau, xi)
    return _finish(instance, "b", tau, xi, it, _converged(sol, config), history)


# -- AOA -------------------------------------------------------------------------


def crossing_of_samples(instance: Instance, t: np.ndarray, z: np.ndarray):
    """First interface crossing of a sampled path, or ``None``."""
    level = np.asarray(interface_of(instance).level(z))
    side = level > 0.0
    idx = np.flatnonzero(side[1:] != side[:-1])
    if idx.size == 0:
        return None
    i = int(idx[0])
    w = level[i] / (level[i] - level[i + 1])
    return t[i] + w * (t[i + 1] - t[i]), z[i] + w * (z[i + 1] - z[i])


def aoa(instance: Instance, config: SolverConfig = SolverConfig(),
        init_trajectory=None) -> PlanResult:
    """Alternating optimization: fixed steps on ``tau``, projections on ``xi``.

    ``init_trajectory`` is an :class:`MPCResult`, a ``(tau, xi)`` pair, or
    ``None`` (an MPC run with ``config.mpc_dt`` seeds the search).

    The ``tau`` phase moves by ``sign(H- - H+)*delta_tau`` and keeps going
    while the accepted change exceeds ``eps_tau``; a step that would raise the
    cost is rejected and counts as no change.  The ``xi`` phase replaces
    ``xi`` by the projection of ``B(tau)``, which is the exact minimizer at
    fixed ``tau``, and ends when ``xi`` moves by less than ``eps_xi``.  The
    search stops when a full ``tau``/``xi`` cycle lowers the cost by at most
    ``eps_S``.  Raises :class:`MaxIterations` (carrying the partial result)
    after ``max_outer`` variable updates.
    """
    _require_hyperbolic(instance)
    iface = interface_of(instance)
    lo, hi = _window(instance)
    dtau = config.delta_tau if config.delta_tau is not None else 1e-3 * instance.duration

    if init_trajectory is None:
        init_trajectory = mpc(instance, config.mpc_dt)
    if isinstance(init_trajectory, MPCResult):
        found = crossing_of_samples(instance, init_trajectory.times, init_trajectory.positions)
        if found is None:
            tau = 0.5 * (instance.t0 + instance.T)
            xi = iface.project(init_trajectory.position_at(tau))
        else:
            tau, xi = found
            xi = iface.project(xi)
    else:
        tau, xi = init_trajectory
        xi = vec2(xi)
    tau = min(max(float(tau), lo), hi)

    def cost(t, x):
        return crossing_state(instance, t, x).S_total

    S = cost(tau, xi)
    history = [S]
    cycle_start = S
    optimizing_tau = True
    it = 0
    while True:
        if it >= config.max_outer:
            partial = _finish(instance, "aoa", tau, xi, it, False, history)
            raise MaxIterations(f"AOA did not settle in {config.max_outer} updates", partial)
        it += 1
        if optimizing_tau:
            sol = crossing_state(instance, tau, xi)
            direction = math.copysign(1.0, sol.H_minus - sol.H_plus)
            cand = min(max(tau + direction * dtau, lo), hi)
            S_cand = cost(cand, xi)
            change = 0.0
            if S_cand <= S:
                change = abs(cand - tau)
                tau, S = cand, S_cand
            history.append(S)
            if change < config.eps_tau:
                optimizing_tau = False
        else:
            new_xi = iface.project(b_point(instance, tau))
            change = float(np.hypot(*(new_xi - xi)))
            S_new = cost(tau, new_xi)
            if S_new <= S:
                xi, S = new_xi, S_new
            else:
                change = 0.0
            history.append(S)
            if change < config.eps_xi:
                if abs(cycle_start - S) <= config.eps_S:
                    break
                cycle_start = S
                optimizing_tau = True
    return _finish(instance, "aoa", tau, xi, it, True, history)


# -- MPC -------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MPCResult:
    times: np.ndarray  # step boundaries, shape (n+1,)
    positions: np.ndarray  # (n+1, 2)
    cost: float
    steps: tuple[TrajectoryArc, ...]  # arc executed over [times[k], times[k+1]]
    phase_index: np.ndarray  # phase chosen at each step (1-based)

    def _step(self, t: float) -> int:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return min(max(k, 0), len(self.steps) - 1)

    def state_at(self, t: float):
        arc = self.steps[self._step(t)]
        return evaluate(arc, t, check=False)

    def position_at(self, t: float) -> np.ndarray:
        return self.state_at(t)[0]


def landscape_traffic(phases, z) -> np.ndarray:
    return np.max(np.stack([p.traffic(z) for p in phases]), axis=0)


def mpc(instance: Instance, dt: float | None = None, quad_points: int = 17) -> MPCResult:
    """Greedy replanning: follow the single-phase optimum of the locally dominant phase.

    The cost integrates ``K/2*|a|^2 - max_i u_i(z)`` with Simpson's rule on
    each executed step.
    """
    span = instance.duration
    if dt is None:
        dt = span / 200.0
    n = max(1, round(span / dt))
    times = instance.t0 + span * np.arange(n + 1) / n
    times[-1] = instance.T
    z = np.array(instance.z0)
    pos = [z.copy()]
    steps, chosen = [], []
    total = 0.0
    for k in range(n):
        traffic = [float(p.traffic(z)) for p in instance.phases]
        j = int(np.argmax(traffic))
        arc = solve_arc(instance.K, instance.phases[j], times[k], z, instance.T, instance.zT)
        ts = np.linspace(times[k], times[k + 1], quad_points)
        zs, vs = evaluate(arc, ts)
        lag = 0.5 * instance.K * np.sum(vs * vs, axis=-1) - landscape_traffic(instance.phases, zs)
        total += simpson(lag, (times[k + 1] - times[k]) / (quad_points - 1))
        z = instance.zT.copy() if k == n - 1 else zs[-1]
        pos.append(np.array(z))
        steps.append(arc)
        chosen.append(j + 1)
    return MPCResult(times=times, positions=np.array(pos), cost=float(total),
                     steps=tuple(steps), phase_index=np.array(chosen))


# -- brute force -------------------------------------------------------------------


@dataclass(frozen=True)
class BruteForceResult:
    tau: float
    xi: np.ndarray
    S: float
    h_tau: float  # grid spacing in time
    h_xi: float  # grid spacing along the interface (arclength)


def interface_grid(instance: Instance, n_xi: int) -> tuple[np.ndarray, float]:
    iface = interface_of(instance)
    if isinstance(iface, CircleInterface):
        theta = 2.0 * math.pi * np.arange(n_xi) / n_xi
        return iface.point(theta), 2.0 * math.pi * iface.radius / n_xi
    half = 2.0 * float(np.hypot(*(instance.z0 - instance.zT)))
    s = np.linspace(-half, half, n_xi)
    return iface.point(s, 0.5 * (instance.z0 + instance.zT)), 2.0 * half / (n_xi - 1)


def cost_grid(instance: Instance, taus: np.ndarray, xis: np.ndarray) -> np.ndarray:
    """``S1 + S2`` on the outer product of crossing times and positions."""
    ph1, ph2 = instance.phases
    t = taus[:, None]
    x = xis[None, :, :]
    s1 = value_batch(instance.K, ph1, instance.t0, instance.z0, t, x)
    s2 = value_batch(instance.K, ph2, t, x, instance.T, instance.zT)
    return s1 + s2


def brute_force(instance: Instance, n_tau: int = 400, n_xi: int = 400) -> BruteForceResult:
    """Exhaustive grid minimum; ties resolve to the lowest (tau, xi) index pair."""
    _require_hyperbolic(instance)
    lo, hi = _window(instance)
    taus = np.linspace(lo, hi, n_tau)
    xis, h_xi = interface_grid(instance, n_xi)
    S = cost_grid(instance, taus, xis)
    i, j = np.unravel_index(int(np.argmin(S)), S.shape)
    return BruteForceResult(tau=float(taus[i]), xi=vec2(xis[j]), S=float(S[i, j]),
                            h_tau=float(taus[1] - taus[0]), h_xi=float(h_xi))


# -- sampling ----------------------------------------------------------------------


def _sample_positions(arcs, t: np.ndarray) -> np.ndarray:
    return sample_arcs(arcs, t)[1]


def sample_arcs(arcs, t: np.ndarray):
    """Positions, velocities and 1-based phase index along consecutive arcs."""
    t = np.asarray(t, dtype=float)
    z = np.empty((t.size, 2))
    v = np.empty((t.size, 2))
    idx = np.empty(t.size, dtype=int)
    start = 0
    for k, arc in enumerate(arcs):
        last = k == len(arcs) - 1
        stop = t.size if last else int(np.searchsorted(t, arc.t_end, side="right"))
        if stop > start:
            zs, vs = evaluate(arc, np.clip(t[start:stop], arc.t_start, arc.t_end))
            z[start:stop], v[start:stop] = zs, vs
            idx[start:stop] = k + 1
        start = stop
    return t, z, v, idx


def sample_plan(result: PlanResult, instance: Instance, n: int = 512) -> dict:
    """Uniform samples ``t, x, y, vx, vy, H, phase`` of a planned trajectory."""
    t = np.linspace(instance.t0, instance.T, n)
    t, z, v, idx = sample_arcs(result.trajectory, t)
    H = np.empty(n)
    phase = np.empty(n, dtype=int)
    for k, arc in enumerate(result.trajectory):
        m = idx == k + 1
        p = instance.K * v[m]
        H[m] = np.sum(p * p, axis=-1) / (2.0 * instance.K) + arc.phase.traffic(z[m])
        phase[m] = _phase_number(instance, arc.phase)
    return {"t": t, "x": z[:, 0], "y": z[:, 1], "vx": v[:, 0], "vy": v[:, 1], "H": H,
            "phase": phase}


def sample_mpc(result: MPCResult, instance: Instance, n: int = 512) -> dict:
    t = np.linspace(instance.t0, instance.T, n)
    z = np.empty((n, 2))
    v = np.empty((n, 2))
    H = np.empty(n)
    phase = np.empty(n, dtype=int)
    for i, ti in enumerate(t):
        k = result._step(ti)
        arc = result.steps[k]
        zi, vi = evaluate(arc, ti, check=False)
        z[i], v[i] = zi, vi
        p = instance.K * vi
        H[i] = float(p @ p) / (2.0 * instance.K) + float(arc.phase.traffic(zi))
        phase[i] = int(result.phase_index[k])
    return {"t": t, "x": z[:, 0], "y": z[:, 1], "vx": v[:, 0], "vy": v[:, 1], "H": H,
            "phase": phase}


def _phase_number(instance: Instance, phase: QuadraticPhase) -> int:
    for k, p in enumerate(instance.phases):
        if p is phase:
            return k + 1
    return 1
