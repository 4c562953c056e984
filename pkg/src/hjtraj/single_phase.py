"""Closed-form optimal arcs inside one quadratic phase.

Positions are handled in coordinates centred on the phase center,
``x = z - z_h``.  With ``phi = omega*(t2 - t1)`` and ``S, C`` standing for
``sinh, cosh`` (hotspot) or ``sin, cos`` (hole)::

    x(t) = (x2*S(omega*(t - t1)) + x1*S(omega*(t2 - t))) / S(phi)
    a(t) = omega*(x2*C(omega*(t - t1)) - x1*C(omega*(t2 - t))) / S(phi)
    S_val = K*omega/(2*S(phi)) * ((|x1|^2 + |x2|^2)*C(phi) - 2*x1.x2) - u1*(t2 - t1)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import OutOfDomain, SingularPeriod
from .model import (
    PhaseDynamics,
    PhaseKind,
    QuadraticPhase,
    StateVector,
    Vec2,
    phase_hamiltonian,
    vec2,
)

SIN_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class TrajectoryArc:
    phase: QuadraticPhase
    dynamics: PhaseDynamics
    K: float
    t_start: float
    t_end: float
    z_start: Vec2
    z_end: Vec2

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @property
    def omega(self) -> float:
        return self.dynamics.omega

    @property
    def phi(self) -> float:
        return self.dynamics.omega * (self.t_end - self.t_start)

    @property
    def hyperbolic(self) -> bool:
        return self.dynamics.kind is PhaseKind.HYPERBOLIC

    @property
    def x_start(self) -> np.ndarray:
        return self.z_start - self.phase.z_h

    @property
    def x_end(self) -> np.ndarray:
        return self.z_end - self.phase.z_h


def solve_arc(K: float, phase: QuadraticPhase, t0: float, z0, T: float, zT) -> TrajectoryArc:
    """Optimal arc of ``phase`` joining ``(t0, z0)`` to ``(T, zT)``."""
    if not T > t0:
        raise ValueError(f"arc needs T > t0, got t0={t0}, T={T}")
    dyn = phase.dynamics(K)
    if dyn.kind is PhaseKind.TRIGONOMETRIC:
        s = math.sin(dyn.omega * (T - t0))
        if abs(s) <= SIN_TOL:
            raise SingularPeriod(
                f"sin(omega*dt) = {s:.3e}: conjugate point, boundary problem is singular"
            )
    return TrajectoryArc(phase, dyn, float(K), float(t0), float(T), vec2(z0), vec2(zT))


# -- ratio helpers ---------------------------------------------------------
# Hyperbolic ratios are written with exponentials of non-positive arguments so
# they stay finite for arbitrarily long temporal phases.

def _sinh_over_sinh(a, phi: float):
    a = np.asarray(a, dtype=float)
    return np.exp(a - phi) * (-np.expm1(-2.0 * a)) / (-math.expm1(-2.0 * phi))


def _cosh_over_sinh(a, phi: float):
    a = np.asarray(a, dtype=float)
    return np.exp(a - phi) * (1.0 + np.exp(-2.0 * a)) / (-math.expm1(-2.0 * phi))


def inv_s(arc_phi: float, hyperbolic: bool) -> float:
    """``1/S(phi)``."""
    if hyperbolic:
        return 2.0 * math.exp(-arc_phi) / (-math.expm1(-2.0 * arc_phi))
    return 1.0 / math.sin(arc_phi)


def cot_s(arc_phi: float, hyperbolic: bool) -> float:
    """``C(phi)/S(phi)``."""
    if hyperbolic:
        return 1.0 / math.tanh(arc_phi)
    return math.cos(arc_phi) / math.sin(arc_phi)


def _ratios(arc: TrajectoryArc, t):
    w, phi = arc.omega, arc.phi
    s1 = w * (np.asarray(t, dtype=float) - arc.t_start)
    s2 = w * (arc.t_end - np.asarray(t, dtype=float))
    if arc.hyperbolic:
        # Clip rounding noise so the exponential forms see non-negative arguments.
        s1, s2 = np.maximum(s1, 0.0), np.maximum(s2, 0.0)
        return (_sinh_over_sinh(s1, phi), _sinh_over_sinh(s2, phi),
                _cosh_over_sinh(s1, phi), _cosh_over_sinh(s2, phi))
    sp = math.sin(phi)
    return np.sin(s1) / sp, np.sin(s2) / sp, np.cos(s1) / sp, np.cos(s2) / sp


def evaluate(arc: TrajectoryArc, t, *, check: bool = True):
    """Position and velocity at time(s) ``t``.

    Scalar ``t`` gives two arrays of shape (2,); an array of times gives (n, 2).
    """
    t_arr = np.asarray(t, dtype=float)
    if check:
        slack = 1e-12 * max(1.0, abs(arc.t_start), abs(arc.t_end))
        if np.any(t_arr < arc.t_start - slack) or np.any(t_arr > arc.t_end + slack):
            raise OutOfDomain(f"t outside [{arc.t_start}, {arc.t_end}]")
    rs1, rs2, rc1, rc2 = _ratios(arc, t_arr)
    x1, x2 = arc.x_start, arc.x_end
    rs1, rs2, rc1, rc2 = (np.expand_dims(r, -1) for r in (rs1, rs2, rc1, rc2))
    z = arc.phase.z_h + x2 * rs1 + x1 * rs2
    a = arc.omega * (x2 * rc1 - x1 * rc2)
    return z, a


def positions(arc: TrajectoryArc, t) -> np.ndarray:
    return evaluate(arc, t)[0]


def endpoint_impulsions(arc: TrajectoryArc) -> tuple[np.ndarray, np.ndarray]:
    """Impulsions ``K*a`` at the start and at the end of the arc."""
    x1, x2 = arc.x_start, arc.x_end
    inv, cot = inv_s(arc.phi, arc.hyperbolic), cot_s(arc.phi, arc.hyperbolic)
    kw = arc.K * arc.omega
    p1 = kw * (x2 * inv - x1 * cot)
    p2 = kw * (x2 * cot - x1 * inv)
    return p1, p2


def value(arc: TrajectoryArc) -> float:
    """Action of the optimal arc, including the ``-u1*dt`` offset term."""
    x1, x2 = arc.x_start, arc.x_end
    inv, cot = inv_s(arc.phi, arc.hyperbolic), cot_s(arc.phi, arc.hyperbolic)
    kinetic = 0.5 * arc.K * arc.omega * (
        (float(x1 @ x1) + float(x2 @ x2)) * cot - 2.0 * float(x1 @ x2) * inv
    )
    return kinetic - arc.phase.u1 * arc.duration


def hamiltonian_along(arc: TrajectoryArc, t) -> np.ndarray:
    z, a = evaluate(arc, t)
    p = arc.K * a
    return np.sum(p * p, axis=-1) / (2.0 * arc.K) + arc.phase.traffic(z)


def arc_hamiltonian(arc: TrajectoryArc) -> float:
    """Conserved energy of the arc, evaluated at its start."""
    p1, _ = endpoint_impulsions(arc)
    return phase_hamiltonian(arc.K, arc.phase, arc.z_start, p1)


def start_state(arc: TrajectoryArc) -> StateVector:
    p1, _ = endpoint_impulsions(arc)
    return StateVector.at(arc.z_start, p1, arc.phase, arc.K)


def end_state(arc: TrajectoryArc) -> StateVector:
    _, p2 = endpoint_impulsions(arc)
    return StateVector.at(arc.z_end, p2, arc.phase, arc.K)


def propagate_state(y: StateVector, phi: float) -> StateVector:
    """Advance a hyperbolic state by temporal phase ``phi``.

    ``exp(phi*A) = cosh(phi)*I + sinh(phi)*A`` where ``A`` swaps the two
    components; negative ``phi`` runs the arc backwards.
    """
    c, s = math.cosh(phi), math.sinh(phi)
    return StateVector(p=vec2(c * y.p + s * y.scaled_x), scaled_x=vec2(s * y.p + c * y.scaled_x))


def simpson(f_values: np.ndarray, h: float) -> float:
    """Composite Simpson rule on an odd number of equally spaced samples."""
    n = f_values.shape[0]
    if n < 3 or n % 2 == 0:
        raise ValueError("Simpson needs an odd number (>= 3) of samples")
    return float(h / 3.0 * (f_values[0] + f_values[-1]
                            + 4.0 * f_values[1:-1:2].sum() + 2.0 * f_values[2:-1:2].sum()))


def value_batch(K: float, phase: QuadraticPhase, t_start, z_start, t_end, z_end) -> np.ndarray:
    """Vectorised :func:`value` over broadcastable endpoint arrays.

    Times broadcast against the leading axes of the ``(..., 2)`` position arrays.
    """
    dyn = phase.dynamics(K)
    w = dyn.omega
    dt = np.asarray(t_end, dtype=float) - np.asarray(t_start, dtype=float)
    phi = w * dt
    x1 = np.asarray(z_start, dtype=float) - phase.z_h
    x2 = np.asarray(z_end, dtype=float) - phase.z_h
    if dyn.kind is PhaseKind.HYPERBOLIC:
        e = np.exp(-2.0 * phi)
        inv = 2.0 * np.exp(-phi) / (-np.expm1(-2.0 * phi))
        cot = (1.0 + e) / (-np.expm1(-2.0 * phi))
    else:
        s = np.sin(phi)
        inv, cot = 1.0 / s, np.cos(phi) / s
    sq = np.sum(x1 * x1, axis=-1) + np.sum(x2 * x2, axis=-1)
    cross = np.sum(x1 * x2, axis=-1)
    return 0.5 * K * w * (sq * cot - 2.0 * cross * inv) - phase.u1 * dt
