"""Two-phase crossing geometry, optimality residuals, Hessians and convexity diagnostics.

A bi-phase trajectory is the concatenation of the optimal arc of phase 1 from
``(t0, z0)`` to the crossing ``(tau, xi)`` and the optimal arc of phase 2 from
there to ``(T, zT)``.  Its cost ``S1 + S2`` has the closed-form gradients

* ``dS/dtau = H+ - H-`` (Hamiltonians on each side of the crossing),
* ``grad_xi S = p- - p+ = K*h*(xi - B(tau))``,

and a Hessian in ``(tau, xi)`` of the form ``[[alpha, Pi^T], [Pi, K*h*I]]``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateInterface,
    OutOfWindow,
    ProjectionAmbiguous,
    UndefinedRatio,
    Unsupported,
)
from .model import Instance, PhaseKind, QuadraticPhase, Vec2, phase_hamiltonian, vec2
from .single_phase import TrajectoryArc, cot_s, endpoint_impulsions, inv_s, solve_arc, value

# -- interfaces --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LineInterface:
    """Line ``normal . z = offset``; ``normal`` is unit and points into zone 2."""

    normal: Vec2
    offset: float

    def __post_init__(self) -> None:
        n = np.asarray(self.normal, dtype=float)
        norm = float(np.hypot(*n))
        if norm == 0.0:
            raise DegenerateInterface("line normal is zero")
        object.__setattr__(self, "normal", vec2(n / norm))
        object.__setattr__(self, "offset", float(self.offset) / norm)

    kind = "line"

    @property
    def tangent(self) -> np.ndarray:
        return np.array([-self.normal[1], self.normal[0]])

    def level(self, z) -> np.ndarray | float:
        """Signed distance, positive on the zone-2 side."""
        return np.asarray(z, dtype=float) @ self.normal - self.offset

    def normal_at(self, xi) -> np.ndarray:
        return np.array(self.normal)

    def project(self, b) -> Vec2:
        b = np.asarray(b, dtype=float)
        return vec2(b - (b @ self.normal - self.offset) * self.normal)

    def point(self, s, origin) -> np.ndarray:
        """Points at arclength ``s`` from the projection of ``origin``."""
        base = self.project(origin)
        s = np.asarray(s, dtype=float)
        return base + np.multiply.outer(s, self.tangent)

    def to_dict(self) -> dict:
        return {"kind": "line", "normal": self.normal.tolist(), "offset": self.offset}


@dataclass(frozen=True, eq=False)
class CircleInterface:
    """Circle of ``center``/``radius``; zone 2 lies outside when ``orientation`` is +1."""

    center: Vec2
    radius: float
    orientation: int = 1

    kind = "circle"

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", vec2(self.center))
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise DegenerateInterface(f"circle radius must be positive, got {self.radius}")
        if self.orientation not in (1, -1):
            raise ValueError("orientation must be +1 or -1")

    def level(self, z) -> np.ndarray | float:
        d = np.asarray(z, dtype=float) - self.center
        return self.orientation * (np.sqrt(np.sum(d * d, axis=-1)) - self.radius)

    def normal_at(self, xi) -> np.ndarray:
        d = np.asarray(xi, dtype=float) - self.center
        return self.orientation * d / np.hypot(*d)

    def project(self, b) -> Vec2:
        d = np.asarray(b, dtype=float) - self.center
        norm = float(np.hypot(*d))
        if norm == 0.0:
            raise ProjectionAmbiguous("every circle point is equidistant from the center")
        return vec2(self.center + self.radius * d / norm)

    def point(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return self.center + self.radius * np.stack([np.cos(theta), np.sin(theta)], axis=-1)

    def to_dict(self) -> dict:
        return {"kind": "circle", "center": self.center.tolist(), "radius": self.radius,
                "orientation": self.orientation}


Interface = LineInterface | CircleInterface


def interface_from_dict(d: dict) -> Interface:
    if d["kind"] == "line":
        return LineInterface(normal=d["normal"], offset=d["offset"])
    if d["kind"] == "circle":
        return CircleInterface(center=d["center"], radius=d["radius"],
                               orientation=int(d.get("orientation", 1)))
    raise ValueError(f"unknown interface kind {d['kind']!r}")


def interface_from_phases(p1: QuadraticPhase, p2: QuadraticPhase) -> Interface:
    """Equal-traffic curve of two quadratic phases (a line or a circle)."""
    a1, a2 = p1.u0, p2.u0
    c1, c2 = p1.z_h, p2.z_h
    if a1 == a2:
        grad = a1 * (c1 - c2)  # gradient of u2 - u1, constant
        norm = float(np.hypot(*grad))
        if norm == 0.0:
            raise DegenerateInterface("phases differ only by offset: no equal-traffic point"
                                      if p1.u1 != p2.u1 else "identical phases")
        rhs = -(0.5 * a1 * (c2 @ c2 - c1 @ c1) + p2.u1 - p1.u1)
        return LineInterface(normal=grad / norm, offset=rhs / norm)
    m = (a2 * c2 - a1 * c1) / (a2 - a1)
    q = (a2 * (c2 @ c2) - a1 * (c1 @ c1) + 2.0 * (p2.u1 - p1.u1)) / (a2 - a1)
    r2 = float(m @ m - q)
    if not r2 > 0.0:
        raise DegenerateInterface(f"equal-traffic circle has radius^2 = {r2:.6g}")
    return CircleInterface(center=m, radius=math.sqrt(r2), orientation=1 if a2 > a1 else -1)


def interface_of(instance: Instance) -> Interface:
    if not instance.is_bi_phase:
        raise Unsupported("single-phase instance has no interface")
    if instance.interface is not None:
        return instance.interface
    return interface_from_phases(*instance.phases)


def project_onto_interface(interface: Interface, b) -> Vec2:
    return interface.project(b)


def in_zone2(model, z) -> bool:
    """True where phase 2 carries strictly more traffic; ties go to zone 1.

    ``model`` is a pair of phases or an :class:`Instance`; an instance with an
    explicit interface (needed when the phases coincide) uses its side instead.
    """
    if isinstance(model, Instance):
        if model.interface is not None:
            return bool(model.interface.level(z) > 0.0)
        model = model.phases
    p1, p2 = model
    return bool(p2.traffic(z) > p1.traffic(z))


# -- crossing state -----------------------------------------------------------


def _require_hyperbolic(instance: Instance) -> None:
    if not instance.is_bi_phase:
        raise Unsupported("bi-phase operation on a single-phase instance")
    if any(p.kind is not PhaseKind.HYPERBOLIC for p in instance.phases):
        raise Unsupported("bi-phase mode supports hotspot (u0 < 0) phases only")


def _check_window(instance: Instance, tau: float) -> None:
    if not instance.t0 < tau < instance.T:
        raise OutOfWindow(f"tau={tau} outside ({instance.t0}, {instance.T})")


def bi_phase_arcs(instance: Instance, tau: float, xi) -> tuple[TrajectoryArc, TrajectoryArc]:
    _check_window(instance, tau)
    ph1, ph2 = instance.phases
    arc1 = solve_arc(instance.K, ph1, instance.t0, instance.z0, tau, xi)
    arc2 = solve_arc(instance.K, ph2, tau, xi, instance.T, instance.zT)
    return arc1, arc2


def discrepancy(x, y) -> float:
    """Relative discrepancy ``||x - y|| / min(||x||, ||y||)`` (floored at 1e-12)."""
    x, y = np.atleast_1d(np.asarray(x, dtype=float)), np.atleast_1d(np.asarray(y, dtype=float))
    denom = max(min(float(np.linalg.norm(x)), float(np.linalg.norm(y))), 1e-12)
    return float(np.linalg.norm(x - y)) / denom


@dataclass(frozen=True, eq=False)
class CrossingSolution:
    tau: float
    xi: Vec2
    S_total: float
    p_minus: np.ndarray
    p_plus: np.ndarray
    H_minus: float
    H_plus: float
    mu: float
    iterations: int = 0
    interface_gap: float = 0.0  # signed distance of xi from the interface

    @property
    def delta_p(self) -> np.ndarray:
        return self.p_minus - self.p_plus

    @property
    def delta_H(self) -> float:
        return self.H_plus - self.H_minus

    @property
    def g_p(self) -> float:
        return discrepancy(self.p_plus, self.p_minus)

    @property
    def g_H(self) -> float:
        return discrepancy(self.H_plus, self.H_minus)

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "xi": [float(self.xi[0]), float(self.xi[1])],
            "S": self.S_total,
            "p_minus": self.p_minus.tolist(),
            "p_plus": self.p_plus.tolist(),
            "H_minus": self.H_minus,
            "H_plus": self.H_plus,
            "mu": self.mu,
            "g_p": self.g_p,
            "g_H": self.g_H,
            "interface_gap": self.interface_gap,
            "iterations": self.iterations,
        }


def crossing_state(instance: Instance, tau: float, xi, iterations: int = 0) -> CrossingSolution:
    """Impulsions, Hamiltonians and cost of the bi-phase path through ``(tau, xi)``."""
    xi = vec2(xi)
    arc1, arc2 = bi_phase_arcs(instance, tau, xi)
    _, p_minus = endpoint_impulsions(arc1)
    p_plus, _ = endpoint_impulsions(arc2)
    ph1, ph2 = instance.phases
    h_minus = phase_hamiltonian(instance.K, ph1, xi, p_minus)
    h_plus = phase_hamiltonian(instance.K, ph2, xi, p_plus)
    iface = interface_of(instance)
    mu = float((p_minus - p_plus) @ iface.normal_at(xi))
    return CrossingSolution(
        tau=float(tau), xi=xi, S_total=value(arc1) + value(arc2),
        p_minus=p_minus, p_plus=p_plus, H_minus=h_minus, H_plus=h_plus,
        mu=mu, iterations=iterations, interface_gap=float(iface.level(xi)),
    )


def crossing_residuals(instance: Instance, tau: float, xi) -> tuple[np.ndarray, float, float]:
    """``(p- - p+, H+ - H-, mu)`` with ``mu`` the normal component of the jump."""
    s = crossing_state(instance, tau, xi)
    return s.delta_p, s.delta_H, s.mu


def total_cost(instance: Instance, tau: float, xi) -> float:
    arc1, arc2 = bi_phase_arcs(instance, tau, xi)
    return value(arc1) + value(arc2)


# -- B point ------------------------------------------------------------------


def _phases_at(instance: Instance, tau: float):
    ph1, ph2 = instance.phases
    w1 = ph1.dynamics(instance.K).omega
    w2 = ph2.dynamics(instance.K).omega
    return ph1, ph2, w1, w2, w1 * (tau - instance.t0), w2 * (instance.T - tau)


def h_coefficient(instance: Instance, tau: float) -> float:
    _require_hyperbolic(instance)
    _check_window(instance, tau)
    _, _, w1, w2, f1, f2 = _phases_at(instance, tau)
    return w1 / math.tanh(f1) + w2 / math.tanh(f2)


def b_point(instance: Instance, tau: float) -> Vec2:
    """Point where the spatial gradient of the two-phase cost vanishes at fixed ``tau``."""
    _require_hyperbolic(instance)
    _check_window(instance, tau)
    ph1, ph2, w1, w2, f1, f2 = _phases_at(instance, tau)
    coth1, coth2 = 1.0 / math.tanh(f1), 1.0 / math.tanh(f2)
    inv1, inv2 = inv_s(f1, True), inv_s(f2, True)
    h = w1 * coth1 + w2 * coth2
    num = (w1 * coth1 * ph1.z_h + w2 * coth2 * ph2.z_h
           + w1 * inv1 * (instance.z0 - ph1.z_h) + w2 * inv2 * (instance.zT - ph2.z_h))
    return vec2(num / h)


def h_sign_outside(instance: Instance, tau: float) -> float:
    """``h(tau)`` continued analytically to any ``tau`` except the poles ``t0`` and ``T``."""
    _require_hyperbolic(instance)
    if tau == instance.t0 or tau == instance.T:
        raise OutOfWindow(f"h has a pole at tau={tau}")
    _, _, w1, w2, f1, f2 = _phases_at(instance, tau)
    return w1 / math.tanh(f1) + w2 / math.tanh(f2)


# -- Hessians -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HessianSummary:
    """Hessian ``[[alpha, Pi^T], [Pi, K*h_or_g*I]]`` and its spectrum."""

    alpha: float
    h_or_g: float
    Pi: np.ndarray
    K: float
    eigenvalues: tuple[float, float, float] = field(init=False)
    is_positive_definite: bool = field(init=False)

    def __post_init__(self) -> None:
        kg = self.K * self.h_or_g
        pi2 = float(self.Pi @ self.Pi)
        # Roots of (Kg - nu)(alpha - nu) = |Pi|^2 plus the pure-space eigenvalue Kg.
        mid = 0.5 * (self.alpha + kg)
        half = 0.5 * math.sqrt((self.alpha - kg) ** 2 + 4.0 * pi2)
        eig = tuple(sorted((kg, mid - half, mid + half)))
        object.__setattr__(self, "eigenvalues", eig)
        object.__setattr__(self, "is_positive_definite", eig[0] > 0.0)

    @property
    def matrix(self) -> np.ndarray:
        m = np.zeros((3, 3))
        m[0, 0] = self.alpha
        m[0, 1:] = m[1:, 0] = self.Pi
        m[1, 1] = m[2, 2] = self.K * self.h_or_g
        return m

    @property
    def determinant(self) -> float:
        kg = self.K * self.h_or_g
        return kg * (kg * self.alpha - float(self.Pi @ self.Pi))

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "h": self.h_or_g, "Pi": self.Pi.tolist(),
                "eigenvalues": list(self.eigenvalues),
                "positive_definite": self.is_positive_definite}


def _arc_alpha(arc: TrajectoryArc) -> float:
    p1, p2 = endpoint_impulsions(arc)
    return arc.omega * float(p1 @ p2) * inv_s(arc.phi, True) / arc.K


def single_phase_hessian(arc: TrajectoryArc, which_end: int) -> HessianSummary:
    """Hessian of the arc's cost w.r.t. the time and position of one extremity (1 or 2)."""
    if not arc.hyperbolic:
        raise Unsupported("Hessian formulas are for hotspot arcs")
    if which_end not in (1, 2):
        raise ValueError("which_end must be 1 or 2")
    p1, p2 = endpoint_impulsions(arc)
    inv = inv_s(arc.phi, True)
    pi = -arc.omega * (p2 if which_end == 1 else p1) * inv
    return HessianSummary(alpha=_arc_alpha(arc), h_or_g=arc.omega / math.tanh(arc.phi),
                          Pi=pi, K=arc.K)


def two_phase_hessian(instance: Instance, tau: float, xi) -> HessianSummary:
    """Hessian of ``S1 + S2`` w.r.t. ``(tau, xi)``."""
    _require_hyperbolic(instance)
    arc1, arc2 = bi_phase_arcs(instance, tau, xi)
    h1 = single_phase_hessian(arc1, 2)
    h2 = single_phase_hessian(arc2, 1)
    return HessianSummary(alpha=h1.alpha + h2.alpha, h_or_g=h1.h_or_g + h2.h_or_g,
                          Pi=h1.Pi + h2.Pi, K=instance.K)


class Convexity(enum.Enum):
    SUFFICIENTLY_NONCONVEX = "sufficiently_nonconvex"
    INCONCLUSIVE = "inconclusive"


def convexity_ratio(arc: TrajectoryArc) -> tuple[float, float]:
    """``(||v||/||u||, tanh(phi/2)**2)`` for the centered endpoints of ``arc``."""
    u = 0.5 * (arc.x_start + arc.x_end)
    v = 0.5 * (arc.x_end - arc.x_start)
    nu = float(np.hypot(*u))
    if nu == 0.0:
        raise UndefinedRatio("endpoints are symmetric about the hotspot (u = 0)")
    return float(np.hypot(*v)) / nu, math.tanh(0.5 * arc.phi) ** 2


def convexity_test(arc: TrajectoryArc) -> Convexity:
    if not arc.hyperbolic:
        raise Unsupported("convexity test is for hotspot arcs")
    ratio, bound = convexity_ratio(arc)
    return Convexity.SUFFICIENTLY_NONCONVEX if ratio < bound else Convexity.INCONCLUSIVE


# -- loci -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Disk:
    """Open disk; ``radius == 0`` encodes the empty set."""

    center: Vec2
    radius: float

    @property
    def empty(self) -> bool:
        return self.radius == 0.0

    def contains(self, z) -> np.ndarray | bool:
        d = np.asarray(z, dtype=float) - self.center
        return np.sqrt(np.sum(d * d, axis=-1)) < self.radius

    def to_dict(self) -> dict:
        if self.empty:
            return {"empty": True, "center": None, "radius": None}
        return {"empty": False, "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class IsotropicQuadratic:
    """``A*||z||^2 + b.z + c``."""

    A: float
    b: np.ndarray
    c: float

    def __call__(self, z) -> np.ndarray | float:
        z = np.asarray(z, dtype=float)
        return self.A * np.sum(z * z, axis=-1) + z @ self.b + self.c

    def negative_set(self) -> Disk:
        """The open set where the form is negative (requires ``A > 0``)."""
        if not self.A > 0:
            raise ValueError("quadratic coefficient must be positive")
        center = -self.b / (2.0 * self.A)
        q = float(self.b @ self.b) / (4.0 * self.A ** 2)
        r2 = q - self.c / self.A
        # A radius^2 at rounding level is the tangent (empty) case.
        if r2 <= 1e-12 * max(q, abs(self.c / self.A), 1e-300):
            return Disk(center=vec2(center), radius=0.0)
        return Disk(center=vec2(center), radius=math.sqrt(r2))


def _locus_terms(instance: Instance, tau: float):
    _require_hyperbolic(instance)
    _check_window(instance, tau)
    K = instance.K
    ph1, ph2, w1, w2, f1, f2 = _phases_at(instance, tau)
    coth1, coth2 = 1.0 / math.tanh(f1), 1.0 / math.tanh(f2)
    inv1, inv2 = inv_s(f1, True), inv_s(f2, True)
    zh1, zh2 = ph1.z_h, ph2.z_h
    x1 = instance.z0 - zh1  # fixed start of arc 1
    y2 = instance.zT - zh2  # fixed end of arc 2

    # alpha_i = K w^3/S^3 [(|a|^2+|b|^2) C - a.b (1 + C^2)], one endpoint moving with xi.
    def pieces(w, coth, inv, zh, fixed):
        c_lin = K * w ** 3 * coth * inv ** 2  # K w^3 C / S^3
        c_mix = K * w ** 3 * (inv ** 3 + coth ** 2 * inv)  # K w^3 (1 + C^2) / S^3
        A = c_lin
        b = -2.0 * c_lin * zh - c_mix * fixed
        c = c_lin * (fixed @ fixed + zh @ zh) + c_mix * (fixed @ zh)
        return A, b, c

    A1, b1, c1 = pieces(w1, coth1, inv1, zh1, x1)
    A2, b2, c2 = pieces(w2, coth2, inv2, zh2, y2)
    alpha = IsotropicQuadratic(A1 + A2, b1 + b2, float(c1 + c2))

    # Pi(xi) = m*xi + pi0
    m = K * (w2 ** 2 * inv2 ** 2 - w1 ** 2 * inv1 ** 2)
    pi0 = (K * w1 ** 2 * inv1 * (zh1 * inv1 + x1 * coth1)
           - K * w2 ** 2 * inv2 * (y2 * coth2 + zh2 * inv2))
    h = w1 * coth1 + w2 * coth2
    return alpha, m, pi0, h


def alpha_form(instance: Instance, tau: float) -> IsotropicQuadratic:
    """``d2S/dtau2`` as a function of the crossing position at fixed ``tau``."""
    return _locus_terms(instance, tau)[0]


def det_form(instance: Instance, tau: float) -> IsotropicQuadratic:
    """Determinant of the two-phase Hessian as a function of ``xi`` at fixed ``tau``."""
    alpha, m, pi0, h = _locus_terms(instance, tau)
    kh = instance.K * h
    return IsotropicQuadratic(
        A=kh * (kh * alpha.A - m * m),
        b=kh * (kh * alpha.b - 2.0 * m * pi0),
        c=float(kh * (kh * alpha.c - pi0 @ pi0)),
    )


def alpha_locus(instance: Instance, tau: float) -> Disk:
    return alpha_form(instance, tau).negative_set()


def det_locus(instance: Instance, tau: float) -> Disk:
    return det_form(instance, tau).negative_set()
