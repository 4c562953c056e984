"""Domain types: quadratic traffic phases, planning instances, Lagrangian and Hamiltonian.

Traffic of one phase is ``u(z) = 0.5*u0*||z - z_h||**2 + u1``; a hotspot has
``u0 < 0`` and a traffic hole ``u0 > 0``.  The running cost of a trajectory is
the Lagrangian ``K/2*||a||**2 - u(z)`` and the matching Hamiltonian is
``||p||**2/(2K) + u(z)`` with impulsion ``p = K*a``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

# A 2-D point or vector.  Kept as a float64 array of shape (2,).
Vec2 = np.ndarray


def vec2(x: Any, y: float | None = None) -> Vec2:
    """Build a read-only, finite float64 2-vector from ``(x, y)`` or a sequence."""
    arr = np.array([x, y] if y is not None else x, dtype=float).reshape(-1)
    if arr.shape != (2,):
        raise ValueError(f"expected 2 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite vector {arr}")
    arr.setflags(write=False)
    return arr


class PhaseKind(enum.Enum):
    HYPERBOLIC = "hyperbolic"  # u0 < 0: hotspot, repulsor, sinh/cosh arcs
    TRIGONOMETRIC = "trigonometric"  # u0 > 0: hole, attractor, sin/cos arcs


@dataclass(frozen=True, eq=False)
class QuadraticPhase:
    z_h: Vec2
    u0: float
    u1: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "z_h", vec2(self.z_h))
        object.__setattr__(self, "u0", float(self.u0))
        object.__setattr__(self, "u1", float(self.u1))
        if self.u0 == 0.0:
            raise ValueError("u0 = 0 is a flat traffic field, not a phase")
        if not (math.isfinite(self.u0) and math.isfinite(self.u1)):
            raise ValueError("phase coefficients must be finite")

    @property
    def kind(self) -> PhaseKind:
        return PhaseKind.HYPERBOLIC if self.u0 < 0 else PhaseKind.TRIGONOMETRIC

    def dynamics(self, K: float) -> "PhaseDynamics":
        return PhaseDynamics(omega=math.sqrt(abs(self.u0) / K), kind=self.kind)

    def traffic(self, z: np.ndarray) -> np.ndarray | float:
        """Vectorised traffic; ``z`` may have shape (2,) or (n, 2)."""
        d = np.asarray(z, dtype=float) - self.z_h
        return 0.5 * self.u0 * np.sum(d * d, axis=-1) + self.u1

    def same_as(self, other: "QuadraticPhase") -> bool:
        return (
            self.u0 == other.u0
            and self.u1 == other.u1
            and bool(np.all(self.z_h == other.z_h))
        )

    def to_dict(self) -> dict:
        return {"zh": [float(self.z_h[0]), float(self.z_h[1])], "u0": self.u0, "u1": self.u1}

    @classmethod
    def from_dict(cls, d: dict) -> "QuadraticPhase":
        return cls(z_h=vec2(d["zh"]), u0=d["u0"], u1=d.get("u1", 0.0))


@dataclass(frozen=True)
class PhaseDynamics:
    omega: float
    kind: PhaseKind

    def __post_init__(self) -> None:
        if not self.omega > 0:
            raise ValueError("pulsation must be positive")


@dataclass(frozen=True, eq=False)
class Instance:
    """One planning problem: reach ``zT`` at ``T`` from ``z0`` at ``t0``.

    ``interface`` is only meaningful for two phases.  When omitted it is
    derived from the equal-traffic curve of the phases; it must be given
    explicitly when both phases coincide.
    """

    K: float
    t0: float
    T: float
    z0: Vec2
    zT: Vec2
    phases: tuple[QuadraticPhase, ...]
    interface: Any = field(default=None)

    def __post_init__(self) -> None:
        object.__setattr__(self, "z0", vec2(self.z0))
        object.__setattr__(self, "zT", vec2(self.zT))
        object.__setattr__(self, "phases", tuple(self.phases))
        if not self.K > 0:
            raise ValueError("K must be positive")
        if not self.T > self.t0:
            raise ValueError("T must exceed t0")
        if len(self.phases) not in (1, 2):
            raise ValueError("an instance holds one or two phases")

    @property
    def duration(self) -> float:
        return self.T - self.t0

    @property
    def is_bi_phase(self) -> bool:
        return len(self.phases) == 2

    def replace(self, **changes: Any) -> "Instance":
        kw = dict(K=self.K, t0=self.t0, T=self.T, z0=self.z0, zT=self.zT,
                  phases=self.phases, interface=self.interface)
        kw.update(changes)
        return Instance(**kw)


@dataclass(frozen=True, eq=False)
class StateVector:
    """Hamiltonian state ``(p, K*omega*(z - z_h))`` of a hyperbolic arc.

    Both components carry impulsion units, so the exchange operator acts
    without extra factors of ``K``.
    """

    p: Vec2
    scaled_x: Vec2

    @classmethod
    def at(cls, z: Vec2, p: Vec2, phase: QuadraticPhase, K: float) -> "StateVector":
        omega = phase.dynamics(K).omega
        return cls(p=vec2(p), scaled_x=vec2(K * omega * (np.asarray(z) - phase.z_h)))

    def position(self, phase: QuadraticPhase, K: float) -> Vec2:
        omega = phase.dynamics(K).omega
        return vec2(phase.z_h + self.scaled_x / (K * omega))


def traffic_at(phase: QuadraticPhase, z: Vec2) -> float:
    return float(phase.traffic(z))


def lagrangian(instance: Instance, phase: QuadraticPhase, z: Vec2, a: Vec2) -> float:
    a = np.asarray(a, dtype=float)
    return 0.5 * instance.K * float(a @ a) - traffic_at(phase, z)


def hamiltonian(instance: Instance, phase: QuadraticPhase, z: Vec2, p: Vec2) -> float:
    return phase_hamiltonian(instance.K, phase, z, p)


def phase_hamiltonian(K: float, phase: QuadraticPhase, z: Vec2, p: Vec2) -> float:
    p = np.asarray(p, dtype=float)
    return float(p @ p) / (2.0 * K) + traffic_at(phase, z)


def combine_phases(phases: Sequence[QuadraticPhase]) -> QuadraticPhase:
    """Collapse a sum of quadratic terms into one phase centred at their barycenter.

    Raises ``ValueError`` when the curvatures cancel.
    """
    u0 = sum(p.u0 for p in phases)
    if u0 == 0.0:
        raise ValueError("curvatures sum to zero; no equivalent phase")
    zb = sum(p.u0 * p.z_h for p in phases) / u0
    u1 = sum(p.u1 + 0.5 * p.u0 * float((p.z_h - zb) @ (p.z_h - zb)) for p in phases)
    return QuadraticPhase(z_h=zb, u0=u0, u1=u1)
