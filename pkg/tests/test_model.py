import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hjtraj.model import (
    Instance,
    PhaseKind,
    QuadraticPhase,
    StateVector,
    combine_phases,
    hamiltonian,
    lagrangian,
    traffic_at,
    vec2,
)


def _inst(K=2.0, phase=None):
    phase = phase or QuadraticPhase((0, 0), -2.0, 0.0)
    return Instance(K=K, t0=0.0, T=1.0, z0=(1, 0), zT=(0, 1), phases=(phase,))


def test_traffic_examples():
    hot = QuadraticPhase((0, 0), -2.0, 5.0)
    assert traffic_at(hot, vec2(0, 0)) == 5.0
    assert traffic_at(hot, vec2(1, 0)) == 4.0
    hole = QuadraticPhase((1, 1), 1.0, 0.0)
    assert traffic_at(hole, vec2(2, 3)) == pytest.approx(2.5)


def test_traffic_vectorised_matches_scalar():
    ph = QuadraticPhase((0.3, -1.2), -1.7, 0.4)
    pts = np.random.default_rng(0).normal(size=(20, 2))
    np.testing.assert_allclose(ph.traffic(pts), [traffic_at(ph, p) for p in pts])


def test_lagrangian_examples():
    flat = QuadraticPhase((0, 0), -2.0, 0.0)
    assert lagrangian(_inst(2.0), flat, vec2(0, 0), vec2(1, 0)) == pytest.approx(1.0)
    four = QuadraticPhase((0, 0), -2.0, 4.0)
    assert lagrangian(_inst(2.0), four, vec2(0, 0), vec2(0, 0)) == pytest.approx(-4.0)
    ten = QuadraticPhase((0, 0), -2.0, 10.0)
    assert lagrangian(_inst(60.0), ten, vec2(0, 0), vec2(3, 4)) == pytest.approx(740.0)


def test_hamiltonian_examples():
    seven = QuadraticPhase((2, 3), -1.0, 7.0)
    assert hamiltonian(_inst(), seven, vec2(2, 3), vec2(0, 0)) == pytest.approx(7.0)
    zero = QuadraticPhase((0, 0), -2.0, 0.0)
    assert hamiltonian(_inst(2.0), zero, vec2(0, 0), vec2(2, 0)) == pytest.approx(1.0)
    half = QuadraticPhase((0, 0), -2.0, 0.5)
    assert hamiltonian(_inst(60.0), half, vec2(0, 0), vec2(6, 8)) == pytest.approx(1.3333, abs=1e-4)


@settings(max_examples=60, deadline=None)
@given(
    K=st.floats(0.1, 100.0),
    ax=st.floats(-10, 10), ay=st.floats(-10, 10),
    zx=st.floats(-10, 10), zy=st.floats(-10, 10),
)
def test_legendre_identity(K, ax, ay, zx, zy):
    # H(z, K a) = K a.a - L(z, a)
    ph = QuadraticPhase((0.5, -0.5), -1.3, 0.7)
    inst = _inst(K, ph)
    a, z = vec2(ax, ay), vec2(zx, zy)
    lhs = hamiltonian(inst, ph, z, K * a)
    rhs = K * float(a @ a) - lagrangian(inst, ph, z, a)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(dx=st.floats(-50, 50), dy=st.floats(-50, 50))
def test_traffic_translation_invariance(dx, dy):
    ph = QuadraticPhase((1.0, 2.0), -0.8, 0.3)
    moved = QuadraticPhase(ph.z_h + [dx, dy], ph.u0, ph.u1)
    z = vec2(0.4, -1.1)
    assert traffic_at(moved, z + [dx, dy]) == pytest.approx(traffic_at(ph, z), rel=1e-9, abs=1e-9)


def test_phase_kind_and_dynamics():
    assert QuadraticPhase((0, 0), -4.0).kind is PhaseKind.HYPERBOLIC
    assert QuadraticPhase((0, 0), 4.0).kind is PhaseKind.TRIGONOMETRIC
    assert QuadraticPhase((0, 0), -4.0).dynamics(1.0).omega == pytest.approx(2.0)
    with pytest.raises(ValueError):
        QuadraticPhase((0, 0), 0.0)


def test_phase_dict_round_trip():
    ph = QuadraticPhase((0.1, 0.2), -3.0, 1.5)
    back = QuadraticPhase.from_dict(json.loads(json.dumps(ph.to_dict())))
    assert back.same_as(ph)


def test_instance_validation():
    ph = QuadraticPhase((0, 0), -1.0)
    with pytest.raises(ValueError):
        Instance(K=0.0, t0=0, T=1, z0=(0, 0), zT=(1, 1), phases=(ph,))
    with pytest.raises(ValueError):
        Instance(K=1.0, t0=1, T=1, z0=(0, 0), zT=(1, 1), phases=(ph,))
    with pytest.raises(ValueError):
        Instance(K=1.0, t0=0, T=1, z0=(0, 0), zT=(1, 1), phases=(ph, ph, ph))
    inst = Instance(K=1.0, t0=0, T=2, z0=(0, 0), zT=(1, 1), phases=(ph,))
    assert inst.duration == 2 and not inst.is_bi_phase
    assert inst.replace(T=5).duration == 5


def test_vec2_is_read_only_and_finite():
    v = vec2(1, 2)
    with pytest.raises(ValueError):
        v[0] = 3
    with pytest.raises(ValueError):
        vec2(np.nan, 0)
    with pytest.raises(ValueError):
        vec2([1, 2, 3])


def test_state_vector_position_round_trip():
    ph = QuadraticPhase((1, -1), -2.0)
    s = StateVector.at(vec2(3, 4), vec2(0.5, 0.5), ph, K=2.0)
    np.testing.assert_allclose(s.position(ph, 2.0), [3, 4])
    np.testing.assert_allclose(s.scaled_x, 2.0 * 1.0 * np.array([2, 5]))


def test_combine_phases_matches_sum_of_traffics():
    terms = [QuadraticPhase((0, 0), -1.0, 1.0), QuadraticPhase((2, 1), -3.0, 0.5),
             QuadraticPhase((-1, 4), 0.5, 0.0)]
    eq = combine_phases(terms)
    pts = np.random.default_rng(1).normal(size=(30, 2)) * 3
    np.testing.assert_allclose(eq.traffic(pts), sum(t.traffic(pts) for t in terms), rtol=1e-12, atol=1e-12)
    with pytest.raises(ValueError):
        combine_phases([QuadraticPhase((0, 0), -1.0), QuadraticPhase((1, 0), 1.0)])
