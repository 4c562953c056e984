import json

import numpy as np
import pytest
from scipy.optimize import least_squares

from hjtraj.errors import ConstantField, EmptyInput, TooFewSamples
from hjtraj.model import QuadraticPhase
from hjtraj.preprocess import (
    SCALE_RATIO,
    FittedModel,
    TrafficSample,
    aggregate,
    estimate_parameters,
    fit_quadratic_cluster,
    initial_labels,
    kmeans_quadratic,
    knn,
    knn_table,
    load_model,
    lowess,
    normalize,
    preprocess_pipeline,
    quad_error,
    read_samples_csv,
    save_model,
    to_scaled,
    write_samples_csv,
)
from instances import FIELD_PHASES, strict_local_maxima, synthetic_field, two_bump_field

# -- aggregation -------------------------------------------------------------------


def test_aggregate_single_sample():
    grid = aggregate([TrafficSample(0.25, 0.75, 3.5)], n_steps=4, bounds=(0, 1, 0, 1))
    assert grid.cells.shape == (4, 4)
    assert grid.cells[1, 3] == 3.5
    assert np.count_nonzero(grid.cells) == 1


def test_aggregate_sums_and_conserves():
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(0, 1, (500, 2)), rng.uniform(0, 10, 500)])
    grid = aggregate(pts, n_steps=50)
    assert grid.cells.size == 50 * 50
    assert grid.cells.sum() == pytest.approx(pts[:, 2].sum(), rel=1e-12)
    same = aggregate([[0.1, 0.1, 1.0], [0.11, 0.12, 2.0], [0.9, 0.9, 0.0]], n_steps=2)
    assert same.cells[0, 0] == 3.0


def test_aggregate_errors():
    with pytest.raises(EmptyInput):
        aggregate(np.empty((0, 3)))
    with pytest.raises(ValueError):
        aggregate([[0, 0, 1], [1, 1, 1]], n_steps=1)
    with pytest.raises(ValueError):
        aggregate([[2, 0, 1]], bounds=(0, 1, 0, 1))


# -- LOWESS ------------------------------------------------------------------------

def _grid(n=12):
    c = np.linspace(0, 3, n)
    gx, gy = np.meshgrid(c, c * 2, indexing="ij")
    return gx.ravel(), gy.ravel()


def test_lowess_reproduces_constant_and_linear_fields():
    x, y = _grid()
    const = np.column_stack([x, y, np.full_like(x, 4.2)])
    np.testing.assert_allclose(lowess(const, 0.3)[:, 2], 4.2, atol=1e-9)
    lin = np.column_stack([x, y, 1.5 * x - 0.7 * y + 3.0])
    np.testing.assert_allclose(lowess(lin, 0.3)[:, 2], lin[:, 2], atol=1e-9)


def test_lowess_bandwidth_controls_maxima():
    field = two_bump_field()
    assert strict_local_maxima(field[:, 2], 30) == 5
    assert strict_local_maxima(lowess(field, 0.5)[:, 2], 30) == 1
    assert strict_local_maxima(lowess(field, 0.25)[:, 2], 30) == 2
    assert strict_local_maxima(lowess(field, 0.15)[:, 2], 30) == 2


def test_lowess_errors():
    with pytest.raises(TooFewSamples):
        lowess([[0, 0, 1], [1, 0, 1], [0, 1, 1]], 1.0)
    with pytest.raises(ValueError):
        lowess(two_bump_field(), 0.0)


# -- normalization -----------------------------------------------------------------

def test_normalize():
    s = np.array([[0, 0, 2.0], [1, 0, 6.0], [0, 1, 4.0]])
    out = normalize(s)
    np.testing.assert_allclose(out[:, 2], [0, 1, 0.5])
    np.testing.assert_array_equal(normalize(out), out)
    assert np.argmax(out[:, 2]) == np.argmax(s[:, 2])
    with pytest.raises(ConstantField):
        normalize([[0, 0, 1.0], [1, 1, 1.0]])


# -- quadratic fits ----------------------------------------------------------------

def _phase_samples(phase, xy):
    return np.column_stack([xy, phase.traffic(xy)])


def test_fit_recovers_exact_phase():
    truth = QuadraticPhase((0.4, -1.3), -2.7, 0.8)
    xy = np.random.default_rng(1).uniform(-3, 3, (40, 2))
    got = fit_quadratic_cluster(_phase_samples(truth, xy))
    np.testing.assert_allclose(got.z_h, truth.z_h, atol=1e-8)
    assert got.u0 == pytest.approx(truth.u0, abs=1e-8)
    assert got.u1 == pytest.approx(truth.u1, abs=1e-8)


def test_fit_star_recovers_centre():
    c = np.array([2.0, -1.0])
    ang = 2 * np.pi * np.arange(5) / 5
    pts = np.vstack([c, c + np.column_stack([np.cos(ang), np.sin(ang)])])
    z = np.r_[1.0, np.full(5, 0.2)]
    got = fit_quadratic_cluster(np.column_stack([pts, z]))
    np.testing.assert_allclose(got.z_h, c, atol=1e-10)


def test_fit_matches_levenberg_marquardt_optimum():
    truth = QuadraticPhase((0.5, 0.5), -4.0, 1.0)
    rng = np.random.default_rng(2)
    xy = rng.uniform(0, 1, (80, 2))
    data = _phase_samples(truth, xy)
    data[:, 2] += rng.normal(0, 0.01, 80)
    got = fit_quadratic_cluster(data)

    def resid(v):
        return 0.5 * v[0] * np.sum((xy - v[1:3]) ** 2, axis=1) + v[3] - data[:, 2]

    lm = least_squares(resid, x0=[-1.0, 0.3, 0.3, 0.0], method="lm", xtol=1e-15, ftol=1e-15)
    ours = resid(np.r_[got.u0, got.z_h, got.u1])
    assert np.sum(ours ** 2) <= np.sum(lm.fun ** 2) * (1 + 1e-9)
    np.testing.assert_allclose(np.r_[got.u0, got.z_h, got.u1], lm.x, rtol=1e-6, atol=1e-8)


def test_fit_noisy_hotspot_monte_carlo():
    truth = QuadraticPhase((0.5, 0.4), -5.0, 1.0)
    rng = np.random.default_rng(3)
    for _ in range(100):
        xy = rng.uniform(0, 1, (60, 2))
        data = _phase_samples(truth, xy)
        data[:, 2] += rng.normal(0, 0.01, 60)
        got = fit_quadratic_cluster(data)
        diameter = np.max(np.linalg.norm(xy[:, None] - xy[None], axis=2))
        assert np.linalg.norm(got.z_h - truth.z_h) <= 0.05 * diameter


def test_fit_degenerate_inputs():
    from hjtraj.errors import DegenerateFit
    with pytest.raises(DegenerateFit):
        fit_quadratic_cluster([[0, 0, 1], [1, 0, 1], [2, 0, 1], [3, 0, 1]])  # collinear
    with pytest.raises(DegenerateFit):
        fit_quadratic_cluster([[0, 0, 1], [1, 0, 2], [0, 1, 3]])
    flat = np.column_stack([np.random.default_rng(4).uniform(0, 1, (20, 2)), np.zeros(20)])
    flat[:, 2] = 2 * flat[:, 0] + flat[:, 1]
    with pytest.raises(DegenerateFit):
        fit_quadratic_cluster(flat)


# -- KNN ---------------------------------------------------------------------------

def test_knn_self_exclusion_and_ties():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [5.0, 0.0]])
    assert list(knn(pts, 0, 1)) == [1]  # 1 and 2 tie at distance 1: lower index wins
    assert list(knn(pts, 0, 2)) == [1, 2]
    assert sorted(knn(pts, 3, 3)) == [0, 1, 2]
    table = knn_table(pts, 2)
    for j in range(4):
        np.testing.assert_array_equal(table[j], knn(pts, j, 2))
        assert j not in table[j]
    with pytest.raises(ValueError):
        knn(pts, 0, 4)


# -- K-means -----------------------------------------------------------------------

def test_initial_labels_bisect_extremes():
    xy = np.array([[0.0, 0.0], [0.4, 0.1], [0.6, 0.0], [1.0, 0.2]])
    np.testing.assert_array_equal(initial_labels(xy, 2), [1, 1, 2, 2])
    np.testing.assert_array_equal(initial_labels(xy, 1), [1, 1, 1, 1])


def test_kmeans_single_cluster_error_constant():
    model = kmeans_quadratic(synthetic_field(), K_c=1, M=12)
    assert len(model.phases) == 1
    assert np.ptp(model.history) == 0.0
    assert model.quad_error == pytest.approx(quad_error(model.phases, synthetic_field()))


def test_kmeans_recovers_two_hotspots():
    data = synthetic_field()
    model = kmeans_quadratic(data, K_c=2, K_n=5, M=12)
    cell = 1.0 / 50
    for truth in FIELD_PHASES:
        dist = min(np.linalg.norm(p.z_h - truth.z_h) for p in model.phases)
        assert dist <= 2 * cell
    assert np.all(np.diff(model.history) <= 0)
    assert model.quad_error == pytest.approx(quad_error(model.phases, data), rel=1e-9)
    assert set(np.unique(model.labels)) == {1, 2}
    single = kmeans_quadratic(data, K_c=1, M=12)
    assert model.quad_error < single.quad_error


def test_kmeans_unbounded_neighbourhood_converges_no_slower():
    data = synthetic_field()
    bounded = kmeans_quadratic(data, K_c=2, K_n=5, M=40)
    full = kmeans_quadratic(data, K_c=2, K_n=None, M=40)
    assert full.converged_at is not None
    assert bounded.converged_at is None or full.converged_at <= bounded.converged_at


def test_kmeans_errors():
    with pytest.raises(TooFewSamples):
        kmeans_quadratic(synthetic_field(n=2), K_c=2)


def test_pipeline_is_deterministic(tmp_path):
    rng = np.random.default_rng(5)
    raw = np.column_stack([rng.uniform(0, 1, (3000, 2)), np.zeros(3000)])
    raw[:, 2] = np.maximum(np.max([p.traffic(raw[:, :2]) for p in FIELD_PHASES], axis=0), 0) * 10
    m1 = preprocess_pipeline(raw, n_steps=20, alpha=0.25, M=4)
    m2 = preprocess_pipeline(raw, n_steps=20, alpha=0.25, M=4)
    assert json.dumps(m1.to_dict()) == json.dumps(m2.to_dict())
    save_model(tmp_path / "m.json", m1)
    back = load_model(tmp_path / "m.json")
    assert isinstance(back, FittedModel)
    assert back.phases[0].same_as(m1.phases[0])
    np.testing.assert_array_equal(back.labels, m1.labels)


# -- CSV ---------------------------------------------------------------------------

def test_csv_round_trip_and_errors(tmp_path):
    data = synthetic_field(n=5)
    path = tmp_path / "s.csv"
    write_samples_csv(path, data)
    np.testing.assert_array_equal(read_samples_csv(path), data)
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y,z\n1,2,3\n1,oops,3\n")
    with pytest.raises(ValueError, match=":3:"):
        read_samples_csv(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(EmptyInput):
        read_samples_csv(empty)
    header_only = tmp_path / "h.csv"
    header_only.write_text("x,y,z\n")
    with pytest.raises(EmptyInput):
        read_samples_csv(header_only)


# -- parameter estimation ----------------------------------------------------------

def test_scale_ratio():
    assert SCALE_RATIO == pytest.approx(1111.1111, abs=1e-4)


def test_estimate_examples():
    assert estimate_parameters((0, 0), (8000, 0)).T_est == pytest.approx(600.0)
    est = estimate_parameters((111.0, 13.12), (111.0, 13.22), units="deg")
    assert est.T_est == pytest.approx(850.0, rel=0.05)
    assert est.r == pytest.approx(1111.1111, abs=1e-4)


def test_estimate_phase_checks_and_mass_bound():
    est = estimate_parameters((0, 0), (80, 0), units="scaled", u0s=[-0.02, -0.05], K=60.0)
    w = np.sqrt(0.05 / est.K_min_scaled)
    assert w * est.T_est == pytest.approx(10.0)
    assert est.K_min == pytest.approx(est.K_min_scaled * SCALE_RATIO ** 2)
    for chk in est.phase_checks:
        assert chk.ok == (chk.phi < 10.0)
    with pytest.raises(ValueError):
        estimate_parameters((1, 1), (1, 1))


def test_to_scaled_preserves_traffic():
    ph = QuadraticPhase((111.0, 13.1), -3e5, 0.8)
    sc = to_scaled(ph)
    z = np.array([111.01, 13.12])
    assert sc.traffic(z * SCALE_RATIO) == pytest.approx(ph.traffic(z), rel=1e-9)
