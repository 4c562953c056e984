"""From raw traffic measurements to a one- or two-phase quadratic model.

Pipeline: :func:`aggregate` on a regular grid, :func:`lowess` smoothing,
:func:`normalize` to [0, 1], then :func:`kmeans_quadratic`.  Samples travel
as float arrays of shape (N, 3) holding ``x, y, z``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    ConstantField,
    DegenerateFit,
    EmptyCluster,
    EmptyInput,
    TooFewSamples,
)
from .model import QuadraticPhase

METERS_PER_DEGREE = 40e6 / 360.0
SCALED_UNIT_M = 100.0
SCALE_RATIO = METERS_PER_DEGREE / SCALED_UNIT_M  # degrees -> 100 m units, ~1111.1111


@dataclass(frozen=True)
class TrafficSample:
    x: float
    y: float
    z: float


def as_array(samples) -> np.ndarray:
    """Coerce samples (array-like or :class:`TrafficSample` list) to an (N, 3) array."""
    if isinstance(samples, np.ndarray):
        arr = np.asarray(samples, dtype=float)
    else:
        samples = list(samples)
        if samples and isinstance(samples[0], TrafficSample):
            arr = np.array([(s.x, s.y, s.z) for s in samples], dtype=float)
        else:
            arr = np.asarray(samples, dtype=float)
    if arr.size == 0:
        raise EmptyInput("no traffic samples")
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"samples must have shape (N, 3), got {arr.shape}")
    return arr


# -- I/O -------------------------------------------------------------------------


def read_samples_csv(path: str | Path) -> np.ndarray:
    """Read ``x,y,z`` rows; parse errors name the offending line."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyInput(f"{path}: empty file")
        if [h.strip().lower() for h in header] != ["x", "y", "z"]:
            raise ValueError(f"{path}:1: expected header x,y,z, got {','.join(header)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{reader.line_num}: expected 3 fields, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise ValueError(f"{path}:{reader.line_num}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise ValueError(f"{path}:{reader.line_num}: non-finite value")
            rows.append(vals)
    if not rows:
        raise EmptyInput(f"{path}: no data rows")
    return np.array(rows, dtype=float)


def write_samples_csv(path: str | Path, samples) -> None:
    arr = as_array(samples)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "z"])
        for x, y, z in arr:
            w.writerow([repr(float(x)), repr(float(y)), repr(float(z))])


# -- aggregation ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrafficGrid:
    x_edges: np.ndarray
    y_edges: np.ndarray
    cells: np.ndarray  # cells[i, j] covers x_edges[i:i+2] x y_edges[j:j+2]
    n_steps: int

    def centers(self) -> np.ndarray:
        """Cell centers with their aggregated traffic, as (n_steps**2, 3) samples."""
        cx = 0.5 * (self.x_edges[1:] + self.x_edges[:-1])
        cy = 0.5 * (self.y_edges[1:] + self.y_edges[:-1])
        gx, gy = np.meshgrid(cx, cy, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel(), self.cells.ravel()])

    @property
    def cell_size(self) -> tuple[float, float]:
        return float(self.x_edges[1] - self.x_edges[0]), float(self.y_edges[1] - self.y_edges[0])


def aggregate(samples, n_steps: int = 50,
              bounds: tuple[float, float, float, float] | None = None) -> TrafficGrid:
    """Sum traffic on an ``n_steps x n_steps`` grid over ``bounds = (xmin, xmax, ymin, ymax)``.

    Bounds default to the sample bounding box; samples outside explicit bounds
    are rejected so that the total is conserved.
    """
    arr = as_array(samples)
    if n_steps < 2:
        raise ValueError("n_steps must be at least 2")
    if bounds is None:
        bounds = (arr[:, 0].min(), arr[:, 0].max(), arr[:, 1].min(), arr[:, 1].max())
    xmin, xmax, ymin, ymax = map(float, bounds)
    if not (xmax > xmin and ymax > ymin):
        raise ValueError(f"degenerate bounds {bounds}")
    outside = ((arr[:, 0] < xmin) | (arr[:, 0] > xmax)
               | (arr[:, 1] < ymin) | (arr[:, 1] > ymax))
    if outside.any():
        raise ValueError(f"{int(outside.sum())} samples fall outside the bounds")
    cells, xe, ye = np.histogram2d(arr[:, 0], arr[:, 1], bins=n_steps,
                                   range=[[xmin, xmax], [ymin, ymax]], weights=arr[:, 2])
    return TrafficGrid(x_edges=xe, y_edges=ye, cells=cells, n_steps=n_steps)


# -- LOWESS --------------------------------------------------------------------------


def lowess(samples, alpha: float) -> np.ndarray:
    """Locally linear regression with tricube weights over the ``ceil(alpha*N)`` nearest points.

    Distances are measured after mapping both coordinate axes to [0, 1].
    """
    arr = as_array(samples)
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    n = arr.shape[0]
    if n < 4:
        raise TooFewSamples(f"LOWESS needs at least 4 samples, got {n}")
    k = math.ceil(alpha * n)
    if k < 4:
        raise TooFewSamples(f"alpha={alpha} selects only {k} neighbours out of {n}")
    xy = arr[:, :2]
    span = xy.max(axis=0) - xy.min(axis=0)
    span[span == 0.0] = 1.0
    q = (xy - xy.min(axis=0)) / span
    dist, idx = cKDTree(q).query(q, k=k)
    dist = dist.reshape(n, k)
    idx = idx.reshape(n, k)
    dmax = dist[:, -1:]
    dmax[dmax == 0.0] = 1.0
    w = (1.0 - np.clip(dist / dmax, 0.0, 1.0) ** 3) ** 3
    # Local coordinates centred on the query point: the fitted value is the intercept.
    local = q[idx] - q[:, None, :]
    X = np.concatenate([np.ones((n, k, 1)), local], axis=2)
    Xw = X * w[:, :, None]
    A = np.einsum("nki,nkj->nij", Xw, X)
    b = np.einsum("nki,nk->ni", Xw, arr[idx, 2])
    beta = np.einsum("nij,nj->ni", np.linalg.pinv(A, rcond=1e-12), b)
    return np.column_stack([xy, beta[:, 0]])


def normalize(samples) -> np.ndarray:
    """Affine map of the traffic column onto [0, 1]."""
    arr = as_array(samples).copy()
    lo, hi = arr[:, 2].min(), arr[:, 2].max()
    if not hi > lo:
        raise ConstantField("traffic is constant; cannot normalize")
    arr[:, 2] = (arr[:, 2] - lo) / (hi - lo)
    return arr


# -- quadratic fits ------------------------------------------------------------------


@dataclass(frozen=True)
class _Frame:
    """Centering and scaling of the plane used to condition the fits."""

    center: np.ndarray
    scale: float

    @classmethod
    def of(cls, xy: np.ndarray) -> "_Frame":
        c = xy.mean(axis=0)
        s = float(np.sqrt(np.mean(np.sum((xy - c) ** 2, axis=1))))
        return cls(center=c, scale=s if s > 0 else 1.0)

    def features(self, xy: np.ndarray) -> np.ndarray:
        q = (xy - self.center) / self.scale
        return np.column_stack([0.5 * np.sum(q * q, axis=1), q, np.ones(len(q))])

    def to_phase(self, beta: np.ndarray) -> QuadraticPhase:
        a, bx, by, c = beta
        if abs(a) <= 1e-12 * max(1.0, abs(bx), abs(by), abs(c)):
            raise DegenerateFit(f"curvature estimate {a:.3e} is numerically zero")
        qh = -np.array([bx, by]) / a
        return QuadraticPhase(z_h=self.center + self.scale * qh, u0=a / self.scale ** 2,
                              u1=c - 0.5 * a * float(qh @ qh))


def _solve_normal(G: np.ndarray, r: np.ndarray) -> np.ndarray:
    if np.linalg.matrix_rank(G, tol=1e-10 * max(np.abs(G).max(), 1e-300)) < 4:
        raise DegenerateFit("rank-deficient quadratic fit")
    return np.linalg.solve(G, r)


def fit_quadratic_cluster(points) -> QuadraticPhase:
    """Least-squares fit of ``0.5*u0*|p - z_h|^2 + u1``.

    The model is linear in ``(u0, -u0*z_h, const)``, so ordinary least squares
    reaches the global optimum of the non-linear problem.
    """
    arr = as_array(points)
    if arr.shape[0] < 4:
        raise DegenerateFit(f"need at least 4 points, got {arr.shape[0]}")
    frame = _Frame.of(arr[:, :2])
    F = frame.features(arr[:, :2])
    beta, _, rank, _ = np.linalg.lstsq(F, arr[:, 2], rcond=None)
    if rank < 4:
        raise DegenerateFit("points do not determine a quadratic surface")
    return frame.to_phase(beta)


def model_traffic(phases: Sequence[QuadraticPhase], xy) -> np.ndarray:
    """Landscape ``max_l`` of the phase traffics."""
    xy = np.asarray(xy, dtype=float)
    return np.max(np.stack([p.traffic(xy) for p in phases]), axis=0)


def quad_error(phases: Sequence[QuadraticPhase], samples) -> float:
    arr = as_array(samples)
    return float(np.mean((model_traffic(phases, arr[:, :2]) - arr[:, 2]) ** 2))


# -- nearest neighbours ------------------------------------------------------------------


def knn_table(points, K_n: int) -> np.ndarray:
    """``K_n`` nearest neighbours of every point, itself excluded, ties to the lower index."""
    xy = np.asarray(points, dtype=float)[:, :2]
    n = xy.shape[0]
    if not 1 <= K_n <= n - 1:
        raise ValueError(f"K_n must lie in [1, {n - 1}], got {K_n}")
    d = np.sum((xy[:, None, :] - xy[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d, np.inf)
    return np.argsort(d, axis=1, kind="stable")[:, :K_n]


def knn(points, query: int, K_n: int) -> np.ndarray:
    """Neighbours of sample ``query`` (exhaustive search, self excluded)."""
    xy = np.asarray(points, dtype=float)[:, :2]
    n = xy.shape[0]
    if not 1 <= K_n <= n - 1:
        raise ValueError(f"K_n must lie in [1, {n - 1}], got {K_n}")
    d = np.sum((xy - xy[query]) ** 2, axis=1)
    d[query] = np.inf
    return np.argsort(d, kind="stable")[:K_n]


# -- K-means with quadratic models --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FittedModel:
    phases: tuple[QuadraticPhase, ...]
    labels: np.ndarray  # 1-based cluster index per sample
    quad_error: float
    history: list[float] = field(default_factory=list)  # error before and after each iteration
    iterations: int = 0
    converged_at: int | None = None  # first iteration with no relabel

    def to_dict(self) -> dict:
        return {
            "phases": [p.to_dict() for p in self.phases],
            "quad_error": self.quad_error,
            "labels": [int(v) for v in self.labels],
            "history": list(self.history),
            "iterations": self.iterations,
            "converged_at": self.converged_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedModel":
        return cls(
            phases=tuple(QuadraticPhase.from_dict(p) for p in d["phases"]),
            labels=np.asarray(d.get("labels", []), dtype=int),
            quad_error=float(d.get("quad_error", math.nan)),
            history=list(d.get("history", [])),
            iterations=int(d.get("iterations", 0)),
            converged_at=d.get("converged_at"),
        )


def save_model(path: str | Path, model: FittedModel) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> FittedModel:
    return FittedModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def initial_labels(xy: np.ndarray, K_c: int) -> np.ndarray:
    """Partition by nearest of ``K_c`` seeds spread between the extreme samples of the widest axis.

    For two clusters this is the perpendicular bisector of those two samples.
    """
    if K_c == 1:
        return np.ones(len(xy), dtype=int)
    axis = int(np.argmax(np.ptp(xy, axis=0)))
    lo, hi = xy[np.argmin(xy[:, axis])], xy[np.argmax(xy[:, axis])]
    seeds = lo + np.linspace(0.0, 1.0, K_c)[:, None] * (hi - lo)
    d = np.sum((xy[:, None, :] - seeds[None, :, :]) ** 2, axis=2)
    return np.argmin(d, axis=1) + 1


class _Clusters:
    """Per-cluster normal equations, updated incrementally as labels move."""

    def __init__(self, F: np.ndarray, z: np.ndarray, labels: np.ndarray, K_c: int):
        self.F, self.z, self.K_c = F, z, K_c
        self.G = np.zeros((K_c, 4, 4))
        self.r = np.zeros((K_c, 4))
        self.count = np.zeros(K_c, dtype=int)
        for k in range(K_c):
            m = labels == k + 1
            self.G[k] = F[m].T @ F[m]
            self.r[k] = F[m].T @ z[m]
            self.count[k] = int(m.sum())

    def move(self, j: int, src: int, dst: int) -> None:
        f = self.F[j]
        outer, fz = np.outer(f, f), f * self.z[j]
        self.G[src - 1] -= outer
        self.r[src - 1] -= fz
        self.count[src - 1] -= 1
        self.G[dst - 1] += outer
        self.r[dst - 1] += fz
        self.count[dst - 1] += 1

    def betas(self) -> np.ndarray:
        out = np.empty((self.K_c, 4))
        for k in range(self.K_c):
            if self.count[k] < 4:
                raise DegenerateFit(f"cluster {k + 1} has {self.count[k]} points")
            out[k] = _solve_normal(self.G[k], self.r[k])
        return out

    def error(self) -> float:
        """Mean squared error of the max-of-quadratics model; ``inf`` when a fit is degenerate."""
        try:
            betas = self.betas()
        except (DegenerateFit, np.linalg.LinAlgError):
            return math.inf
        pred = np.max(self.F @ betas.T, axis=1)
        return float(np.mean((pred - self.z) ** 2))


def kmeans_quadratic(samples, K_c: int = 2, K_n: int | None = 5, M: int = 12) -> FittedModel:
    """K-means where every cluster is a fitted quadratic and points move to the label minimizing the global error.

    ``K_n=None`` considers every point at every iteration; otherwise a point
    is examined only when one of its ``K_n`` nearest neighbours has another
    label.  Points are visited in index order and relabelled immediately.  A
    move that leaves any cluster without a well-posed fit scores ``inf`` and
    is therefore rejected; ties keep the current label.
    """
    arr = as_array(samples)
    n = arr.shape[0]
    if K_c < 1:
        raise ValueError("K_c must be positive")
    if n < 4 * K_c:
        raise TooFewSamples(f"{n} samples cannot support {K_c} quadratic clusters")
    if M < 0:
        raise ValueError("M must be non-negative")
    xy, z = arr[:, :2], arr[:, 2]
    frame = _Frame.of(xy)
    F = frame.features(xy)
    labels = initial_labels(xy, K_c)
    for k in range(1, K_c + 1):
        if not np.any(labels == k):
            raise EmptyCluster(f"initial partition leaves cluster {k} empty")
    clusters = _Clusters(F, z, labels, K_c)
    current = clusters.error()
    if not math.isfinite(current):
        raise DegenerateFit("initial partition gives a degenerate quadratic fit")
    neighbours = knn_table(xy, K_n) if (K_n is not None and K_c > 1) else None
    history = [current]
    converged_at = None
    for m in range(1, M + 1):
        moved = 0
        if K_c > 1:
            for j in range(n):
                lj = int(labels[j])
                if neighbours is not None and np.all(labels[neighbours[j]] == lj):
                    continue
                best_k, best_e = lj, current
                for k in range(1, K_c + 1):
                    if k == lj:
                        continue
                    clusters.move(j, lj, k)
                    e = clusters.error()
                    clusters.move(j, k, lj)
                    if e < best_e:
                        best_k, best_e = k, e
                if best_k != lj:
                    clusters.move(j, lj, best_k)
                    labels[j] = best_k
                    current = best_e
                    moved += 1
        history.append(current)
        if moved == 0:
            # Nothing moved, so every later pass is identical.
            converged_at = m
            history.extend([current] * (M - m))
            break
    phases = tuple(frame.to_phase(b) for b in clusters.betas())
    return FittedModel(phases=phases, labels=labels.copy(), quad_error=current, history=history,
                       iterations=len(history) - 1, converged_at=converged_at)


def preprocess_pipeline(samples, *, n_steps: int = 50, alpha: float = 0.25, K_c: int = 2,
                        K_n: int | None = 5, M: int = 12,
                        bounds: tuple[float, float, float, float] | None = None) -> FittedModel:
    grid = aggregate(samples, n_steps=n_steps, bounds=bounds)
    smoothed = lowess(grid.centers(), alpha)
    return kmeans_quadratic(normalize(smoothed), K_c=K_c, K_n=K_n, M=M)


# -- parameter estimation -------------------------------------------------------------------

_UNIT_TO_M = {"m": 1.0, "deg": METERS_PER_DEGREE, "scaled": SCALED_UNIT_M}


@dataclass(frozen=True)
class PhaseCheck:
    u0: float
    omega: float
    phi: float
    ok: bool


@dataclass(frozen=True)
class Estimates:
    r: float
    distance_m: float
    length_m: float
    T_est: float
    K_min_scaled: float | None  # smallest K keeping every phase below phi_max, scaled frame
    K_min: float | None  # the same bound in the original (degree) frame
    phase_checks: tuple[PhaseCheck, ...] = ()

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "distance_m": self.distance_m,
            "L_m": self.length_m,
            "T_est": self.T_est,
            "K_min_scaled": self.K_min_scaled,
            "K_min": self.K_min,
            "phase_checks": [{"u0": c.u0, "omega": c.omega, "phi": c.phi, "ok": c.ok}
                             for c in self.phase_checks],
        }


def estimate_parameters(z0, zT, v_bar: float = 20.0, c: float = 1.5, phi_max: float = 10.0,
                        r: float = SCALE_RATIO, units: str = "m",
                        u0s: Iterable[float] = (), K: float | None = None) -> Estimates:
    """Prior estimates of the horizon ``T`` and mass ``K``.

    ``T = c*||z0 - zT|| / v_bar`` with the distance in metres (``units`` says
    how ``z0``/``zT`` are expressed: ``m``, ``deg`` or ``scaled`` 100 m units).
    ``u0s`` are phase curvatures in the scaled frame; the smallest admissible
    mass keeps ``omega*T < phi_max`` for all of them and is reported both in
    the scaled frame and multiplied by ``r**2``.  When ``K`` (scaled frame)
    is given, each phase is checked against ``phi_max``.
    """
    if units not in _UNIT_TO_M:
        raise ValueError(f"units must be one of {sorted(_UNIT_TO_M)}")
    d = float(np.hypot(*(np.asarray(z0, dtype=float) - np.asarray(zT, dtype=float))))
    if d == 0.0:
        raise ValueError("z0 and zT coincide")
    if not (v_bar > 0 and c > 0 and phi_max > 0 and r > 0):
        raise ValueError("v_bar, c, phi_max and r must be positive")
    dist_m = d * _UNIT_TO_M[units]
    length = c * dist_m
    T = length / v_bar
    u0s = [float(u) for u in u0s]
    k_min = max(abs(u) for u in u0s) * T ** 2 / phi_max ** 2 if u0s else None
    checks = []
    if K is not None:
        for u in u0s:
            w = math.sqrt(abs(u) / K)
            checks.append(PhaseCheck(u0=u, omega=w, phi=w * T, ok=w * T < phi_max))
    return Estimates(r=r, distance_m=dist_m, length_m=length, T_est=T, K_min_scaled=k_min,
                     K_min=None if k_min is None else k_min * r ** 2,
                     phase_checks=tuple(checks))


def to_scaled(phase: QuadraticPhase, r: float = SCALE_RATIO) -> QuadraticPhase:
    """Re-express a phase fitted in degrees in 100 m units (``u0 <- u0/r**2``)."""
    return QuadraticPhase(z_h=phase.z_h * r, u0=phase.u0 / r ** 2, u1=phase.u1)
