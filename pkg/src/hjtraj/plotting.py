"""PNG report figures rendered off-screen next to the CLI's CSV/JSON outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from matplotlib.patches import Circle

from .bi_phase import CircleInterface, Disk, LineInterface
from .model import QuadraticPhase


def _save(fig: Figure, path: str | Path) -> Path:
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=120)
    return Path(path)


def _traffic_background(ax, phases: Sequence[QuadraticPhase], xlim, ylim) -> None:
    gx, gy = np.meshgrid(np.linspace(*xlim, 200), np.linspace(*ylim, 200))
    pts = np.stack([gx, gy], axis=-1)
    traffic = np.max(np.stack([p.traffic(pts) for p in phases]), axis=0)
    cs = ax.contourf(gx, gy, traffic, levels=30, cmap="viridis")
    ax.figure.colorbar(cs, ax=ax, label="traffic")


def _draw_interface(ax, iface, xlim, ylim) -> None:
    if isinstance(iface, CircleInterface):
        ax.add_patch(Circle(iface.center, iface.radius, fill=False, color="w", ls="--"))
    elif isinstance(iface, LineInterface):
        s = np.linspace(-1.0, 1.0, 2) * 2.0 * max(np.ptp(xlim), np.ptp(ylim))
        mid = np.array([np.mean(xlim), np.mean(ylim)])
        pts = iface.point(s, mid)
        ax.plot(pts[:, 0], pts[:, 1], "w--")


def _limits(points: np.ndarray, pad: float = 0.15):
    lo, hi = points.min(axis=0), points.max(axis=0)
    mid = 0.5 * (lo + hi)
    span = np.maximum(hi - lo, 1e-9)
    span = np.maximum(span, 0.6 * span.max())  # keep flat extents readable
    lo, hi = mid - (0.5 + pad) * span, mid + (0.5 + pad) * span
    return (lo[0], hi[0]), (lo[1], hi[1])


def plot_trajectory(path, phases, samples: dict, interface=None, crossing=None,
                    title: str = "") -> Path:
    """Trajectory over the traffic landscape, coloured by phase."""
    xy = np.column_stack([samples["x"], samples["y"]])
    extra = [p.z_h for p in phases]
    xlim, ylim = _limits(np.vstack([xy, *extra]))
    fig = Figure(figsize=(6.4, 5.2))
    ax = fig.add_subplot()
    _traffic_background(ax, phases, xlim, ylim)
    if interface is not None:
        _draw_interface(ax, interface, xlim, ylim)
    for k in np.unique(samples["phase"]):
        m = samples["phase"] == k
        ax.plot(xy[m, 0], xy[m, 1], lw=2, label=f"phase {k}")
    for i, p in enumerate(phases):
        ax.plot(*p.z_h, "r^", ms=8)
        ax.annotate(f"z_h{i + 1}", p.z_h, color="w", xytext=(4, 4), textcoords="offset points")
    ax.plot(*xy[0], "ko", label="start")
    ax.plot(*xy[-1], "ks", label="end")
    if crossing is not None:
        ax.plot(*crossing, "w*", ms=12, label="crossing")
    ax.set_xlim(*xlim)
    ax.set_ylim(*ylim)
    ax.set_aspect("equal", adjustable="box")
    ax.legend(loc="best", fontsize=8)
    ax.set_title(title)
    return _save(fig, path)


def plot_cost_history(path, history: Sequence[float], title: str = "") -> Path:
    fig = Figure(figsize=(5.6, 3.6))
    ax = fig.add_subplot()
    ax.plot(np.arange(len(history)), history, "o-", ms=3)
    ax.set_xlabel("iteration")
    ax.set_ylabel("cost")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_loci(path, phases, interface, b_point, alpha_disk: Disk, det_disk: Disk,
              extent_points: np.ndarray, title: str = "") -> Path:
    """Interface, B point and the non-convexity disks at one crossing time."""
    pts = [extent_points, np.asarray(b_point)[None, :]]
    for d in (alpha_disk, det_disk):
        if not d.empty:
            pts.append(d.center + d.radius * np.array([[1, 1], [-1, -1]]))
    xlim, ylim = _limits(np.vstack(pts))
    fig = Figure(figsize=(6.0, 5.2))
    ax = fig.add_subplot()
    _traffic_background(ax, phases, xlim, ylim)
    if interface is not None:
        _draw_interface(ax, interface, xlim, ylim)
    for d, colour, name in ((det_disk, "orange", "det < 0"), (alpha_disk, "red", "alpha < 0")):
        if not d.empty:
            ax.add_patch(Circle(d.center, d.radius, color=colour, alpha=0.35, label=name))
    ax.plot(*b_point, "w*", ms=12, label="B")
    ax.set_xlim(*xlim)
    ax.set_ylim(*ylim)
    ax.set_aspect("equal", adjustable="box")
    ax.legend(loc="best", fontsize=8)
    ax.set_title(title)
    return _save(fig, path)


def plot_model(path, samples: np.ndarray, labels: np.ndarray, phases, history) -> Path:
    """Cluster partition and the quadratic-error curve of a fitted model."""
    fig = Figure(figsize=(10.0, 4.2))
    ax1, ax2 = fig.subplots(1, 2)
    sc = ax1.scatter(samples[:, 0], samples[:, 1], c=labels, s=6, cmap="coolwarm")
    for p in phases:
        ax1.plot(*p.z_h, "k^", ms=9)
    fig.colorbar(sc, ax=ax1, label="cluster")
    ax1.set_title("partition")
    ax1.set_aspect("equal", adjustable="box")
    ax2.plot(np.arange(len(history)), history, "o-", ms=3)
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("quadratic error")
    ax2.set_yscale("log")
    fig.tight_layout()
    return _save(fig, path)


def plot_sweep(path, rows: list[dict]) -> Path:
    """Trajectory length against horizon, one curve per mass."""
    fig = Figure(figsize=(5.6, 3.8))
    ax = fig.add_subplot()
    ks = sorted({r["K"] for r in rows})
    for K in ks:
        pts = sorted((r["T"], r["L"]) for r in rows if r["K"] == K and r["status"] == "ok")
        if pts:
            t, length = zip(*pts)
            ax.plot(t, length, "o-", label=f"K={K:g}")
    ax.set_xlabel("T")
    ax.set_ylabel("trajectory length")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
