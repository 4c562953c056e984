"""Command-line driver: ``hjtraj {preprocess,plan,analyze,estimate,sweep}``.

Every option may also come from ``--config run.json``; explicit flags win.
Exit codes: 0 success, 1 input error, 2 solver error, 3 non-convergence
(partial output is still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import bi_phase, preprocess, solvers
from .errors import (
    ConstantField,
    DegenerateFit,
    DegenerateInterface,
    EmptyCluster,
    EmptyInput,
    HJTrajError,
    MaxIterations,
    OutOfWindow,
    ProjectionAmbiguous,
    TooFewSamples,
    Unsupported,
)
from .model import Instance, QuadraticPhase, vec2

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_NONCONVERGED = 0, 1, 2, 3
N_SAMPLES = 512

INPUT_ERRORS = (ValueError, OSError, KeyError, TypeError, EmptyInput, TooFewSamples,
                ConstantField, DegenerateFit, EmptyCluster, DegenerateInterface, Unsupported,
                OutOfWindow, ProjectionAmbiguous)


class InputError(Exception):
    """Invalid command-line or configuration input."""


# -- option tables --------------------------------------------------------------------


def _vec(v) -> np.ndarray:
    if isinstance(v, str):
        parts = v.split(",")
        if len(parts) != 2:
            raise ValueError(f"expected X,Y, got {v!r}")
        v = [float(p) for p in parts]
    return vec2(v)


def _floats(v) -> list[float]:
    if isinstance(v, str):
        return [float(p) for p in v.split(",") if p.strip()]
    if isinstance(v, (int, float)):
        return [float(v)]
    return [float(p) for p in v]


def _opt_int(v):
    if v is None or (isinstance(v, str) and v.lower() in ("none", "inf", "all")):
        return None
    return int(v)


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("1", "true", "yes", "on"):
        return True
    if isinstance(v, str) and v.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _choice(*choices: str) -> Callable[[Any], str]:
    def conv(v):
        v = str(v)
        if v not in choices:
            raise ValueError(f"expected one of {', '.join(choices)}, got {v!r}")
        return v
    return conv


@dataclass(frozen=True)
class Opt:
    name: str  # flag name without dashes; also the config key
    conv: Callable[[Any], Any]
    default: Any = None
    help: str = ""
    required: bool = False
    flag: bool = False  # store_true style switch

    @property
    def dest(self) -> str:
        return self.name.replace("-", "_")


INSTANCE_OPTS = [
    Opt("model", str, help="model JSON (phases, optional interface)", required=True),
    Opt("z0", _vec, help="start position X,Y", required=True),
    Opt("zT", _vec, help="end position X,Y", required=True),
    Opt("t0", float, 0.0, "start time"),
]

SOLVER_OPTS = [
    Opt("eps-p", float, 2e-4, "impulsion discrepancy tolerance"),
    Opt("eps-H", float, 2e-4, "Hamiltonian discrepancy tolerance"),
    Opt("eps-B", float, 2e-4, "B-Algo relative bracket tolerance"),
    Opt("M-tau", int, 10, "Newton steps on tau per Grad-Algo iteration"),
    Opt("delta-tau", float, None, "AOA time step (default: window/1000)"),
    Opt("eps-tau", float, 1e-12, "AOA time-change threshold"),
    Opt("eps-xi", float, 1e-12, "AOA position-change threshold"),
    Opt("eps-S", float, 1e-9, "AOA cost-change threshold"),
    Opt("max-outer", int, 5000, "iteration cap"),
    Opt("mpc-dt", float, None, "MPC step (default: window/200)"),
    Opt("b-refine", _bool, True, "interpolate the B-Algo crossing in the last bracket"),
]

COMMANDS: dict[str, list[Opt]] = {
    "preprocess": [
        Opt("in", str, help="input CSV with header x,y,z", required=True),
        Opt("out", str, "model.json", "output model JSON"),
        Opt("kc", int, 2, "number of clusters"),
        Opt("kn", _opt_int, 5, "nearest neighbours gating a relabel (none = always)"),
        Opt("iters", int, 12, "K-means iterations"),
        Opt("alpha", float, 0.25, "LOWESS span"),
        Opt("grid", int, 50, "aggregation grid steps per axis"),
        Opt("bounds", _floats, None, "xmin,xmax,ymin,ymax (default: data box)"),
        Opt("plot", _bool, False, "also write a PNG next to the model", flag=True),
    ],
    "plan": INSTANCE_OPTS + [
        Opt("T", float, help="end time", required=True),
        Opt("K", float, help="mass", required=True),
        Opt("solver", _choice("grad", "b", "aoa", "mpc"), "b", "planning algorithm"),
        Opt("out-prefix", str, "plan", "prefix for _traj.csv and _plan.json"),
        Opt("plot", _bool, False, "also write PNG figures", flag=True),
    ] + SOLVER_OPTS,
    "analyze": INSTANCE_OPTS + [
        Opt("T", float, help="end time", required=True),
        Opt("K", float, help="mass", required=True),
        Opt("tau", float, help="crossing time", required=True),
        Opt("out", str, "analysis.json", "output JSON"),
        Opt("plot", _bool, False, "also write a PNG of the loci", flag=True),
    ],
    "estimate": [
        Opt("z0", _vec, help="start position X,Y", required=True),
        Opt("zT", _vec, help="end position X,Y", required=True),
        Opt("units", _choice("m", "deg", "scaled"), "m", "unit of z0/zT"),
        Opt("v-bar", float, 20.0, "cruise speed (m/s)"),
        Opt("c", float, 1.5, "path-length to distance ratio"),
        Opt("phi-max", float, 10.0, "largest admissible temporal phase"),
        Opt("r", float, preprocess.SCALE_RATIO, "degrees to scaled-unit ratio"),
        Opt("model", str, None, "model JSON whose u0 values bound K"),
        Opt("K", float, None, "mass (scaled frame) to check phases against phi-max"),
        Opt("out", str, "estimates.json", "output JSON"),
    ],
    "sweep": INSTANCE_OPTS + [
        Opt("K-values", _floats, help="comma-separated masses", required=True),
        Opt("T-values", _floats, help="comma-separated end times", required=True),
        Opt("solver", _choice("grad", "b", "aoa", "mpc"), "b", "planning algorithm"),
        Opt("workers", int, 1, "parallel worker processes"),
        Opt("out", str, "sweep.csv", "output CSV"),
        Opt("plot", _bool, False, "also write a PNG of L against T", flag=True),
    ] + SOLVER_OPTS,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hjtraj", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file of option values (flags override)")
        for o in opts:
            text = o.help + ("" if o.default is None or o.flag else f" [default: {o.default}]")
            if o.flag:
                p.add_argument(f"--{o.name}", dest=o.dest, action="store_const", const=True,
                               default=argparse.SUPPRESS, help=text)
            else:
                p.add_argument(f"--{o.name}", dest=o.dest, default=argparse.SUPPRESS, help=text)
    return parser


def resolve_options(command: str, ns: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags; convert and validate everything up front."""
    opts = COMMANDS[command]
    by_key = {}
    for o in opts:
        by_key[o.name] = o
        by_key[o.dest] = o
    raw: dict[str, Any] = {}
    cfg_path = getattr(ns, "config", None)
    if cfg_path:
        try:
            cfg = json.loads(Path(cfg_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {cfg_path}: {exc}") from None
        if not isinstance(cfg, dict):
            raise InputError("config file must hold a JSON object")
        unknown = sorted(k for k in cfg if k not in by_key)
        if unknown:
            raise InputError(f"unknown config keys for '{command}': {', '.join(unknown)}")
        raw.update({by_key[k].dest: v for k, v in cfg.items()})
    for o in opts:
        if hasattr(ns, o.dest):
            raw[o.dest] = getattr(ns, o.dest)
    out = {}
    for o in opts:
        if o.dest in raw and raw[o.dest] is not None:
            try:
                out[o.dest] = o.conv(raw[o.dest])
            except (ValueError, TypeError) as exc:
                raise InputError(f"--{o.name}: {exc}") from None
        elif o.required:
            raise InputError(f"--{o.name} is required")
        else:
            out[o.dest] = o.default
    return out


# -- shared helpers --------------------------------------------------------------------


def _clean(x):
    """JSON-safe copy: arrays to lists, non-finite floats to null."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    return x


def write_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(_clean(payload), indent=2, allow_nan=False) + "\n",
                          encoding="utf-8")


def load_model_file(path: str | Path) -> tuple[tuple[QuadraticPhase, ...], Any]:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    phases = tuple(QuadraticPhase.from_dict(p) for p in d["phases"])
    if not 1 <= len(phases) <= 2:
        raise ValueError(f"model must hold 1 or 2 phases, got {len(phases)}")
    iface = bi_phase.interface_from_dict(d["interface"]) if d.get("interface") else None
    return phases, iface


def make_instance(o: dict, K: float, T: float) -> Instance:
    phases, iface = load_model_file(o["model"])
    return Instance(K=K, t0=o["t0"], T=T, z0=o["z0"], zT=o["zT"], phases=phases,
                    interface=iface)


def solver_config(o: dict) -> solvers.SolverConfig:
    return solvers.SolverConfig(
        eps_p=o["eps_p"], eps_H=o["eps_H"], eps_B=o["eps_B"], M_tau=o["M_tau"],
        delta_tau=o["delta_tau"], eps_tau=o["eps_tau"], eps_xi=o["eps_xi"], eps_S=o["eps_S"],
        max_outer=o["max_outer"], mpc_dt=o["mpc_dt"], b_refine=o["b_refine"],
    )


@dataclass
class PlanOutcome:
    samples: dict
    record: dict
    converged: bool


def run_plan(instance: Instance, solver: str, cfg: solvers.SolverConfig) -> PlanOutcome:
    """Run one solver; non-convergence is reported in the outcome, not raised."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", solvers.MultipleCrossingsWarning)
        if solver == "mpc":
            res = solvers.mpc(instance, cfg.mpc_dt)
            samples = solvers.sample_mpc(res, instance, N_SAMPLES)
            crossing = None
            if instance.is_bi_phase:
                t = samples["t"]
                z = np.column_stack([samples["x"], samples["y"]])
                crossing = solvers.crossing_of_samples(instance, t, z)
            record = {
                "solver": "mpc", "converged": True, "S": res.cost,
                "tau": None if crossing is None else crossing[0],
                "xi": None if crossing is None else crossing[1],
                "residuals": None, "iterations": len(res.steps),
                "hessian_eigenvalues": None, "cost_history": [],
            }
            return PlanOutcome(samples, record, True)
        if not instance.is_bi_phase:
            result = solvers.plan_single_phase(instance)
        elif solver == "grad":
            result = solvers.grad_algo(instance, cfg)
        elif solver == "b":
            result = solvers.b_algo(instance, cfg)
        else:
            try:
                result = solvers.aoa(instance, cfg)
            except MaxIterations as exc:
                result = exc.partial
    samples = solvers.sample_plan(result, instance, N_SAMPLES)
    sol = result.solution
    record = {
        "solver": result.solver if sol is not None else "closed-form",
        "converged": result.converged,
        "S": result.S_total,
        "tau": None if sol is None else sol.tau,
        "xi": None if sol is None else sol.xi,
        "residuals": None if sol is None else {
            "g_p": sol.g_p, "g_H": sol.g_H, "delta_p": sol.delta_p, "delta_H": sol.delta_H,
            "mu": sol.mu, "H_minus": sol.H_minus, "H_plus": sol.H_plus,
            "interface_gap": sol.interface_gap,
        },
        "iterations": result.outer_iterations,
        "hessian_eigenvalues": None if result.hessian is None else result.hessian.eigenvalues,
        "hessian_positive_definite": (None if result.hessian is None
                                      else result.hessian.is_positive_definite),
        "pd_history": result.pd_history,
        "clamped": result.clamped,
        "cost_history": result.cost_history,
        "warnings": [str(w.message) for w in caught],
    }
    return PlanOutcome(samples, record, result.converged)


def write_traj_csv(path: str | Path, samples: dict) -> None:
    cols = ["t", "x", "y", "vx", "vy", "H", "phase"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i in range(len(samples["t"])):
            w.writerow([repr(float(samples[c][i])) for c in cols[:-1]]
                       + [int(samples["phase"][i])])


def path_length(samples: dict) -> float:
    xy = np.column_stack([samples["x"], samples["y"]])
    return float(np.sum(np.hypot(*np.diff(xy, axis=0).T)))


# -- commands ----------------------------------------------------------------------------


def cmd_preprocess(o: dict) -> int:
    data = preprocess.read_samples_csv(o["in"])
    bounds = o["bounds"]
    if bounds is not None and len(bounds) != 4:
        raise InputError("--bounds needs xmin,xmax,ymin,ymax")
    grid = preprocess.aggregate(data, n_steps=o["grid"], bounds=bounds)
    smoothed = preprocess.normalize(preprocess.lowess(grid.centers(), o["alpha"]))
    model = preprocess.kmeans_quadratic(smoothed, K_c=o["kc"], K_n=o["kn"], M=o["iters"])
    preprocess.save_model(o["out"], model)
    print(f"quad_error={model.quad_error!r} iterations={model.iterations} "
          f"phases={len(model.phases)} -> {o['out']}")
    if o["plot"]:
        from .plotting import plot_model
        png = Path(o["out"]).with_suffix(".png")
        plot_model(png, smoothed, model.labels, model.phases, model.history)
        print(f"figure -> {png}")
    return EXIT_OK


def cmd_plan(o: dict) -> int:
    inst = make_instance(o, o["K"], o["T"])
    outcome = run_plan(inst, o["solver"], solver_config(o))
    prefix = o["out_prefix"]
    write_traj_csv(f"{prefix}_traj.csv", outcome.samples)
    record = dict(outcome.record)
    record["instance"] = {"K": inst.K, "t0": inst.t0, "T": inst.T, "z0": inst.z0,
                          "zT": inst.zT, "phases": [p.to_dict() for p in inst.phases]}
    record["length"] = path_length(outcome.samples)
    write_json(f"{prefix}_plan.json", record)
    print(f"S={record['S']!r} tau={record['tau']} iterations={record['iterations']} "
          f"converged={record['converged']} -> {prefix}_plan.json, {prefix}_traj.csv")
    if o["plot"]:
        from .plotting import plot_cost_history, plot_trajectory
        iface = bi_phase.interface_of(inst) if inst.is_bi_phase else None
        plot_trajectory(f"{prefix}_traj.png", inst.phases, outcome.samples, iface,
                        record["xi"], title=f"{record['solver']}  S={record['S']:.6g}")
        if record["cost_history"]:
            plot_cost_history(f"{prefix}_cost.png", record["cost_history"],
                              title=f"{record['solver']} cost")
    return EXIT_OK if outcome.converged else EXIT_NONCONVERGED


def analysis_record(inst: Instance, tau: float) -> dict:
    B = bi_phase.b_point(inst, tau)
    h = bi_phase.h_coefficient(inst, tau)
    hess = bi_phase.two_phase_hessian(inst, tau, B)
    arcs = bi_phase.bi_phase_arcs(inst, tau, B)
    conv = []
    for arc in arcs:
        try:
            ratio, bound = bi_phase.convexity_ratio(arc)
            verdict = bi_phase.convexity_test(arc).value
        except HJTrajError as exc:
            ratio, bound, verdict = None, None, f"undefined: {exc}"
        conv.append({"ratio": ratio, "bound": bound, "verdict": verdict})
    a_form = bi_phase.alpha_form(inst, tau)
    d_form = bi_phase.det_form(inst, tau)
    return {
        "tau": tau,
        "h": h,
        "B": B,
        "hessian": hess.to_dict(),
        "convexity": conv,
        "alpha_locus": bi_phase.alpha_locus(inst, tau).to_dict(),
        "det_locus": bi_phase.det_locus(inst, tau).to_dict(),
        "alpha_form": {"A": a_form.A, "b": a_form.b, "c": a_form.c},
        "det_form": {"A": d_form.A, "b": d_form.b, "c": d_form.c},
    }


def cmd_analyze(o: dict) -> int:
    inst = make_instance(o, o["K"], o["T"])
    if not inst.is_bi_phase:
        raise Unsupported("analyze needs a two-phase model")
    record = analysis_record(inst, o["tau"])
    write_json(o["out"], record)
    print(f"h={record['h']!r} PD={record['hessian']['positive_definite']} -> {o['out']}")
    if o["plot"]:
        from .plotting import plot_loci
        png = Path(o["out"]).with_suffix(".png")
        plot_loci(png, inst.phases, bi_phase.interface_of(inst), record["B"],
                  bi_phase.alpha_locus(inst, o["tau"]), bi_phase.det_locus(inst, o["tau"]),
                  np.vstack([inst.z0, inst.zT] + [p.z_h for p in inst.phases]),
                  title=f"tau={o['tau']:g}")
        print(f"figure -> {png}")
    return EXIT_OK


def cmd_estimate(o: dict) -> int:
    u0s = ()
    if o["model"]:
        phases, _ = load_model_file(o["model"])
        u0s = [p.u0 for p in phases]
    est = preprocess.estimate_parameters(o["z0"], o["zT"], v_bar=o["v_bar"], c=o["c"],
                                         phi_max=o["phi_max"], r=o["r"], units=o["units"],
                                         u0s=u0s, K=o["K"])
    record = est.to_dict()
    record["phi_max"] = o["phi_max"]
    write_json(o["out"], record)
    print(f"r={est.r!r} T_est={est.T_est!r} -> {o['out']}")
    return EXIT_OK


SWEEP_COLUMNS = ["K", "T", "status", "tau", "xi_x", "xi_y", "S", "L", "avg_speed", "message"]


def sweep_cell(args) -> dict:
    o, K, T = args
    row = {"K": K, "T": T, "status": "ok", "tau": None, "xi_x": None, "xi_y": None, "S": None,
           "L": None, "avg_speed": None, "message": ""}
    try:
        inst = make_instance(o, K, T)
        out = run_plan(inst, o["solver"], solver_config(o))
        rec = out.record
        length = path_length(out.samples)
        row.update(S=rec["S"], L=length, avg_speed=length / inst.duration)
        if rec["tau"] is not None:
            row.update(tau=rec["tau"], xi_x=float(rec["xi"][0]), xi_y=float(rec["xi"][1]))
        if not out.converged:
            row.update(status="nonconverged")
    except Exception as exc:  # one failed cell must not stop the sweep
        row.update(status=type(exc).__name__, message=str(exc))
    return row


def cmd_sweep(o: dict) -> int:
    load_model_file(o["model"])  # validate once before fanning out
    cells = [(o, K, T) for K in o["K_values"] for T in o["T_values"]]
    if o["workers"] > 1:
        with ProcessPoolExecutor(max_workers=o["workers"]) as pool:
            rows = list(pool.map(sweep_cell, cells))
    else:
        rows = [sweep_cell(c) for c in cells]
    with open(o["out"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                        for c in SWEEP_COLUMNS])
    n_ok = sum(r["status"] == "ok" for r in rows)
    print(f"{n_ok}/{len(rows)} cells ok -> {o['out']}")
    if o["plot"]:
        from .plotting import plot_sweep
        plot_sweep(Path(o["out"]).with_suffix(".png"), rows)
    return EXIT_OK


HANDLERS = {"preprocess": cmd_preprocess, "plan": cmd_plan, "analyze": cmd_analyze,
            "estimate": cmd_estimate, "sweep": cmd_sweep}


def _glue_values(argv: list[str]) -> list[str]:
    """Turn ``--opt VALUE`` into ``--opt=VALUE`` so values such as ``-1,2`` are not read as flags."""
    takes_value = {f"--{o.name}" for opts in COMMANDS.values() for o in opts if not o.flag}
    takes_value.add("--config")
    out: list[str] = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok in takes_value and i + 1 < len(argv):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = _glue_values(list(sys.argv[1:] if argv is None else argv))
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors are input errors
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        opts = resolve_options(ns.command, ns)
        return HANDLERS[ns.command](opts)
    except InputError as exc:
        print(f"hjtraj {ns.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except INPUT_ERRORS as exc:
        print(f"hjtraj {ns.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except HJTrajError as exc:
        print(f"hjtraj {ns.command}: solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
