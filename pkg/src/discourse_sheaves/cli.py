"""Opinion dynamics on discourse sheaves from the command line.

Exit codes: 0 success, 1 reproduction mismatch, 2 usage error, 3 invalid
input, 4 no convergence before ``t_max``, 5 divergence ceiling hit,
6 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericalError, SchemaError, SheafError, SolvabilityError
from .free_opinions import (
    build_free_sheaf,
    compatibility_obstruction,
    constrained_diffuse,
    exact_sequence_audit,
    solve_poisson,
)
from .integrate import CONVERGED, DIVERGED, T_MAX_REACHED
from .io import Model, load_model, read_csv, save_model, write_csv
from .joint import (
    ScenarioPolicy,
    classify_edges,
    conservation_audit,
    equilibrium_residuals,
    joint_flow,
    qualifying_vertices,
    stationarity_residuals,
)
from .plotting import run_figures
from .sheaf import betti_numbers, coboundary, diffuse, project_h0
from .structure import AdaptationSpec, build_discrepancy_system, learning_flow, learning_limit, regularized_learning
from .timescale import check_opinion_stagnation, check_structural_stagnation, estimate_gaps, regime_thresholds

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_INVALID = 3
EXIT_NOT_CONVERGED = 4
EXIT_DIVERGED = 5
EXIT_NUMERICAL = 6

STATUS_EXIT = {CONVERGED: EXIT_OK, T_MAX_REACHED: EXIT_NOT_CONVERGED, DIVERGED: EXIT_DIVERGED}
MODES = ("diffuse", "poisson", "learn", "joint", "analyze", "audit")


class InputError(SheafError, ValueError):
    """Bad command-line input that is not a model-file problem."""


@dataclass
class RunConfig:
    mode: str
    inputs: list
    alpha: float = 1.0
    beta: float = 1.0
    lam: float = 0.0
    mu: float = 0.0
    t_max: float = 1e4
    stride: int = 1
    velocity_tol: float | None = None
    delta_ceiling: float | None = None
    y_ceiling: float | None = None
    epsilon: float | None = None
    seed: int = 0
    out: str = ""
    figures: bool = True
    ode: bool = True
    sources: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise InputError(f"unknown mode {self.mode!r}")
        for name in ("alpha", "beta", "lam", "mu"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise InputError(f"{name} must be a nonnegative finite number, got {v}")
        if self.mode == "diffuse" and self.alpha <= 0:
            raise InputError("alpha must be positive for diffusion")
        if self.mode == "learn" and self.beta <= 0:
            raise InputError("beta must be positive for learning")
        if self.mode == "joint" and self.alpha == 0 and self.beta == 0:
            raise InputError("alpha and beta cannot both be zero")
        if not self.t_max > 0:
            raise InputError("t_max must be positive")
        if self.stride < 1:
            raise InputError("stride must be at least 1")
        for name in ("velocity_tol", "delta_ceiling", "y_ceiling", "epsilon"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise InputError(f"{name} must be positive")


# -- helpers ------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _outdir(cfg: RunConfig) -> Path:
    if cfg.out:
        d = Path(cfg.out)
    else:
        d = Path.cwd() / f"{Path(cfg.inputs[0]).stem}_{cfg.mode}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_report(outdir: Path, report: dict) -> Path:
    path = outdir / "report.json"
    path.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=False) + "\n", encoding="utf-8")
    return path


def _cochain_columns(sheaf, states, prefix="x") -> dict:
    cols = {}
    for v in sheaf.graph.vertices:
        sl = sheaf.vslice(v)
        for i in range(sl.stop - sl.start):
            cols[f"{prefix}[{v}][{i}]"] = states[:, sl.start + i]
    return cols


def _edge_table(sheaf, x) -> list:
    out = []
    for e, r in sheaf.split1(coboundary(sheaf, x)).items():
        out.append({"edge": e, "residual": r, "norm": float(np.linalg.norm(r))})
    return out


def _require_cochain(model: Model) -> np.ndarray:
    if model.cochain is None:
        raise SchemaError("cochain", "this mode needs an initial cochain in the model")
    return model.cochain


def _parse_pairs(items) -> list:
    out = []
    for it in items:
        if ":" not in it:
            raise InputError(f"incidence {it!r} must look like vertex:edge")
        v, e = it.split(":", 1)
        out.append((v, e))
    return out


def _adaptation(model: Model, args) -> AdaptationSpec | None:
    g = model.sheaf.graph
    policy_path = getattr(args, "policy", None)
    if getattr(args, "adapt", None):
        return AdaptationSpec(g, frozenset(_parse_pairs(args.adapt)))
    if getattr(args, "freeze", None):
        return AdaptationSpec.frozen(g, _parse_pairs(args.freeze))
    if policy_path:
        try:
            doc = json.loads(Path(policy_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise SchemaError("policy", f"cannot read policy table: {exc}") from exc
        if not isinstance(doc, dict):
            raise SchemaError("policy", "policy table must be a JSON object")
        model.policy = ScenarioPolicy(doc.get("edges", {}), doc.get("default", "UniversalAdaptation"))
        model.adaptation = None
    return model.adaptation_or_policy()


# -- modes ------------------------------------------------------------------


def run_diffuse(cfg: RunConfig, model: Model, args) -> tuple[dict, int]:
    sh = model.sheaf
    x0 = _require_cochain(model)
    proj = project_h0(sh, x0)
    traj = diffuse(sh, x0, cfg.alpha, cfg.t_max, stride=cfg.stride,
                   **({"velocity_tol": cfg.velocity_tol} if cfg.velocity_tol else {}))
    outdir = _outdir(cfg)
    table = {"t": traj.t, "energy": traj.monitors["energy"], **_cochain_columns(sh, traj.states)}
    write_csv(outdir / "trajectory.csv", table)
    save_model(Model(sh, traj.final, model.stubborn, model.adaptation, model.policy, model.parameters),
               outdir / "final.model")
    report = {
        "status": traj.status,
        "message": traj.message,
        "t_end": traj.t[-1],
        "samples": len(traj),
        "h0_dimension": betti_numbers(sh)[0],
        "initial_energy": traj.monitors["energy"][0],
        "final_energy": traj.monitors["energy"][-1],
        "final_state": traj.final,
        "projection": proj,
        "projection_vs_ode": float(np.max(np.abs(proj - traj.final))) if proj.size else 0.0,
        "edges": _edge_table(sh, traj.final),
    }
    return _finish(cfg, outdir, table, report), STATUS_EXIT[traj.status]


def run_poisson(cfg: RunConfig, model: Model, args) -> tuple[dict, int]:
    sh = model.sheaf
    if model.stubborn is None:
        raise SchemaError("stubborn", "poisson mode needs a stubborn section")
    _, blocks = build_free_sheaf(sh, model.stubborn)
    x0 = model.cochain if model.cochain is not None else blocks.frame.total(np.zeros(blocks.frame.n_q))
    y0 = blocks.frame.p_q(x0)
    sol = solve_poisson(blocks, y0=y0)
    obs = compatibility_obstruction(sh, model.stubborn)
    r = coboundary(sh, sol.x)
    report = {
        "closed_form": sol.x,
        "energy": 0.5 * float(r @ r),
        "poisson_residual": sol.residual,
        "formula_gap": sol.formula_gap,
        "obstruction": {"compatible": obs.is_compatible, "residual": obs.residual, "tolerance": obs.tolerance},
        "edges": _edge_table(sh, sol.x),
    }
    status = CONVERGED
    outdir = _outdir(cfg)
    table = None
    final = sol.x
    if cfg.ode:
        traj = constrained_diffuse(blocks, y0=y0, alpha=cfg.alpha, t_max=cfg.t_max, stride=cfg.stride,
                                   **({"velocity_tol": cfg.velocity_tol} if cfg.velocity_tol else {}))
        xs = traj.monitors["x"]
        table = {"t": traj.t, "energy": traj.monitors["energy"], **_cochain_columns(sh, xs)}
        write_csv(outdir / "trajectory.csv", table)
        final = xs[-1]
        status = traj.status
        report.update(status=traj.status, message=traj.message, t_end=traj.t[-1], ode_final=final,
                      ode_vs_closed_form=float(np.max(np.abs(final - sol.x))) if final.size else 0.0)
    else:
        report["status"] = CONVERGED
    save_model(Model(sh, sol.x, model.stubborn, model.adaptation, model.policy, model.parameters),
               outdir / "final.model")
    return _finish(cfg, outdir, table, report), STATUS_EXIT[status]


def run_learn(cfg: RunConfig, model: Model, args) -> tuple[dict, int]:
    sh = model.sheaf
    x = _require_cochain(model)
    adapt = _adaptation(model, args)
    if adapt is None:
        raise SchemaError("adaptation", "learn mode needs an adaptation or policy section (or --adapt/--freeze)")
    sys_ = build_discrepancy_system(sh, x, adapt)
    rho0 = sys_.rho_of()
    if cfg.lam > 0:
        target = regularized_learning(sys_, rho0, cfg.lam)
        limit_info = {"regularization": cfg.lam}
    else:
        lim = learning_limit(sys_, rho0)
        target = lim.rho
        limit_info = {"formula_gap": lim.formula_gap, "stationarity": lim.stationarity, "consistent": lim.consistent}
    report = {
        "initial_sq_discrepancy": 2 * sys_.objective(rho0),
        "closed_form_sq_discrepancy": 2 * sys_.objective(target),
        **limit_info,
        "limit_maps": {f"{v}:{e}": m for (v, e), m in sys_.blocks(target).items()},
    }
    outdir = _outdir(cfg)
    table = None
    final = target
    status = CONVERGED
    if cfg.ode:
        traj = learning_flow(sys_, rho0, cfg.beta, cfg.t_max, lam=cfg.lam, stride=cfg.stride,
                             **({"velocity_tol": cfg.velocity_tol} if cfg.velocity_tol else {}))
        cols = {}
        for (v, e), sl in sys_.offsets.items():
            for k in range(sl.start, sl.stop):
                cols[f"rho[{v}:{e}][{k - sl.start}]"] = traj.states[:, k]
        table = {"t": traj.t, "objective": traj.monitors["objective"], **cols}
        write_csv(outdir / "trajectory.csv", table)
        final = traj.final
        status = traj.status
        report.update(status=traj.status, message=traj.message, t_end=traj.t[-1],
                      flow_vs_closed_form=float(np.max(np.abs(final - target))) if final.size else 0.0)
    else:
        report["status"] = CONVERGED
    learned = sys_.sheaf_with(final)
    report["edges"] = _edge_table(learned, x)
    save_model(Model(learned, x, model.stubborn, model.adaptation, model.policy, model.parameters),
               outdir / "final.model")
    return _finish(cfg, outdir, table, report), STATUS_EXIT[status]


def joint_table(traj) -> dict:
    problem = traj.meta["problem"]
    m = traj.monitors
    with np.errstate(divide="ignore", invalid="ignore"):
        dx2 = m["dx_norm"] ** 2
        rl = np.where(dx2 > 0, m["opinion_dissipation"] / dx2, np.nan)
        rm = np.where(dx2 > 0, m["structure_dissipation"] / dx2, np.nan)
    table = {"t": traj.t}
    for key in ("psi", "delta_fro", "x_norm", "dx_norm", "x_disp", "delta_disp",
                "opinion_dissipation", "structure_dissipation", "mu_weighted"):
        table[key] = m[key]
    table["ratio_lambda"] = rl
    table["ratio_mu"] = rm
    for key in ("lyapunov", "y_disp_sq", "rho_disp_sq"):
        if key in m:
            table[key] = m[key]
    for i, v in enumerate(problem.sheaf.graph.vertices):
        table[f"norm_x[{v}]"] = m["vertex_norms"][:, i]
    for v in traj.meta["audit_vertices"]:
        q = m[f"Q[{v}]"]
        n = q.shape[1]
        for i in range(n):
            for j in range(n):
                table[f"Q[{v}][{i},{j}]"] = q[:, i, j]
    return table


def run_joint(cfg: RunConfig, model: Model, args) -> tuple[dict, int]:
    sh = model.sheaf
    x0 = _require_cochain(model)
    adapt = _adaptation(model, args)
    if adapt is None:
        adapt = AdaptationSpec.none(sh.graph)
    qual = qualifying_vertices(sh, model.stubborn, adapt)
    audit = args.audit if getattr(args, "audit", None) else [v for v, why in qual.items() if not why]
    unknown = [v for v in audit if v not in sh.vertex_dims]
    if unknown:
        raise InputError(f"unknown audit vertices {unknown}")
    kw = {"velocity_tol": cfg.velocity_tol} if cfg.velocity_tol else {}
    traj = joint_flow(sh, model.stubborn, adapt, x0, cfg.alpha, cfg.beta, cfg.t_max, lam=cfg.lam, mu=cfg.mu,
                      stride=cfg.stride, audit_vertices=audit, delta_ceiling=cfg.delta_ceiling,
                      y_ceiling=cfg.y_ceiling, **kw)
    problem = traj.meta["problem"]
    z = traj.final
    final_sheaf = problem.sheaf_of(z)
    final_x = problem.x_of(z)
    outdir = _outdir(cfg)
    table = joint_table(traj)
    write_csv(outdir / "trajectory.csv", table)
    save_model(Model(final_sheaf, final_x, model.stubborn, adapt, None, model.parameters), outdir / "final.model")

    cls = classify_edges(sh, model.stubborn, adapt, model.policy)
    report = {
        "status": traj.status,
        "message": traj.message,
        "t_end": traj.t[-1],
        "samples": len(traj),
        "initial_energy": traj.monitors["psi"][0],
        "final_energy": traj.monitors["psi"][-1],
        "initial_frobenius": traj.monitors["delta_fro"][0],
        "final_frobenius": traj.monitors["delta_fro"][-1],
        "final_state": final_x,
        "stationarity": stationarity_residuals(problem, z, cfg.lam, cfg.mu),
        "edge_classes": {"stubbornness": cls.by_stubbornness, "type": cls.by_type, "policy": cls.labels},
        "equilibrium": [
            {"edge": r.edge, "status": r.status, "residual": r.residual,
             "adapting_norms": r.adapting_norms, "expressed": r.expressed}
            for r in equilibrium_residuals(final_sheaf, final_x, adapt)
        ],
        "conservation": [
            {"vertex": c.vertex, "applicable": c.applicable, "reason": c.reason, "drift": c.drift,
             "eigenvalues": c.eigenvalues, "interpretation": c.interpretation}
            for c in conservation_audit(traj, list(sh.graph.vertices))
        ],
        "final_maps": {f"{v}:{e}": m for (v, e), m in final_sheaf.restrictions.items()},
    }
    if "lyapunov" in traj.monitors:
        l0 = traj.monitors["lyapunov"][0]
        report["a_priori"] = {
            "y_bound": 2 * l0 / cfg.lam if cfg.lam else math.inf,
            "rho_bound": 2 * l0 / cfg.mu if cfg.mu else math.inf,
            "y_max": float(traj.monitors["y_disp_sq"].max()),
            "rho_max": float(traj.monitors["rho_disp_sq"].max()),
        }
    if len(traj) >= 2 and cfg.lam == 0 and cfg.mu == 0:
        report["bounds"] = _bounds(traj, cfg)
    return _finish(cfg, outdir, table, report), STATUS_EXIT[traj.status]


def _bounds(source, cfg: RunConfig) -> dict:
    gaps = estimate_gaps(source)
    out = {
        "gaps": {k: getattr(gaps, k) for k in ("lambda_eff", "mu_eff", "B_x", "B_delta", "initial_discrepancy",
                                                "horizon", "stride", "equilibrium_reached", "undefined",
                                                "mu_formula_gap")},
    }
    for name, fn in (("structural", check_structural_stagnation), ("opinion", check_opinion_stagnation)):
        rep = fn(source, cfg.alpha, cfg.beta, gaps)
        out[name] = {**asdict(rep), "confirmed": rep.confirmed}
    if cfg.epsilon and gaps.lambda_eff > 0 and gaps.mu_eff > 0:
        lo, hi = regime_thresholds(cfg.epsilon, gaps.lambda_eff, gaps.mu_eff, gaps.B_x, gaps.B_delta,
                                   gaps.initial_discrepancy)
        out["thresholds"] = {"epsilon": cfg.epsilon, "rho_minus": lo, "rho_plus": hi, "beta_over_alpha":
                             cfg.beta / cfg.alpha if cfg.alpha else math.inf}
    return out


def run_analyze(cfg: RunConfig, args) -> tuple[dict, int]:
    path = Path(cfg.inputs[0])
    try:
        table = read_csv(path)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    sidecar = path.parent / "report.json"
    if sidecar.exists():
        try:
            echo = json.loads(sidecar.read_text(encoding="utf-8")).get("config", {})
        except json.JSONDecodeError:
            echo = {}
        for name in ("alpha", "beta"):
            if cfg.sources.get(name) == "default" and name in echo:
                setattr(cfg, name, float(echo[name]))
                cfg.sources[name] = "report.json"
        if cfg.sources.get("stride") == "default" and "stride" in echo:
            table["stride"] = int(echo["stride"])
    try:
        bounds = _bounds(table, cfg)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    gaps = estimate_gaps(table)
    outdir = _outdir(cfg)
    ratios = {"t": table["t"], "ratio_lambda": gaps.ratio_lambda, "ratio_mu": gaps.ratio_mu, "psi": table.get(
        "psi", 0.5 * table["dx_norm"] ** 2)}
    write_csv(outdir / "ratios.csv", ratios)
    report = {"status": CONVERGED, "bounds": bounds}
    return _finish(cfg, outdir, ratios, report), EXIT_OK


def run_audit(cfg: RunConfig, model: Model, args) -> tuple[dict, int]:
    sh = model.sheaf
    h0, h1 = betti_numbers(sh)
    report = {"status": CONVERGED, "h0": h0, "h1": h1, "connected": sh.graph.is_connected(),
              "dim0": sh.dim0, "dim1": sh.dim1}
    if model.stubborn is not None:
        seq = exact_sequence_audit(sh, model.stubborn)
        obs = compatibility_obstruction(sh, model.stubborn)
        report["exact_sequence"] = seq.as_dict()
        report["obstruction"] = {"compatible": obs.is_compatible, "residual": obs.residual,
                                 "tolerance": obs.tolerance}
    adapt = _adaptation(model, args)
    if adapt is not None:
        cls = classify_edges(sh, model.stubborn, adapt, model.policy)
        report["edge_classes"] = {"stubbornness": cls.by_stubbornness, "type": cls.by_type, "policy": cls.labels}
        report["conservation_applicable"] = {
            v: (why or "applicable") for v, why in qualifying_vertices(sh, model.stubborn, adapt).items()
        }
        if model.cochain is not None:
            sys_ = build_discrepancy_system(sh, model.cochain, adapt)
            report["structure_consistent"] = sys_.consistent()
    outdir = _outdir(cfg)
    return _finish(cfg, outdir, None, report), EXIT_OK


def _finish(cfg: RunConfig, outdir: Path, table, report: dict) -> dict:
    report = {"config": {k: v for k, v in asdict(cfg).items() if k != "sources"},
              "parameter_sources": cfg.sources, **report}
    if table is not None and cfg.figures:
        report["figures"] = [p.name for p in run_figures(table, outdir)]
    report["wall_clock_s"] = time.perf_counter() - cfg.sources.get("_start", time.perf_counter())
    report["parameter_sources"] = {k: v for k, v in cfg.sources.items() if not k.startswith("_")}
    _write_report(outdir, report)
    report["output_dir"] = str(outdir)
    return report


# -- argument parsing -------------------------------------------------------

PARAM_DEFAULTS = {"alpha": 1.0, "beta": 1.0, "lam": 0.0, "mu": 0.0, "t_max": 1e4, "stride": 1}


def _common(p: argparse.ArgumentParser, params=("alpha", "beta", "lam", "mu")):
    for name in params:
        p.add_argument(f"--{name}", type=float, default=None,
                       help=f"rate/penalty (default: model parameters, else {PARAM_DEFAULTS[name]})")
    p.add_argument("--t-max", dest="t_max", type=float, default=None, help="integration horizon (default 1e4)")
    p.add_argument("--stride", type=int, default=None, help="record every n-th accepted step (default 1)")
    p.add_argument("--velocity-tol", dest="velocity_tol", type=float, default=None,
                   help="rest threshold on the velocity norm (default 1e-10, joint 1e-9)")
    p.add_argument("--out", default="", help="output directory (default ./<model>_<mode>)")
    p.add_argument("--no-figures", dest="figures", action="store_false", help="skip PNG figures")


def _adapt_flags(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--adapt", nargs="+", metavar="V:E", help="adapting incidences (overrides the model)")
    g.add_argument("--freeze", nargs="+", metavar="V:E", help="frozen incidences; everything else adapts")
    g.add_argument("--policy", metavar="FILE", help="JSON policy table {default, edges}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="discourse-sheaves", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="load a model and report its shape")
    p.add_argument("model")

    p = sub.add_parser("diffuse", help="sheaf diffusion from the model cochain")
    p.add_argument("model")
    _common(p, ("alpha",))

    p = sub.add_parser("poisson", help="equilibrium with stubborn directions clamped")
    p.add_argument("model")
    _common(p, ("alpha",))
    p.add_argument("--no-ode", dest="ode", action="store_false", help="closed form only")

    p = sub.add_parser("learn", help="learn adapting restriction maps with opinions fixed")
    p.add_argument("model")
    _common(p, ("beta", "lam"))
    _adapt_flags(p)
    p.add_argument("--no-ode", dest="ode", action="store_false", help="closed form only")

    p = sub.add_parser("joint", help="joint opinion/structure flow ('joint run MODEL' also accepted)")
    p.add_argument("target", nargs="+", metavar="[run] MODEL")
    _common(p)
    _adapt_flags(p)
    p.add_argument("--audit", nargs="+", metavar="V", help="vertices whose Q_vv is monitored")
    p.add_argument("--delta-ceiling", dest="delta_ceiling", type=float, default=None)
    p.add_argument("--y-ceiling", dest="y_ceiling", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None, help="also report regime thresholds for this epsilon")

    p = sub.add_parser("analyze", help="spectral gaps and stagnation bounds from a joint trajectory CSV")
    p.add_argument("trajectory")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--out", default="")
    p.add_argument("--no-figures", dest="figures", action="store_false")

    p = sub.add_parser("audit", help="cohomology, obstruction and edge classification report")
    p.add_argument("model")
    _adapt_flags(p)
    p.add_argument("--out", default="")

    p = sub.add_parser("sweep", help="run the joint flow over a list of parameter values in parallel")
    p.add_argument("model")
    p.add_argument("--param", choices=("alpha", "beta", "lam", "mu"), required=True)
    p.add_argument("--values", type=float, nargs="+", required=True)
    p.add_argument("--workers", type=int, default=None)
    _common(p)
    _adapt_flags(p)

    p = sub.add_parser("reproduce-paper", help="run the worked-example checks from the bundled models")
    p.add_argument("--tol", type=float, default=0.0, help="loosen every tolerance to at least this value")
    p.add_argument("--models", default=None, help="directory of model files to use instead of the bundled ones")

    p = sub.add_parser("run", help="dispatch by --mode")
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("rest", nargs=argparse.REMAINDER)
    return ap


def _config(mode: str, args, model: Model | None) -> RunConfig:
    params = model.parameters if model is not None else {}
    sources = {"_start": time.perf_counter()}
    values = {}
    for name, default in PARAM_DEFAULTS.items():
        given = getattr(args, name, None)
        if given is not None:
            values[name], sources[name] = given, "command line"
        elif name in params:
            values[name], sources[name] = params[name], "model"
        else:
            values[name], sources[name] = default, "default"
    values["stride"] = int(values["stride"])
    cfg = RunConfig(
        mode=mode,
        inputs=[getattr(args, "model", None) or getattr(args, "trajectory", "")],
        velocity_tol=getattr(args, "velocity_tol", None),
        delta_ceiling=getattr(args, "delta_ceiling", None),
        y_ceiling=getattr(args, "y_ceiling", None),
        epsilon=getattr(args, "epsilon", None),
        out=getattr(args, "out", ""),
        figures=getattr(args, "figures", True),
        ode=getattr(args, "ode", True),
        sources=sources,
        **values,
    )
    cfg.validate()
    return cfg


def _summary(report: dict) -> str:
    keys = ("status", "message", "t_end", "energy", "initial_energy", "final_energy", "initial_frobenius",
            "final_frobenius", "initial_sq_discrepancy", "closed_form_sq_discrepancy", "final_state", "h0", "h1")
    lines = [f"{k}: {_jsonable(report[k])}" for k in keys if k in report]
    for row in report.get("edges", []):
        lines.append(f"edge {row['edge']}: residual {_jsonable(row['residual'])} (norm {row['norm']:.6g})")
    for row in report.get("equilibrium", []):
        lines.append(f"edge {row['edge']}: {row['status']} (residual {row['residual']:.3e})")
    b = report.get("bounds")
    if b:
        lines.append(f"lambda_eff={b['gaps']['lambda_eff']:.6g} mu_eff={b['gaps']['mu_eff']:.6g}")
        for name in ("structural", "opinion"):
            r = b[name]
            lines.append(f"{name} bound: observed {r['observed']:.6g} <= {r['bound']:.6g} "
                         f"({'confirmed' if r['confirmed'] else 'not confirmed'}) {r['note']}".rstrip())
    if "output_dir" in report:
        lines.append(f"outputs: {report['output_dir']}")
    return "\n".join(lines)


def _sweep_one(job):
    model_path, param, value, base, adapt_pairs = job
    model = load_model(model_path)
    adapt = AdaptationSpec(model.sheaf.graph, frozenset(adapt_pairs)) if adapt_pairs is not None else None
    kw = dict(base)
    kw[param] = value
    traj = joint_flow(model.sheaf, model.stubborn, adapt or AdaptationSpec.none(model.sheaf.graph), model.cochain,
                      kw["alpha"], kw["beta"], kw["t_max"], lam=kw["lam"], mu=kw["mu"], stride=kw["stride"])
    m = traj.monitors
    return {
        param: value,
        "status": {CONVERGED: 0.0, T_MAX_REACHED: 1.0, DIVERGED: 2.0}.get(traj.status, 3.0),
        "t_end": traj.t[-1],
        "final_psi": m["psi"][-1],
        "final_frobenius": m["delta_fro"][-1],
        "x_disp": m["x_disp"][-1],
        "delta_disp": m["delta_disp"][-1],
    }


def run_sweep(args) -> int:
    model = load_model(args.model)
    _require_cochain(model)
    cfg = _config("joint", args, model)
    adapt = _adaptation(model, args)
    base = {k: getattr(cfg, k) for k in ("alpha", "beta", "lam", "mu", "t_max", "stride")}
    jobs = [(args.model, args.param, v, base, adapt.ordered() if adapt is not None else None) for v in args.values]
    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        rows = list(pool.map(_sweep_one, jobs))
    outdir = Path(args.out) if args.out else Path.cwd() / f"{Path(args.model).stem}_sweep"
    outdir.mkdir(parents=True, exist_ok=True)
    cols = {k: [r[k] for r in rows] for k in rows[0]}
    write_csv(outdir / "sweep.csv", cols)
    for r in rows:
        print(" ".join(f"{k}={v:.6g}" for k, v in r.items()))
    print(f"status codes: 0 converged, 1 t_max, 2 diverged; outputs: {outdir}")
    codes = {r["status"] for r in rows}
    return EXIT_DIVERGED if 2.0 in codes else EXIT_NOT_CONVERGED if 1.0 in codes else EXIT_OK


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "validate":
        model = load_model(args.model)
        sh = model.sheaf
        h0, h1 = betti_numbers(sh)
        print(f"ok: {len(sh.graph.vertices)} vertices, {len(sh.graph.edges)} edges, "
              f"C0 dim {sh.dim0}, C1 dim {sh.dim1}, H0 dim {h0}, H1 dim {h1}")
        for name, present in (("cochain", model.cochain is not None), ("stubborn", model.stubborn is not None),
                              ("adaptation", model.adaptation is not None), ("policy", model.policy is not None)):
            print(f"  {name}: {'yes' if present else 'no'}")
        return EXIT_OK
    if cmd == "reproduce-paper":
        from .reproduce import render, run_suite

        checks = run_suite(args.models, args.tol)
        print(render(checks))
        return EXIT_OK if all(c.passed for c in checks) else EXIT_MISMATCH
    if cmd == "sweep":
        return run_sweep(args)
    if cmd == "analyze":
        cfg = _config("analyze", args, None)
        report, code = run_analyze(cfg, args)
        print(_summary(report))
        return code
    if cmd == "joint":
        target = list(args.target)
        if target and target[0] == "run":
            target = target[1:]
        if len(target) != 1:
            raise InputError("usage: joint [run] MODEL")
        args.model = target[0]
    model = load_model(args.model)
    cfg = _config(cmd, args, model)
    runner = {"diffuse": run_diffuse, "poisson": run_poisson, "learn": run_learn, "joint": run_joint,
              "audit": run_audit}[cmd]
    report, code = runner(cfg, model, args)
    print(_summary(report))
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "run":
        rest = [a for a in args.rest if a != "--"]
        args = parser.parse_args([args.mode, *rest])
    try:
        return _dispatch(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SolvabilityError, NumericalError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SheafError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
