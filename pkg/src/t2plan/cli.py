"""``t2plan`` command line: synthesize, fit, predict, plan and validate.

Every command writes its outputs plus ``<command>.config.json`` (the resolved
arguments, with input files identified by name and SHA-256) into
``--out-dir``. Exit status is 0 on success, 1 for input or validation errors
and 2 when a fit fails numerically.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .approach1 import Approach1Config, Approach1Fit, approach1_sse, fit_approach1_tasks, predict_loss_k
from .approach2 import (
    Approach2Config,
    Approach2Fit,
    approach2_sse,
    beta_params,
    fit_beta_regression,
    naive_pass_at_k,
    predict_pass_at_k,
)
from .chinchilla import (
    ChinchillaConfig,
    ChinchillaFit,
    FitError,
    fit_chinchilla,
    inverse_variance_weights,
    observations_from_checkpoints,
    observations_from_targets,
    weighted_sse,
)
from .dataset import DatasetError, group_isoflop, load_checkpoints, dump_checkpoints
from .optimizer import OptimizationError
from .passk import (
    DEFAULT_K_GRID,
    build_pass_targets,
    macro_targets,
    naive_vs_mean_gap,
    read_pass_targets_csv,
    split_by_task,
    write_pass_targets_csv,
)
from .planner import (
    Budget,
    MacroFit,
    PlannerError,
    evaluate_objective,
    fit_from_json,
    frontier,
    inference_k,
    isoflop_profile,
    objective_kind,
    optimize_joint,
    optimize_train_only,
    write_frontier_csv,
    write_isoflop_csv,
)
from .serialization import atomic_write_text, dumps
from .synth import GridSpec, GroundTruth, generate_grid, generate_nll_data, generate_pass_targets

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERIC = 2

THREADS_ENV = "T2PLAN_THREADS"

PRESETS = {
    "appendix-c": {
        "grid": GridSpec.default(),
        "c_inf": 2e9,
        "c_inf_anchors": (2e9, 140e9),
    }
}

CANONICAL_TRUTH = {
    "E": 0.2, "A": 400.0, "alpha": 0.34, "B": 410.0, "beta": 0.28,
    "G": 1.5, "gamma": 0.6, "theta": (3.2, 4.0, 0.9, 1.0, -0.5),
}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"{self.prog}: {message}", EXIT_INPUT)


def _optional_float(text: str):
    """A float, or the literal ``none`` to switch a preset value off."""
    if text.lower() == "none":
        return "none"
    return float(text)


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _names(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


# --------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help=f"restart workers (fallback: ${THREADS_ENV})")
    p.add_argument("--out-dir", default=".")


def _fit_inputs(p: argparse.ArgumentParser, *, need_k: bool = True) -> None:
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--data", help="checkpoint JSONL")
    g.add_argument("--targets", help="pass-target CSV")
    if need_k:
        p.add_argument("--k-grid", type=_floats, default=tuple(float(k) for k in DEFAULT_K_GRID))
    p.add_argument("--task", default=None, help="restrict to one task id")


def _fit_knobs(p: argparse.ArgumentParser, restarts: int) -> None:
    p.add_argument("--fit-mode", choices=("per-task", "macro"), default="per-task")
    p.add_argument("--restarts", type=int, default=restarts)
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--tol", type=float, default=1e-15)
    p.add_argument("--out", default=None, help="output file name inside --out-dir")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="t2plan", description="Fit train/test scaling models and plan compute allocations.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate synthetic checkpoints and targets")
    _common(p)
    p.add_argument("--preset", choices=sorted(PRESETS), default="appendix-c")
    p.add_argument("--budgets", type=_floats, default=None, help="custom budgets (with --sizes)")
    p.add_argument("--sizes", type=_floats, default=None, help="custom model sizes (with --budgets)")
    for name in ("E", "A", "alpha", "B", "beta", "G", "gamma"):
        p.add_argument(f"--{name}", type=float, default=CANONICAL_TRUTH[name])
    p.add_argument("--theta", type=_floats, default=CANONICAL_TRUTH["theta"])
    p.add_argument("--no-a1", action="store_true", help="omit the (G, gamma) block")
    p.add_argument("--no-theta", action="store_true", help="omit the theta block")
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--n-questions", type=int, default=1000)
    p.add_argument("--nll-source", choices=("law", "beta"), default="law")
    p.add_argument("--k-grid", type=_floats, default=tuple(float(k) for k in DEFAULT_K_GRID))
    p.add_argument("--tasks", type=_names, default=("synthetic",))

    p = sub.add_parser("fit-chinchilla", help="fit the base (N, D) law")
    _common(p)
    _fit_inputs(p, need_k=False)
    _fit_knobs(p, restarts=50)
    p.add_argument("--e-grid", type=int, default=40)
    p.add_argument("--unweighted", action="store_true")

    p = sub.add_parser("fit-a1", help="fit the loss law with a k term")
    _common(p)
    _fit_inputs(p)
    _fit_knobs(p, restarts=500)

    p = sub.add_parser("fit-a2", help="fit the Beta-regression accuracy model")
    _common(p)
    _fit_inputs(p)
    _fit_knobs(p, restarts=32)
    p.add_argument("--base", required=True, help="fit-chinchilla output")

    p = sub.add_parser("predict", help="evaluate a fit at one (N, D, k)")
    _common(p)
    p.add_argument("--fit", required=True)
    p.add_argument("--n", type=float, required=True)
    p.add_argument("--d", type=float, required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--k", type=float, default=None)
    g.add_argument("--c-inf", type=float, default=None)

    p = sub.add_parser("plan", help="optimal allocation for one budget pair")
    _common(p)
    p.add_argument("--fit", required=True)
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--c-train", type=float, required=True)
    p.add_argument("--c-inf", type=_optional_float, default=None)

    p = sub.add_parser("frontier", help="optimal allocations across budgets")
    _common(p)
    p.add_argument("--fit", required=True)
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--budgets", type=_floats, default=None)
    p.add_argument("--c-inf", type=_optional_float, default=None)

    p = sub.add_parser("isoflop", help="objective along fixed-budget curves")
    _common(p)
    p.add_argument("--fit", required=True)
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--c-train", type=_floats, default=None)
    p.add_argument("--n-grid", type=_floats, default=None)
    p.add_argument("--c-inf", type=_optional_float, default=None)

    p = sub.add_parser("validate", help="check a fit's invariants against data")
    _common(p)
    p.add_argument("--fit", required=True)
    _fit_inputs(p)
    return parser


# --------------------------------------------------------------------------
# helpers


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        raw = os.environ.get(THREADS_ENV, "").strip()
        try:
            n = int(raw) if raw else 1
        except ValueError:
            raise CliError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise CliError("--threads must be >= 1")
    return n


def _file_ref(path: str) -> dict:
    data = Path(path).read_bytes()
    return {"name": Path(path).name, "sha256": hashlib.sha256(data).hexdigest()}


_INPUT_KEYS = ("data", "targets", "fit", "base")
_RUNTIME_KEYS = {"threads", "out_dir", "out", "command"}


def _effective_config(args, extra: Optional[dict] = None) -> dict:
    resolved = {}
    for key, value in sorted(vars(args).items()):
        if key in _RUNTIME_KEYS:
            continue
        if key in _INPUT_KEYS and value is not None:
            value = _file_ref(value)
        elif isinstance(value, tuple):
            value = list(value)
        resolved[key] = value
    if extra:
        resolved.update(extra)
    return {"command": args.command, "version": __version__, "args": resolved}


class _Outputs:
    def __init__(self, args):
        self.dir = Path(args.out_dir)
        self.args = args
        self.written: list[str] = []

    def text(self, name: str, text: str) -> Path:
        path = self.dir / name
        atomic_write_text(path, text)
        self.written.append(name)
        return path

    def json(self, name: str, obj) -> Path:
        return self.text(name, dumps(obj))

    def config(self, extra: Optional[dict] = None) -> None:
        cfg = _effective_config(self.args, extra)
        cfg["outputs"] = list(self.written)
        self.text(f"{self.args.command}.config.json", dumps(cfg))


def _load_fit(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return fit_from_json(json.load(fh))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CliError(f"{path}: not a fit JSON ({exc})") from None


def _components(fit) -> tuple:
    return fit.fits if isinstance(fit, MacroFit) else (fit,)


def _load_targets(args):
    """Pass targets and (when read from JSONL) the checkpoint set."""
    if args.data is not None:
        cset = load_checkpoints(args.data)
        targets = build_pass_targets(cset, getattr(args, "k_grid", (1.0,)), task_id=args.task)
        if not targets:
            raise CliError(f"no data for task {args.task!r}")
        return targets, cset
    targets = read_pass_targets_csv(args.targets)
    if args.task is not None:
        targets = [t for t in targets if t.task_id == args.task]
    if not targets:
        raise CliError("no pass targets" + (f" for task {args.task!r}" if args.task else ""))
    return targets, None


def _save_fit(out: _Outputs, name: str, fits: dict, mode: str):
    if mode == "macro":
        obj = fits["macro"].to_json()
    else:
        obj = MacroFit(tuple(fits[t] for t in sorted(fits))).to_json()
    out.json(name, obj)


def _finite_or_none(v: Optional[float]) -> Optional[float]:
    return None if v is None or not math.isfinite(v) else v


def _preset_c_inf(args) -> Optional[float]:
    if args.c_inf == "none":
        return None
    if args.c_inf is not None:
        return args.c_inf
    if getattr(args, "preset", None):
        return PRESETS[args.preset]["c_inf"]
    return None


# --------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    out = _Outputs(args)
    if (args.budgets is None) != (args.sizes is None):
        raise CliError("--budgets and --sizes go together")
    spec = GridSpec(budgets=args.budgets, sizes=args.sizes) if args.budgets else PRESETS[args.preset]["grid"]
    grid = generate_grid(spec)
    truth = GroundTruth(
        E=args.E, A=args.A, alpha=args.alpha, B=args.B, beta=args.beta,
        G=None if args.no_a1 else args.G,
        gamma=None if args.no_a1 else args.gamma,
        theta=None if args.no_theta else tuple(args.theta),
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    spread = args.nll_source == "beta"
    cset = generate_nll_data(truth, grid, args.n_questions, task_ids=args.tasks, beta_spread=spread)
    out.text("checkpoints.jsonl", dump_checkpoints(cset))
    truth_json = {
        "E": truth.E, "A": truth.A, "alpha": truth.alpha, "B": truth.B, "beta": truth.beta,
        "G": truth.G, "gamma": truth.gamma,
        "theta": None if truth.theta is None else list(truth.theta),
        "noise_sigma": truth.noise_sigma, "seed": truth.seed,
    }
    out.json("truth.json", truth_json)
    for model, name, present in (
        ("approach1", "targets_a1.csv", truth.G is not None),
        ("approach2", "targets_a2.csv", truth.theta is not None),
    ):
        if not present:
            continue
        targets = []
        for task in args.tasks:
            targets.extend(
                generate_pass_targets(truth, grid, args.k_grid, model=model, task_id=task, n_questions=args.n_questions)
            )
        buf = io.StringIO()
        write_pass_targets_csv(targets, buf)
        out.text(name, buf.getvalue())
    out.config({"n_grid_points": len(grid)})
    print(f"wrote {len(grid)} checkpoints x {len(args.tasks)} task(s) to {out.dir}")
    return EXIT_OK


def cmd_fit_chinchilla(args) -> int:
    out = _Outputs(args)
    cfg = ChinchillaConfig(
        n_e_grid=args.e_grid, n_restarts=args.restarts, max_iter=args.max_iter, tol=args.tol,
        seed=args.seed, weighted=not args.unweighted, workers=_threads(args),
    )
    fits = {}
    if args.data is not None:
        cset = load_checkpoints(args.data)
        groups = group_isoflop(cset, cfg.isoflop_width)
        tasks = ["macro"] if args.fit_mode == "macro" else [t for t in cset.tasks if args.task in (None, t)]
        if not tasks:
            raise CliError(f"no data for task {args.task!r}")
        for task in tasks:
            obs = observations_from_checkpoints(cset, task)
            fits[task] = fit_chinchilla(obs, groups, cfg, task_id=task)
    else:
        targets, _ = _load_targets(args)
        per_task = {"macro": macro_targets(targets)} if args.fit_mode == "macro" else split_by_task(targets)
        for task, ts in per_task.items():
            fits[task] = fit_chinchilla(observations_from_targets(ts), None, cfg, task_id=task)
    _save_fit(out, args.out or "chinchilla.json", fits, args.fit_mode)
    out.config()
    for task, f in sorted(fits.items()):
        print(f"{task}: E={f.E!r} A={f.A!r} alpha={f.alpha!r} B={f.B!r} beta={f.beta!r}")
    return EXIT_OK


def cmd_fit_a1(args) -> int:
    out = _Outputs(args)
    cfg = Approach1Config(
        n_restarts=args.restarts, max_iter=args.max_iter, tol=args.tol, seed=args.seed, workers=_threads(args)
    )
    targets, _ = _load_targets(args)
    fits = fit_approach1_tasks(targets, cfg, mode=args.fit_mode)
    _save_fit(out, args.out or "a1.json", fits, args.fit_mode)
    out.config()
    for task, f in sorted(fits.items()):
        print(f"{task}: E={f.E!r} A={f.A!r} alpha={f.alpha!r} B={f.B!r} beta={f.beta!r} G={f.G!r} gamma={f.gamma!r}")
    return EXIT_OK


def cmd_fit_a2(args) -> int:
    out = _Outputs(args)
    cfg = Approach2Config(
        n_restarts=args.restarts, max_iter=args.max_iter, tol=args.tol, seed=args.seed, workers=_threads(args)
    )
    bases = {f.task_id: f for f in _components(_load_fit(args.base))}
    if not all(isinstance(b, ChinchillaFit) for b in bases.values()):
        raise CliError("--base must be a fit-chinchilla output")
    targets, _ = _load_targets(args)
    per_task = {"macro": macro_targets(targets)} if args.fit_mode == "macro" else split_by_task(targets)
    fits = {}
    for task, ts in per_task.items():
        if task not in bases:
            raise CliError(f"base fit has no task {task!r} (has {sorted(bases)})")
        fits[task] = fit_beta_regression(bases[task], ts, cfg)
    _save_fit(out, args.out or "a2.json", fits, args.fit_mode)
    out.config()
    for task, f in sorted(fits.items()):
        print(f"{task}: theta={list(f.theta)!r}")
    return EXIT_OK


def cmd_predict(args) -> int:
    out = _Outputs(args)
    fit = _load_fit(args.fit)
    if args.c_inf is not None:
        k = inference_k(args.c_inf, args.n)
    else:
        k = 1.0 if args.k is None else args.k
    if not k >= 1:
        raise CliError("k must be >= 1")
    value = float(evaluate_objective(fit, args.n, args.d, k))
    result = {"n": args.n, "d": args.d, "k": k, "objective": value, "objective_kind": objective_kind(fit)}
    out.json("predict.json", result)
    out.config()
    print(dumps(result), end="")
    return EXIT_OK


def cmd_plan(args) -> int:
    out = _Outputs(args)
    fit = _load_fit(args.fit)
    c_inf = _preset_c_inf(args)
    if c_inf is None:
        alloc = optimize_train_only(fit, args.c_train)
    else:
        alloc = optimize_joint(fit, Budget(args.c_train, c_inf))
    result = alloc.to_json()
    out.json("plan.json", result)
    out.config({"c_inf_resolved": c_inf})
    print(dumps(result), end="")
    return EXIT_OK


def cmd_frontier(args) -> int:
    out = _Outputs(args)
    fit = _load_fit(args.fit)
    budgets = args.budgets
    if budgets is None:
        if not args.preset:
            raise CliError("frontier needs --budgets or --preset")
        budgets = PRESETS[args.preset]["grid"].budgets
    c_inf = _preset_c_inf(args)
    result = frontier(fit, budgets, c_inf)
    buf = io.StringIO()
    write_frontier_csv(result.points, buf)
    out.text("frontier.csv", buf.getvalue())
    out.json("frontier.json", {"a_hat": result.a_hat, "b_hat": result.b_hat, "c_inf": c_inf, "n_points": len(result.points)})
    out.config({"budgets_resolved": list(budgets), "c_inf_resolved": c_inf})
    print(f"a_hat={result.a_hat!r} b_hat={result.b_hat!r}")
    return EXIT_OK


def cmd_isoflop(args) -> int:
    out = _Outputs(args)
    fit = _load_fit(args.fit)
    preset = PRESETS.get(args.preset) if args.preset else None
    c_trains = args.c_train or (preset["grid"].budgets if preset else None)
    n_grid = args.n_grid or (preset["grid"].sizes if preset else None)
    if not c_trains or not n_grid:
        raise CliError("isoflop needs --c-train and --n-grid (or --preset)")
    c_inf = _preset_c_inf(args)
    rows = []
    for c in c_trains:
        rows.extend(isoflop_profile(fit, c, n_grid, c_inf))
    buf = io.StringIO()
    write_isoflop_csv(rows, buf)
    out.text("isoflop.csv", buf.getvalue())
    out.config({"c_inf_resolved": c_inf, "c_train_resolved": list(c_trains), "n_grid_resolved": list(n_grid)})
    print(f"wrote {len(rows)} rows")
    return EXIT_OK


# --------------------------------------------------------------------------
# validate


def _check(name: str, measured: float, threshold: float, passed: Optional[bool] = None, task: str = "") -> dict:
    ok = bool(measured <= threshold) if passed is None else bool(passed)
    return {
        "name": name,
        "task_id": task,
        "passed": ok,
        "measured": _finite_or_none(float(measured)),
        "threshold": float(threshold),
    }


def _grid_arrays(targets):
    n = np.array([t.n_params for t in targets], dtype=float)
    d = np.array([t.n_tokens for t in targets], dtype=float)
    k = np.array([t.k for t in targets], dtype=float)
    return n, d, k


def _rel_gap(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def _validate_a1(fit: Approach1Fit, targets) -> list[dict]:
    task = fit.task_id
    n, d, k = _grid_arrays(targets)
    y = np.array([t.mean_neg_log_pass for t in targets])
    checks = []
    view = fit.chinchilla_view()
    k1 = predict_loss_k(fit, n, d, np.ones_like(n))
    identity = float(np.max(np.abs(k1 - view.predict(n, d)) / np.maximum(np.abs(k1), 1.0)))
    checks.append(_check("k1_reduction_identity", identity, 1e-12, task=task))
    checks.append(_check("k_term_nonnegative", -min(fit.G, fit.gamma), 0.0, fit.G >= 0 and fit.gamma > 0, task))
    at1 = k == 1
    if at1.any():
        # k = 1 data against the E' = E + G law, judged on the residual scale
        # the fit reported when it was made.
        rms1 = float(np.sqrt(np.mean((view.predict(n[at1], d[at1]) - y[at1]) ** 2)))
        rms_fit = math.sqrt(fit.sse / fit.n_cells) if fit.n_cells > 0 and fit.sse > 0 else 0.0
        checks.append(_check("k1_reduction_data", rms1, max(3.0 * rms_fit, 1e-6), task=task))
    steps = []
    for scale_n, scale_d, scale_k in ((2.0, 1.0, 1.0), (1.0, 2.0, 1.0), (1.0, 1.0, 2.0)):
        steps.append(np.max(predict_loss_k(fit, n * scale_n, d * scale_d, k * scale_k) - predict_loss_k(fit, n, d, k)))
    checks.append(_check("monotone_decreasing_in_n_d_k", float(max(steps)), 0.0, bool(max(steps) < 0), task))
    mp = np.array([t.mean_pass for t in targets])
    with np.errstate(divide="ignore"):
        gap = float(np.max(-np.log(mp) - y)) if (mp > 0).all() else -math.inf
    checks.append(_check("jensen_surrogate_upper_bound", gap, 1e-12, task=task))
    checks.append(_check("sse_recompute", _rel_gap(approach1_sse(fit, targets), fit.sse), 1e-10, task=task))
    return checks


def _validate_a2(fit: Approach2Fit, targets) -> list[dict]:
    task = fit.task_id
    n, d, k = _grid_arrays(targets)
    checks = []
    _, _, mu, _ = beta_params(fit, n, d)
    p1 = predict_pass_at_k(fit, n, d, np.ones_like(n))
    checks.append(_check("k1_equals_mu", float(np.max(np.abs(p1 - mu))), 1e-12, task=task))
    pk = predict_pass_at_k(fit, n, d, k)
    naive = naive_pass_at_k(fit, n, d, k)
    checks.append(_check("jensen_naive_upper_bound", float(np.max(pk - naive)), 1e-12, task=task))
    checks.append(_check("jensen_equality_k1", float(np.max(np.abs(naive_pass_at_k(fit, n, d, 1.0) - p1))), 1e-12, task=task))
    step = float(np.max(pk - predict_pass_at_k(fit, n, d, 2.0 * k)))
    checks.append(_check("monotone_nondecreasing_in_k", step, 0.0, task=task))
    checks.append(_check("ceiling_theta2", float(np.max(p1) - fit.theta2), 0.0, task=task))
    checks.append(_check("sse_recompute", _rel_gap(approach2_sse(fit, targets), fit.sse), 1e-10, task=task))
    return checks


def _validate_chinchilla(fit: ChinchillaFit, targets, cset) -> list[dict]:
    task = fit.task_id
    n, d, _ = _grid_arrays(targets)
    checks = []
    step = max(np.max(fit.predict(2 * n, d) - fit.predict(n, d)), np.max(fit.predict(n, 2 * d) - fit.predict(n, d)))
    checks.append(_check("monotone_decreasing_in_n_d", float(step), 0.0, bool(step < 0), task))
    if cset is not None:
        obs = observations_from_checkpoints(cset, task)
        groups = group_isoflop(cset, fit.config.get("isoflop_width", 1.25))
    else:
        obs = observations_from_targets(targets)
        groups = None
    weights = None
    if fit.weighted:
        weights, _ = inverse_variance_weights(
            obs, groups, task_id=task,
            width=fit.config.get("isoflop_width", 1.25),
            variance_floor=fit.config.get("variance_floor", 1e-8),
        )
    checks.append(_check("sse_recompute", _rel_gap(weighted_sse(fit, obs, weights), fit.sse), 1e-10, task=task))
    return checks


def cmd_validate(args) -> int:
    out = _Outputs(args)
    fit = _load_fit(args.fit)
    targets, cset = _load_targets(args)
    by_task = split_by_task(targets)
    checks = []
    for comp in _components(fit):
        task = comp.task_id
        if task == "macro":
            ts = macro_targets(targets)
        elif task in by_task:
            ts = by_task[task]
        else:
            raise CliError(f"fit is for task {task!r} but the data has tasks {sorted(by_task)}")
        if isinstance(comp, Approach1Fit):
            checks.extend(_validate_a1(comp, ts))
        elif isinstance(comp, Approach2Fit):
            checks.extend(_validate_a2(comp, ts))
        else:
            checks.extend(_validate_chinchilla(comp, ts, cset))
    if cset is not None:
        worst = -math.inf
        for k in sorted({t.k for t in targets}):
            for row in naive_vs_mean_gap(cset, k):
                worst = max(worst, row.mean - row.naive)
        checks.append(_check("data_jensen_ordering", worst, 0.0))
    passed = all(c["passed"] for c in checks)
    report = {"passed": passed, "checks": checks}
    out.json("validate.json", report)
    out.config()
    for c in checks:
        status = "PASS" if c["passed"] else "FAIL"
        label = f"{c['name']}[{c['task_id']}]" if c["task_id"] else c["name"]
        print(f"{status} {label}: measured={c['measured']!r} threshold={c['threshold']!r}")
    return EXIT_OK if passed else EXIT_INPUT


COMMANDS = {
    "synth": cmd_synth,
    "fit-chinchilla": cmd_fit_chinchilla,
    "fit-a1": cmd_fit_a1,
    "fit-a2": cmd_fit_a2,
    "predict": cmd_predict,
    "plan": cmd_plan,
    "frontier": cmd_frontier,
    "isoflop": cmd_isoflop,
    "validate": cmd_validate,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv``, dispatch, and map failures onto exit codes."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (FitError, OptimizationError) as exc:
        print(f"error: fit failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PlannerError, DatasetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
