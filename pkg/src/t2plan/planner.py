"""Compute accounting and the joint train/test allocation problems.

A model of ``N`` parameters trained on ``D`` tokens costs ``6 N D`` FLOPs;
drawing ``k`` samples per query costs ``2 N k``. Both objectives improve in
``D`` and ``k``, so at the optimum both budgets bind and the problem reduces
to a search over ``N`` alone::

    D = c_train / (6 N),    k = c_inf / (2 N)

The search runs in ``log N`` over ``[1e4, min(c_inf / 2, c_train / 6)]``: a
coarse 512-point scan picks a bracket and bounded Brent refines it.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, TextIO, Union

import numpy as np

from . import optimizer
from .approach1 import Approach1Fit, predict_loss_k
from .approach2 import Approach2Fit, predict_pass_at_k
from .chinchilla import ChinchillaFit, closed_form_optimum, predict_loss

__all__ = [
    "N_MIN",
    "PlannerError",
    "Budget",
    "Allocation",
    "FrontierPoint",
    "FrontierResult",
    "IsoflopRow",
    "MacroFit",
    "fit_from_json",
    "inference_k",
    "integer_k",
    "train_budget",
    "inference_budget",
    "objective_kind",
    "evaluate_objective",
    "optimize_joint",
    "optimize_joint_loss",
    "optimize_joint_acc",
    "optimize_train_only",
    "frontier",
    "isoflop_profile",
    "write_frontier_csv",
    "write_isoflop_csv",
    "FRONTIER_COLUMNS",
    "ISOFLOP_COLUMNS",
]

N_MIN = 1e4
N_SCAN = 512

FRONTIER_COLUMNS = ("c_train", "n_star", "d_star", "k_star", "tokens_per_param", "objective", "objective_kind")
ISOFLOP_COLUMNS = ("c_train", "n", "d", "k", "objective")


class PlannerError(ValueError):
    """An allocation problem has no feasible solution or could not be solved."""


def inference_k(c_inf: float, n_params: float) -> float:
    """Samples per query affordable at ``c_inf`` FLOPs: ``c_inf / (2 N)``.

    Raises:
        PlannerError: if less than one forward pass is affordable.
    """
    if n_params <= 0:
        raise PlannerError("n_params must be positive")
    k = c_inf / (2.0 * n_params)
    if not k >= 1.0:
        raise PlannerError(f"c_inf={c_inf!r} buys k={k!r} < 1 samples for N={n_params!r}")
    return k


def integer_k(c_inf: float, n_params: float) -> int:
    """The whole number of samples actually drawable, ``floor(k)``."""
    return math.floor(inference_k(c_inf, n_params))


def train_budget(n_params: float, n_tokens: float) -> float:
    return 6.0 * n_params * n_tokens


def inference_budget(n_params: float, k: float) -> float:
    return 2.0 * n_params * k


@dataclass(frozen=True)
class Budget:
    c_train: float
    c_inf: Optional[float] = None

    def __post_init__(self):
        if not (math.isfinite(self.c_train) and self.c_train > 0):
            raise PlannerError("c_train must be finite and positive")
        if self.c_inf is not None and not (math.isfinite(self.c_inf) and self.c_inf > 0):
            raise PlannerError("c_inf must be finite and positive")

    @property
    def n_max(self) -> float:
        hi = self.c_train / 6.0
        if self.c_inf is not None:
            hi = min(hi, self.c_inf / 2.0)
        return hi

    def to_json(self) -> dict:
        return {"c_train": self.c_train, "c_inf": self.c_inf}


@dataclass(frozen=True)
class Allocation:
    n_star: float
    d_star: float
    k_star: float
    k_floor: int
    objective: float
    objective_kind: str
    tokens_per_param: float
    budget: Budget
    binding: tuple
    at_bound: Optional[str] = None
    flat: bool = False

    def to_json(self) -> dict:
        return {
            "n_star": self.n_star,
            "d_star": self.d_star,
            "k_star": self.k_star,
            "k_floor": self.k_floor,
            "objective": self.objective,
            "objective_kind": self.objective_kind,
            "tokens_per_param": self.tokens_per_param,
            "budget": self.budget.to_json(),
            "binding": list(self.binding),
            "at_bound": self.at_bound,
            "flat": self.flat,
        }


@dataclass(frozen=True)
class FrontierPoint:
    c_train: float
    n_star: float
    d_star: float
    k_star: float
    tokens_per_param: float
    objective: float
    objective_kind: str

    @classmethod
    def from_allocation(cls, alloc: Allocation) -> "FrontierPoint":
        return cls(
            alloc.budget.c_train, alloc.n_star, alloc.d_star, alloc.k_star,
            alloc.tokens_per_param, alloc.objective, alloc.objective_kind,
        )


@dataclass(frozen=True)
class FrontierResult:
    points: tuple
    a_hat: float
    b_hat: float


@dataclass(frozen=True)
class IsoflopRow:
    c_train: float
    n: float
    d: float
    k: float
    objective: float


@dataclass(frozen=True)
class MacroFit:
    """Per-task fits of one kind whose objectives are averaged over tasks."""

    fits: tuple
    task_id: str = "macro"

    def __post_init__(self):
        if not self.fits:
            raise ValueError("MacroFit needs at least one fit")
        kinds = {type(f) for f in self.fits}
        if len(kinds) > 1:
            raise ValueError("MacroFit components must share one fit kind")

    def to_json(self) -> dict:
        return {"kind": "macro", "task_id": self.task_id, "fits": [f.to_json() for f in self.fits]}


def fit_from_json(obj) -> "AnyFit":
    """Rebuild any fit (or macro ensemble of fits) from its ``to_json`` form."""
    kind = obj.get("kind")
    if kind == "macro":
        return MacroFit(tuple(fit_from_json(f) for f in obj["fits"]), str(obj.get("task_id", "macro")))
    loaders = {"chinchilla": ChinchillaFit, "approach1": Approach1Fit, "approach2": Approach2Fit}
    if kind not in loaders:
        raise ValueError(f"unknown fit kind {kind!r}")
    return loaders[kind].from_json(obj)


AnyFit = Union[ChinchillaFit, Approach1Fit, Approach2Fit, MacroFit]


def objective_kind(fit: AnyFit) -> str:
    first = fit.fits[0] if isinstance(fit, MacroFit) else fit
    if isinstance(first, Approach2Fit):
        return "accuracy"
    if isinstance(first, (ChinchillaFit, Approach1Fit)):
        return "loss"
    raise TypeError(f"unsupported fit type {type(first).__name__}")


def evaluate_objective(fit: AnyFit, n, d, k):
    """Predicted loss or accuracy at ``(N, D, k)``; Chinchilla fits ignore ``k``."""
    if isinstance(fit, MacroFit):
        vals = [np.asarray(evaluate_objective(f, n, d, k), dtype=float) for f in fit.fits]
        out = sum(vals[1:], vals[0]) / len(vals)
        return float(out) if np.ndim(out) == 0 else out
    if isinstance(fit, Approach1Fit):
        return predict_loss_k(fit, n, d, k)
    if isinstance(fit, Approach2Fit):
        return predict_pass_at_k(fit, n, d, k)
    if isinstance(fit, ChinchillaFit):
        return predict_loss(fit, n, d)
    raise TypeError(f"unsupported fit type {type(fit).__name__}")


def _loss_independent(fit: AnyFit) -> bool:
    fits = fit.fits if isinstance(fit, MacroFit) else (fit,)
    return all(isinstance(f, Approach2Fit) and f.theta1 == 0 and f.theta4 == 0 for f in fits)


def _allocation(fit: AnyFit, budget: Budget, n: float, at_bound, flat: bool) -> Allocation:
    d = budget.c_train / (6.0 * n)
    if budget.c_inf is None:
        k, binding = 1.0, ("train",)
    else:
        k, binding = budget.c_inf / (2.0 * n), ("train", "inference")
    return Allocation(
        n_star=n,
        d_star=d,
        k_star=k,
        k_floor=math.floor(k),
        objective=float(evaluate_objective(fit, n, d, k)),
        objective_kind=objective_kind(fit),
        tokens_per_param=d / n,
        budget=budget,
        binding=binding,
        at_bound=at_bound,
        flat=flat,
    )


def _search(fit: AnyFit, budget: Budget) -> Allocation:
    lo, hi = math.log(N_MIN), math.log(budget.n_max)
    if hi < lo:
        raise PlannerError(
            f"infeasible budget {budget.to_json()}: no N >= {N_MIN:g} has both k >= 1 and D >= 1"
        )
    if _loss_independent(fit):
        # Only k varies with N, and accuracy grows with k.
        return _allocation(fit, budget, N_MIN, "n_min", True)
    if hi == lo:
        return _allocation(fit, budget, N_MIN, "n_min", False)

    sign = -1.0 if objective_kind(fit) == "accuracy" else 1.0
    c_train, c_inf = budget.c_train, budget.c_inf

    def profile(u):
        n = np.exp(u)
        k = 1.0 if c_inf is None else c_inf / (2.0 * n)
        return sign * np.asarray(evaluate_objective(fit, n, c_train / (6.0 * n), k), dtype=float)

    us = np.linspace(lo, hi, N_SCAN)
    vals = profile(us)
    if not np.isfinite(vals).all():
        raise PlannerError(f"objective is non-finite on the search interval for {budget.to_json()}")
    if np.ptp(vals) == 0:
        return _allocation(fit, budget, N_MIN, "n_min", True)
    i = int(np.argmin(vals))
    b_lo, b_hi = us[max(i - 1, 0)], us[min(i + 1, N_SCAN - 1)]
    u_star, _ = optimizer.minimize_scalar(lambda u: float(profile(u)), float(b_lo), float(b_hi))
    n_star = math.exp(u_star)
    at_bound = None
    if u_star <= lo:
        n_star, at_bound = N_MIN, "n_min"
    elif u_star >= hi:
        n_star, at_bound = budget.n_max, "n_max"
    return _allocation(fit, budget, n_star, at_bound, False)


def optimize_joint(fit: AnyFit, budget: Budget) -> Allocation:
    """Best allocation of ``budget`` for any fit kind (loss minimised, accuracy maximised)."""
    if fit is None:
        raise PlannerError("no fit supplied")
    return _search(fit, budget)


def optimize_joint_loss(fit: Union[Approach1Fit, MacroFit], budget: Budget) -> Allocation:
    """Minimise the loss law's inference-corrected value under both budgets."""
    if fit is None or objective_kind(fit) != "loss":
        raise PlannerError("optimize_joint_loss needs a loss-model fit")
    if budget.c_inf is None:
        raise PlannerError("joint optimisation needs c_inf")
    return _search(fit, budget)


def optimize_joint_acc(fit: Union[Approach2Fit, MacroFit], budget: Budget) -> Allocation:
    """Maximise the Beta model's inference-corrected pass@k under both budgets."""
    if fit is None or objective_kind(fit) != "accuracy":
        raise PlannerError("optimize_joint_acc needs an accuracy-model fit")
    if budget.c_inf is None:
        raise PlannerError("joint optimisation needs c_inf")
    return _search(fit, budget)


def _base_law(fit: AnyFit) -> Optional[ChinchillaFit]:
    if isinstance(fit, ChinchillaFit):
        return fit
    if isinstance(fit, Approach1Fit):
        return fit.chinchilla_view()
    if isinstance(fit, Approach2Fit):
        return fit.base
    return None


def optimize_train_only(fit: AnyFit, c_train: float) -> Allocation:
    """Optimum at ``k = 1`` with only the training budget.

    Single fits use the closed form of their ``(N, D)`` law; macro fits fall
    back to the numerical search.
    """
    budget = Budget(c_train)
    law = _base_law(fit)
    if law is None:
        return _search(fit, budget)
    n_star, _ = closed_form_optimum(law, c_train)
    return _allocation(fit, budget, n_star, None, False)


def frontier(
    fit: AnyFit, budgets: Sequence[float], c_inf: Optional[float] = None
) -> FrontierResult:
    """Optimal allocations across ``budgets`` and the fitted exponents ``(a, b)``.

    Raises:
        PlannerError: fewer than 3 budgets, a span under one decade, or a
            failing budget (named in the message).
    """
    budgets = [float(c) for c in budgets]
    if len(budgets) < 3:
        raise PlannerError("a frontier needs >= 3 budgets")
    if max(budgets) < 10.0 * min(budgets):
        raise PlannerError("frontier budgets must span at least one decade")
    points = []
    for c in budgets:
        try:
            alloc = optimize_train_only(fit, c) if c_inf is None else optimize_joint(fit, Budget(c, c_inf))
        except (PlannerError, ValueError, optimizer.OptimizationError) as exc:
            raise PlannerError(f"optimisation failed at c_train={c!r}: {exc}") from exc
        points.append(FrontierPoint.from_allocation(alloc))
    log_c = np.log([p.c_train for p in points])
    a_hat = float(np.polyfit(log_c, np.log([p.n_star for p in points]), 1)[0])
    b_hat = float(np.polyfit(log_c, np.log([p.d_star for p in points]), 1)[0])
    return FrontierResult(points=tuple(points), a_hat=a_hat, b_hat=b_hat)


def isoflop_profile(
    fit: AnyFit, c_train: float, n_grid: Sequence[float], c_inf: Optional[float] = None
) -> list[IsoflopRow]:
    """Objective along ``6 N D = c_train`` for each ``N`` in ``n_grid``, ascending.

    Raises:
        PlannerError: listing every grid point with ``D < 1`` or ``k < 1``.
    """
    ns = sorted(float(n) for n in n_grid)
    if not ns:
        raise PlannerError("empty N grid")
    bad = []
    for n in ns:
        if n <= 0 or c_train / (6.0 * n) < 1.0:
            bad.append(f"N={n!r} (D < 1)")
        elif c_inf is not None and c_inf / (2.0 * n) < 1.0:
            bad.append(f"N={n!r} (k < 1)")
    if bad:
        raise PlannerError("infeasible isoFLOP points: " + ", ".join(bad))
    n_arr = np.asarray(ns)
    d_arr = c_train / (6.0 * n_arr)
    k_arr = np.ones_like(n_arr) if c_inf is None else c_inf / (2.0 * n_arr)
    obj = np.atleast_1d(np.asarray(evaluate_objective(fit, n_arr, d_arr, k_arr), dtype=float))
    return [
        IsoflopRow(float(c_train), float(n), float(d), float(k), float(v))
        for n, d, k, v in zip(n_arr, d_arr, k_arr, obj)
    ]


def _open_csv(dest: Union[str, os.PathLike, TextIO], columns, rows: Callable[[], list]):
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            _open_csv(fh, columns, rows)
        return
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows())


def write_frontier_csv(points: Sequence[FrontierPoint], dest) -> None:
    _open_csv(
        dest,
        FRONTIER_COLUMNS,
        lambda: [
            [repr(p.c_train), repr(p.n_star), repr(p.d_star), repr(p.k_star),
             repr(p.tokens_per_param), repr(p.objective), p.objective_kind]
            for p in points
        ],
    )


def write_isoflop_csv(rows: Sequence[IsoflopRow], dest) -> None:
    _open_csv(
        dest,
        ISOFLOP_COLUMNS,
        lambda: [[repr(r.c_train), repr(r.n), repr(r.d), repr(r.k), repr(r.objective)] for r in rows],
    )
