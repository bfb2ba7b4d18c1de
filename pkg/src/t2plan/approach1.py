"""Loss-side model: ``L(N, D, k) = E + A/N**alpha + B/D**beta + G/k**gamma``.

The fit minimises the plain (unweighted) SSE against ``mean_neg_log_pass``
targets over every (checkpoint, k) cell, in the coordinates
``(log A, log B, log E, alpha, beta, log G, gamma)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from . import optimizer
from .chinchilla import FitError, ChinchillaFit, _derived_seed
from .passk import PassTarget, macro_targets, split_by_task
from .serialization import config_dict, config_digest

__all__ = [
    "Approach1Config",
    "Approach1Fit",
    "fit_approach1",
    "fit_approach1_tasks",
    "predict_loss_k",
    "predict_inference_corrected_loss",
    "approach1_sse",
]

SCALE_BOUNDS = (-20.0, 40.0)
LEVEL_BOUNDS = (-20.0, 10.0)
EXPONENT_BOUNDS = (0.01, 2.5)


@dataclass(frozen=True)
class Approach1Config:
    n_restarts: int = 500
    max_iter: int = 5000
    tol: float = 1e-15
    seed: int = 0
    workers: int = 1


@dataclass(frozen=True)
class Approach1Fit:
    E: float
    A: float
    alpha: float
    B: float
    beta: float
    G: float
    gamma: float
    sse: float = 0.0
    k_grid_used: tuple = ()
    task_id: str = "macro"
    n_cells: int = 0
    config: Mapping = field(default_factory=dict)
    config_digest: str = ""

    def chinchilla_view(self) -> ChinchillaFit:
        """The k = 1 law, whose constant is ``E + G``."""
        return ChinchillaFit(
            E=self.E + self.G, A=self.A, alpha=self.alpha, B=self.B, beta=self.beta, task_id=self.task_id
        )

    def to_json(self) -> dict:
        return {
            "kind": "approach1",
            "E": self.E,
            "A": self.A,
            "alpha": self.alpha,
            "B": self.B,
            "beta": self.beta,
            "G": self.G,
            "gamma": self.gamma,
            "sse": self.sse,
            "k_grid_used": list(self.k_grid_used),
            "task_id": self.task_id,
            "config_digest": self.config_digest,
            "n_cells": self.n_cells,
            "config": dict(self.config),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "Approach1Fit":
        return cls(
            E=float(obj["E"]),
            A=float(obj["A"]),
            alpha=float(obj["alpha"]),
            B=float(obj["B"]),
            beta=float(obj["beta"]),
            G=float(obj["G"]),
            gamma=float(obj["gamma"]),
            sse=float(obj.get("sse", 0.0)),
            k_grid_used=tuple(float(k) for k in obj.get("k_grid_used", ())),
            task_id=str(obj.get("task_id", "macro")),
            n_cells=int(obj.get("n_cells", 0)),
            config=dict(obj.get("config", {})),
            config_digest=str(obj.get("config_digest", "")),
        )


def predict_loss_k(fit: Approach1Fit, n_params, n_tokens, k):
    n = np.asarray(n_params, dtype=float)
    d = np.asarray(n_tokens, dtype=float)
    kk = np.asarray(k, dtype=float)
    out = fit.E + fit.A * n ** (-fit.alpha) + fit.B * d ** (-fit.beta) + fit.G * kk ** (-fit.gamma)
    return float(out) if out.ndim == 0 else out


def predict_inference_corrected_loss(fit: Approach1Fit, n_params, n_tokens, c_inf):
    """Loss at ``k = c_inf / (2 N)`` samples per query.

    Raises:
        ValueError: if the budget buys less than one forward pass.
    """
    n = np.asarray(n_params, dtype=float)
    k = np.asarray(c_inf, dtype=float) / (2.0 * n)
    if (k < 1).any():
        raise ValueError("inference budget below one forward pass (k < 1)")
    return predict_loss_k(fit, n_params, n_tokens, k)


class _CellData:
    def __init__(self, targets: Sequence[PassTarget]):
        ckpts = sorted({(t.n_params, t.n_tokens) for t in targets})
        ks = sorted({float(t.k) for t in targets})
        cpos = {c: i for i, c in enumerate(ckpts)}
        kpos = {k: i for i, k in enumerate(ks)}
        self.log_n = np.log([c[0] for c in ckpts]).astype(float)
        self.log_d = np.log([c[1] for c in ckpts]).astype(float)
        self.log_k = np.log(ks)
        self.ci = np.array([cpos[(t.n_params, t.n_tokens)] for t in targets])
        self.ki = np.array([kpos[float(t.k)] for t in targets])
        self.y = np.array([t.mean_neg_log_pass for t in targets], dtype=float)
        self.ks = tuple(ks)
        self.n_ckpts = len(ckpts)


class _SSE:
    """Unweighted SSE in ``(log A, log B, log E, alpha, beta, log G, gamma)``."""

    def __init__(self, data: _CellData):
        self.d = data

    def __call__(self, x):
        la, lb, le, al, be, lg, ga = x
        d = self.d
        base = np.exp(la - al * d.log_n) + np.exp(lb - be * d.log_d)
        kt = np.exp(lg - ga * d.log_k)
        r = math.exp(le) + base[d.ci] + kt[d.ki] - d.y
        return float(np.dot(r, r))

    def batch(self, X):
        X = np.asarray(X)
        d = self.d
        base = np.exp(X[:, 0:1] - X[:, 3:4] * d.log_n) + np.exp(X[:, 1:2] - X[:, 4:5] * d.log_d)
        kt = np.exp(X[:, 5:6] - X[:, 6:7] * d.log_k)
        r = np.exp(X[:, 2:3]) + base[:, d.ci] + kt[:, d.ki] - d.y
        return np.einsum("ij,ij->i", r, r)


def approach1_sse(fit: Approach1Fit, targets: Sequence[PassTarget]) -> float:
    """SSE of ``predict_loss_k`` against ``mean_neg_log_pass``, by direct evaluation."""
    n = np.array([t.n_params for t in targets], dtype=float)
    d = np.array([t.n_tokens for t in targets], dtype=float)
    k = np.array([t.k for t in targets], dtype=float)
    y = np.array([t.mean_neg_log_pass for t in targets], dtype=float)
    r = predict_loss_k(fit, n, d, k) - y
    return float(math.fsum(r * r))


def fit_approach1(
    targets: Sequence[PassTarget], config: Optional[Approach1Config] = None, task_id: Optional[str] = None
) -> Approach1Fit:
    """Fit all seven parameters by multi-start L-BFGS-B on the cell SSE.

    Raises:
        FitError: a single k value, fewer than 5 distinct (N, D) points,
            more than one task, or degenerate targets.
    """
    cfg = config or Approach1Config()
    targets = list(targets)
    if not targets:
        raise FitError("no targets")
    tasks = {t.task_id for t in targets}
    if len(tasks) > 1:
        raise FitError(f"targets span several tasks {sorted(tasks)}; fit per task or macro-average first")
    data = _CellData(targets)
    if len(data.ks) < 2:
        raise FitError("need >= 2 distinct k values (gamma is unidentifiable otherwise)")
    if data.n_ckpts < 5:
        raise FitError(f"need >= 5 distinct (N, D) points, got {data.n_ckpts}")
    if not np.isfinite(data.y).all():
        raise FitError("non-finite targets")
    if np.ptp(data.y) == 0:
        raise FitError("degenerate targets: all values equal")

    y_min = max(float(data.y.min()), 1e-6)
    y_max = float(data.y.max())
    bounds = optimizer.Bounds.from_pairs(
        [SCALE_BOUNDS, SCALE_BOUNDS, LEVEL_BOUNDS, EXPONENT_BOUNDS, EXPONENT_BOUNDS, LEVEL_BOUNDS, EXPONENT_BOUNDS]
    )
    lo_level = math.log(0.01 * y_min)
    sampler = optimizer.box_sampler(
        [0.0, 0.0, lo_level, 0.05, 0.05, lo_level, 0.05],
        [math.log(1e6), math.log(1e6), math.log(y_min), 1.0, 1.0, math.log(max(y_max, y_min)), 1.0],
    )
    res = optimizer.multi_start(
        _SSE(data),
        bounds,
        sampler,
        cfg.n_restarts,
        seed=_derived_seed(cfg.seed, 1),
        tol=cfg.tol,
        max_iter=cfg.max_iter,
        workers=cfg.workers,
    )
    la, lb, le, al, be, lg, ga = (float(v) for v in res.x_best)
    fit = Approach1Fit(
        E=math.exp(le),
        A=math.exp(la),
        alpha=al,
        B=math.exp(lb),
        beta=be,
        G=math.exp(lg),
        gamma=ga,
        k_grid_used=data.ks,
        task_id=task_id or next(iter(tasks)),
        n_cells=len(targets),
        config=config_dict(cfg),
        config_digest=config_digest(cfg),
    )
    return replace(fit, sse=approach1_sse(fit, targets))


def fit_approach1_tasks(
    targets: Sequence[PassTarget], config: Optional[Approach1Config] = None, mode: str = "per-task"
) -> dict[str, Approach1Fit]:
    """Fit each task separately (``per-task``) or once on macro-averaged targets (``macro``)."""
    if mode == "per-task":
        return {task: fit_approach1(ts, config, task_id=task) for task, ts in split_by_task(targets).items()}
    if mode == "macro":
        return {"macro": fit_approach1(macro_targets(targets), config, task_id="macro")}
    raise ValueError(f"unknown fit mode {mode!r}")
