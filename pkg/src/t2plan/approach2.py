"""Accuracy-side model: per-question success probabilities ~ Beta(a, b).

The Beta mean follows a scaled sigmoid of the base loss ``L̂(N, D)`` and its
concentration a log link::

    mu = theta2 / (1 + exp(theta1 * (L̂ - theta0)))
    nu = exp(theta3 + theta4 * L̂)
    a, b = mu * nu, (1 - mu) * nu

so that ``pass@k = 1 - B(a, b + k) / B(a, b)``. The base Chinchilla fit stays
frozen while the five thetas are fitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from . import optimizer
from .chinchilla import ChinchillaFit, FitError, _derived_seed, predict_loss
from .numerics import log_beta_ratio, stable_pass_transform
from .passk import PassTarget
from .serialization import config_dict, config_digest

__all__ = [
    "Approach2Config",
    "Approach2Fit",
    "beta_params",
    "beta_pass_at_k",
    "predict_pass_at_k",
    "naive_pass_at_k",
    "predict_inference_corrected_acc",
    "fit_beta_regression",
    "approach2_sse",
    "MU_MIN",
    "MU_MAX",
]

# mu is kept strictly inside (0, 1) so that a and b stay positive.
MU_MIN = 1e-300
MU_MAX = 1.0 - 2.0**-52

THETA1_BOUNDS = (0.01, 100.0)
THETA2_BOUNDS = (1e-6, 1.0)
THETA3_BOUNDS = (-5.0, 20.0)
THETA4_BOUNDS = (-20.0, 20.0)
THETA3_SEEDS = (-1.0, 0.0, 1.0, 2.0, 3.0, 5.0, 8.0, 12.0)


@dataclass(frozen=True)
class Approach2Config:
    n_restarts: int = 32
    n_baseline_restarts: int = 20
    theta3_seeds: tuple = THETA3_SEEDS
    max_iter: int = 5000
    tol: float = 1e-15
    seed: int = 0
    workers: int = 1


@dataclass(frozen=True)
class Approach2Fit:
    base: ChinchillaFit
    theta0: float
    theta1: float
    theta2: float
    theta3: float
    theta4: float
    sse: float = 0.0
    task_id: str = "macro"
    k_grid_used: tuple = ()
    n_cells: int = 0
    config: Mapping = field(default_factory=dict)
    config_digest: str = ""

    def __post_init__(self):
        if not 0.0 < self.theta2 <= 1.0:
            raise ValueError("theta2 must lie in (0, 1]")

    @property
    def theta(self) -> tuple[float, float, float, float, float]:
        return (self.theta0, self.theta1, self.theta2, self.theta3, self.theta4)

    def to_json(self) -> dict:
        return {
            "kind": "approach2",
            "base": self.base.to_json(),
            "theta0": self.theta0,
            "theta1": self.theta1,
            "theta2": self.theta2,
            "theta3": self.theta3,
            "theta4": self.theta4,
            "sse": self.sse,
            "task_id": self.task_id,
            "config_digest": self.config_digest,
            "k_grid_used": list(self.k_grid_used),
            "n_cells": self.n_cells,
            "config": dict(self.config),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "Approach2Fit":
        return cls(
            base=ChinchillaFit.from_json(obj["base"]),
            theta0=float(obj["theta0"]),
            theta1=float(obj["theta1"]),
            theta2=float(obj["theta2"]),
            theta3=float(obj["theta3"]),
            theta4=float(obj["theta4"]),
            sse=float(obj.get("sse", 0.0)),
            task_id=str(obj.get("task_id", "macro")),
            k_grid_used=tuple(float(k) for k in obj.get("k_grid_used", ())),
            n_cells=int(obj.get("n_cells", 0)),
            config=dict(obj.get("config", {})),
            config_digest=str(obj.get("config_digest", "")),
        )


def _sigmoid(t0, t1, t2, loss):
    """Scaled sigmoid with broadcastable thetas (rows) and losses (columns)."""
    z = t1 * (loss - t0)
    e = np.exp(-np.abs(z))
    return np.where(z > 0, t2 * e / (1.0 + e), t2 / (1.0 + e))


def _links(theta, loss):
    t0, t1, t2, t3, t4 = theta
    mu = np.clip(_sigmoid(t0, t1, t2, loss), MU_MIN, MU_MAX)
    nu = np.exp(t3 + t4 * loss)
    return mu, nu


def _out(arr, *args):
    return float(arr) if all(np.ndim(a) == 0 for a in args) else arr


def beta_params(fit: Approach2Fit, n_params, n_tokens):
    """``(a, b, mu, nu)`` of the difficulty distribution at ``(N, D)``."""
    loss = np.asarray(predict_loss(fit.base, n_params, n_tokens), dtype=float)
    mu, nu = _links(fit.theta, loss)
    a = mu * nu
    b = (1.0 - mu) * nu
    return tuple(_out(v, n_params, n_tokens) for v in (a, b, mu, nu))


def beta_pass_at_k(a, b, k):
    """``E[1 - (1 - p)^k]`` for ``p ~ Beta(a, b)``, i.e. ``1 - B(a, b + k) / B(a, b)``."""
    out = -np.expm1(log_beta_ratio(a, b, k))
    return _out(np.asarray(out), a, b, k)


def predict_pass_at_k(fit: Approach2Fit, n_params, n_tokens, k):
    """Expected pass@k under the Beta model at ``(N, D)``."""
    a, b, _, _ = beta_params(fit, n_params, n_tokens)
    out = beta_pass_at_k(a, b, k)
    return _out(np.asarray(out), n_params, n_tokens, k)


def naive_pass_at_k(fit: Approach2Fit, n_params, n_tokens, k):
    """``1 - (1 - mu)^k``: treats every question as having the mean difficulty."""
    _, _, mu, _ = beta_params(fit, n_params, n_tokens)
    return _out(np.asarray(stable_pass_transform(mu, k)[0]), n_params, n_tokens, k)


def predict_inference_corrected_acc(fit: Approach2Fit, n_params, n_tokens, c_inf):
    """Expected pass@k with ``k = c_inf / (2 N)``.

    Raises:
        ValueError: if the budget buys less than one forward pass.
    """
    k = np.asarray(c_inf, dtype=float) / (2.0 * np.asarray(n_params, dtype=float))
    if (k < 1).any():
        raise ValueError("inference budget below one forward pass (k < 1)")
    return predict_pass_at_k(fit, n_params, n_tokens, _out(k, n_params, c_inf))


class _CellData:
    def __init__(self, base: ChinchillaFit, targets: Sequence[PassTarget]):
        ckpts = sorted({(t.n_params, t.n_tokens) for t in targets})
        cpos = {c: i for i, c in enumerate(ckpts)}
        n = np.array([c[0] for c in ckpts], dtype=float)
        d = np.array([c[1] for c in ckpts], dtype=float)
        self.loss = np.asarray(predict_loss(base, n, d), dtype=float).reshape(-1)
        self.ci = np.array([cpos[(t.n_params, t.n_tokens)] for t in targets])
        self.k = np.array([float(t.k) for t in targets])
        self.y = np.array([t.mean_pass for t in targets], dtype=float)
        self.ks = tuple(sorted(set(self.k.tolist())))
        self.n_ckpts = len(ckpts)


class _BetaSSE:
    """SSE of the Beta pass@k against ``mean_pass`` over ``theta0..theta4``."""

    def __init__(self, data: _CellData):
        self.d = data

    def __call__(self, x):
        return float(self.batch(np.asarray(x, dtype=float)[None, :])[0])

    def batch(self, X):
        X = np.asarray(X, dtype=float)
        d = self.d
        cols = [X[:, j : j + 1] for j in range(5)]
        mu, nu = _links(cols, d.loss)
        a = (mu * nu)[:, d.ci]
        b = ((1.0 - mu) * nu)[:, d.ci]
        k = np.broadcast_to(d.k, a.shape)
        pred = beta_pass_at_k(a, b, k)
        r = pred - d.y
        return np.einsum("ij,ij->i", r, r)


class _SigmoidSSE:
    """k = 1 baseline: SSE of ``mu(L̂)`` against pass@1 over ``theta0..theta2``."""

    def __init__(self, loss, y):
        self.loss = loss
        self.y = y

    def __call__(self, x):
        return float(self.batch(np.asarray(x, dtype=float)[None, :])[0])

    def batch(self, X):
        X = np.asarray(X, dtype=float)
        r = _sigmoid(X[:, 0:1], X[:, 1:2], X[:, 2:3], self.loss) - self.y
        return np.einsum("ij,ij->i", r, r)


def approach2_sse(fit: Approach2Fit, targets: Sequence[PassTarget]) -> float:
    n = np.array([t.n_params for t in targets], dtype=float)
    d = np.array([t.n_tokens for t in targets], dtype=float)
    k = np.array([t.k for t in targets], dtype=float)
    y = np.array([t.mean_pass for t in targets], dtype=float)
    r = predict_pass_at_k(fit, n, d, k) - y
    return float(math.fsum(r * r))


def fit_beta_regression(
    base: ChinchillaFit,
    targets: Sequence[PassTarget],
    config: Optional[Approach2Config] = None,
) -> Approach2Fit:
    """Fit ``theta0..theta4`` with ``base`` frozen.

    A three-parameter sigmoid is first fitted to pass@1 against ``L̂``; its
    solution, paired with each ``theta3`` seed and ``theta4 = 0``, supplies
    the first starts of the full multi-start search.

    Raises:
        FitError: task mismatch between base and targets, fewer than 2 k
            values or 5 (N, D) points, or degenerate targets.
    """
    cfg = config or Approach2Config()
    targets = list(targets)
    if not targets:
        raise FitError("no targets")
    tasks = {t.task_id for t in targets}
    if len(tasks) > 1:
        raise FitError(f"targets span several tasks {sorted(tasks)}")
    task = next(iter(tasks))
    if base.task_id != task:
        raise FitError(f"base fit is for task {base.task_id!r} but targets are for {task!r}")
    data = _CellData(base, targets)
    if len(data.ks) < 2:
        raise FitError("need >= 2 distinct k values")
    if data.n_ckpts < 5:
        raise FitError(f"need >= 5 distinct (N, D) points, got {data.n_ckpts}")
    if not np.isfinite(data.y).all() or ((data.y < 0) | (data.y > 1)).any():
        raise FitError("mean_pass targets must be finite probabilities")
    if np.ptp(data.y) == 0:
        raise FitError("degenerate targets: all values equal")
    if not np.isfinite(data.loss).all():
        raise FitError("base fit yields non-finite losses on the target grid")

    l_lo, l_hi = float(data.loss.min()), float(data.loss.max())
    theta0_bounds = (0.0, 3.0 * max(l_hi, 1e-6))

    # Stage 1: sigmoid baseline on k = 1.
    k1 = data.k == data.ks[0]
    y1 = np.zeros(data.n_ckpts)
    np.add.at(y1, data.ci[k1], data.y[k1])
    cnt = np.bincount(data.ci[k1], minlength=data.n_ckpts)
    seen = cnt > 0
    base_obj = _SigmoidSSE(data.loss[seen], y1[seen] / cnt[seen])
    base_bounds = optimizer.Bounds.from_pairs([theta0_bounds, THETA1_BOUNDS, THETA2_BOUNDS])
    base_res = optimizer.multi_start(
        base_obj,
        base_bounds,
        optimizer.box_sampler([l_lo, 0.1, 0.1], [l_hi, 10.0, 1.0]),
        cfg.n_baseline_restarts,
        seed=_derived_seed(cfg.seed, 2, 0),
        tol=cfg.tol,
        max_iter=cfg.max_iter,
    )
    t0, t1, t2 = (float(v) for v in base_res.x_best)

    # Stage 2: full Beta regression.
    bounds = optimizer.Bounds.from_pairs([theta0_bounds, THETA1_BOUNDS, THETA2_BOUNDS, THETA3_BOUNDS, THETA4_BOUNDS])
    seeds = [(t0, t1, t2, float(t3), 0.0) for t3 in cfg.theta3_seeds]
    sampler = optimizer.box_sampler([l_lo, 0.1, 0.1, -1.0, -2.0], [l_hi, 10.0, 1.0, 8.0, 2.0])
    res = optimizer.multi_start(
        _BetaSSE(data),
        bounds,
        sampler,
        max(cfg.n_restarts, len(seeds)),
        seed=_derived_seed(cfg.seed, 2, 1),
        initial_points=seeds,
        tol=cfg.tol,
        max_iter=cfg.max_iter,
        workers=cfg.workers,
    )
    th = [float(v) for v in res.x_best]
    fit = Approach2Fit(
        base=base,
        theta0=th[0],
        theta1=th[1],
        theta2=th[2],
        theta3=th[3],
        theta4=th[4],
        task_id=task,
        k_grid_used=data.ks,
        n_cells=len(targets),
        config=config_dict(cfg),
        config_digest=config_digest(cfg),
    )
    return replace(fit, sse=approach2_sse(fit, targets))
