"""The base law ``L(N, D) = E + A / N**alpha + B / D**beta``.

Fitting profiles the irreducible loss ``E`` over a grid and solves the
remaining ``(log A, log B, alpha, beta)`` by multi-start L-BFGS-B at each grid
value, with each point weighted by the inverse of its isoFLOP group's NLL
variance. The best grid solution is then polished jointly over all five
parameters with ``E`` free inside the grid's range, since the true ``E`` is
almost never a grid node.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import optimizer
from .dataset import DEFAULT_ISOFLOP_WIDTH, CheckpointSet, IsoflopGroup, isoflop_bucket
from .serialization import config_dict, config_digest

__all__ = [
    "FitError",
    "LossObservation",
    "ChinchillaConfig",
    "ChinchillaFit",
    "observations_from_checkpoints",
    "observations_from_targets",
    "inverse_variance_weights",
    "fit_chinchilla",
    "predict_loss",
    "closed_form_optimum",
    "weighted_sse",
]

LOG_SCALE_BOUNDS = (-20.0, 40.0)
EXPONENT_BOUNDS = (0.01, 2.5)
LOG_SCALE_INIT = (0.0, math.log(1e6))
EXPONENT_INIT = (0.05, 1.0)


class FitError(RuntimeError):
    """A fit could not be carried out on the supplied data."""


@dataclass(frozen=True)
class LossObservation:
    model_id: str
    n_params: float
    n_tokens: float
    loss: float

    @property
    def c_train(self) -> float:
        return 6.0 * self.n_params * self.n_tokens


@dataclass(frozen=True)
class ChinchillaConfig:
    n_e_grid: int = 40
    e_lo_frac: float = 0.01
    e_hi_frac: float = 0.95
    n_restarts: int = 50
    max_iter: int = 5000
    tol: float = 1e-15
    seed: int = 0
    weighted: bool = True
    variance_floor: float = 1e-8
    isoflop_width: float = DEFAULT_ISOFLOP_WIDTH
    polish: bool = True
    workers: int = 1


@dataclass(frozen=True)
class ChinchillaFit:
    E: float
    A: float
    alpha: float
    B: float
    beta: float
    sse: float = 0.0
    weighted: bool = False
    task_id: str = "macro"
    n_points: int = 0
    config: Mapping = field(default_factory=dict)
    config_digest: str = ""

    @property
    def a(self) -> float:
        """Exponent of N* in C_train."""
        return self.beta / (self.alpha + self.beta)

    @property
    def b(self) -> float:
        """Exponent of D* in C_train."""
        return self.alpha / (self.alpha + self.beta)

    def predict(self, n_params, n_tokens):
        return predict_loss(self, n_params, n_tokens)

    def to_json(self) -> dict:
        return {
            "kind": "chinchilla",
            "E": self.E,
            "A": self.A,
            "alpha": self.alpha,
            "B": self.B,
            "beta": self.beta,
            "sse": self.sse,
            "task_id": self.task_id,
            "config_digest": self.config_digest,
            "weighted": self.weighted,
            "weighting": "inverse within-group variance of raw mean NLL" if self.weighted else "none",
            "n_points": self.n_points,
            "config": dict(self.config),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ChinchillaFit":
        return cls(
            E=float(obj["E"]),
            A=float(obj["A"]),
            alpha=float(obj["alpha"]),
            B=float(obj["B"]),
            beta=float(obj["beta"]),
            sse=float(obj.get("sse", 0.0)),
            weighted=bool(obj.get("weighted", False)),
            task_id=str(obj.get("task_id", "macro")),
            n_points=int(obj.get("n_points", 0)),
            config=dict(obj.get("config", {})),
            config_digest=str(obj.get("config_digest", "")),
        )


def predict_loss(fit: ChinchillaFit, n_params, n_tokens):
    """``E + A / N**alpha + B / D**beta``; scalars in give a float out."""
    n = np.asarray(n_params, dtype=float)
    d = np.asarray(n_tokens, dtype=float)
    out = fit.E + fit.A * n ** (-fit.alpha) + fit.B * d ** (-fit.beta)
    return float(out) if out.ndim == 0 else out


def closed_form_optimum(fit: ChinchillaFit, c_train: float) -> tuple[float, float]:
    """Minimiser of ``L(N, C / 6N)``: ``N* = (alpha A / (beta B))**(1/(alpha+beta)) * (C/6)**a``."""
    if c_train <= 0:
        raise ValueError("c_train must be positive")
    if min(fit.A, fit.B, fit.alpha, fit.beta) <= 0:
        raise ValueError("closed form needs A, B, alpha, beta > 0")
    s = fit.alpha + fit.beta
    log_n = (math.log(fit.alpha * fit.A / (fit.beta * fit.B)) + fit.beta * math.log(c_train / 6.0)) / s
    n_star = math.exp(log_n)
    return n_star, c_train / (6.0 * n_star)


def observations_from_checkpoints(cset: CheckpointSet, task_id: str) -> list[LossObservation]:
    """Mean question-level NLL per checkpoint; ``task_id="macro"`` macro-averages tasks."""
    means = cset.macro_mean_nll() if task_id == "macro" else cset.mean_nll(task_id)
    if not means:
        raise FitError(f"no NLL evidence for task {task_id!r}")
    out = []
    for c in cset.checkpoints:
        if c.model_id in means:
            out.append(LossObservation(c.model_id, float(c.n_params), float(c.n_tokens), means[c.model_id]))
    return out


def observations_from_targets(targets: Iterable) -> list[LossObservation]:
    """k = 1 ``mean_neg_log_pass`` of each pass target, i.e. mean NLL."""
    out = [
        LossObservation(t.model_id, float(t.n_params), float(t.n_tokens), t.mean_neg_log_pass)
        for t in targets
        if t.k == 1
    ]
    if not out:
        raise FitError("no k = 1 targets")
    return out


def inverse_variance_weights(
    obs: Sequence[LossObservation],
    groups: Optional[Sequence[IsoflopGroup]] = None,
    task_id: str = "macro",
    width: float = DEFAULT_ISOFLOP_WIDTH,
    variance_floor: float = 1e-8,
) -> tuple[np.ndarray, int]:
    """Per-point weights ``1 / max(var_group, floor)`` and the number of groups.

    Without explicit ``groups`` the observations are bucketed on the isoFLOP
    lattice and each bucket's variance is that of its observed losses.
    Singleton groups take the median variance of the multi-member groups.
    """
    group_of: dict[str, int] = {}
    variances: dict[int, float] = {}
    sizes: dict[int, int] = {}
    if groups is not None:
        for g in groups:
            for m in g.members:
                group_of[m] = g.index
            sizes[g.index] = len(g.members)
            if task_id in g.nll_variance:
                variances[g.index] = g.nll_variance[task_id]
    missing = [o for o in obs if o.model_id not in group_of]
    if missing:
        buckets: dict[int, list[float]] = defaultdict(list)
        for o in missing:
            idx = isoflop_bucket(o.c_train, width)
            group_of[o.model_id] = idx
            buckets[idx].append(o.loss)
        for idx, losses in buckets.items():
            arr = np.asarray(losses)
            variances[idx] = float(np.mean((arr - arr.mean()) ** 2))
            sizes[idx] = len(losses)
    used = sorted({group_of[o.model_id] for o in obs})
    multi = [variances[i] for i in used if sizes.get(i, 0) > 1 and i in variances]
    fallback = float(np.median(multi)) if multi else 1.0
    w = np.empty(len(obs))
    for j, o in enumerate(obs):
        idx = group_of[o.model_id]
        v = variances.get(idx, fallback) if sizes.get(idx, 0) > 1 else fallback
        w[j] = 1.0 / max(v, variance_floor)
    return w, len(used)


class _ProfileSSE:
    """Weighted SSE over ``(log A, log B, alpha, beta)`` at fixed ``E``."""

    def __init__(self, E, log_n, log_d, y, w):
        self.E = float(E)
        self.log_n = log_n
        self.log_d = log_d
        self.y = y
        self.w = w

    def __call__(self, x):
        la, lb, al, be = x
        pred = self.E + np.exp(la - al * self.log_n) + np.exp(lb - be * self.log_d)
        r = pred - self.y
        return float(np.dot(self.w * r, r))

    def batch(self, X):
        X = np.asarray(X)
        pred = (
            self.E
            + np.exp(X[:, :1] - X[:, 2:3] * self.log_n)
            + np.exp(X[:, 1:2] - X[:, 3:4] * self.log_d)
        )
        r = pred - self.y
        return (r * r) @ self.w


class _FullSSE:
    """Weighted SSE over ``(E, log A, log B, alpha, beta)``."""

    def __init__(self, log_n, log_d, y, w):
        self.log_n = log_n
        self.log_d = log_d
        self.y = y
        self.w = w

    def __call__(self, x):
        e, la, lb, al, be = x
        r = e + np.exp(la - al * self.log_n) + np.exp(lb - be * self.log_d) - self.y
        return float(np.dot(self.w * r, r))

    def batch(self, X):
        X = np.asarray(X)
        r = (
            X[:, :1]
            + np.exp(X[:, 1:2] - X[:, 3:4] * self.log_n)
            + np.exp(X[:, 2:3] - X[:, 4:5] * self.log_d)
            - self.y
        )
        return (r * r) @ self.w


def weighted_sse(fit: ChinchillaFit, obs: Sequence[LossObservation], weights=None) -> float:
    n = np.array([o.n_params for o in obs])
    d = np.array([o.n_tokens for o in obs])
    y = np.array([o.loss for o in obs])
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    x = np.array([fit.E, math.log(fit.A), math.log(fit.B), fit.alpha, fit.beta])
    return _FullSSE(np.log(n), np.log(d), y, w)(x)


def _derived_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def fit_chinchilla(
    observations: Sequence[LossObservation],
    groups: Optional[Sequence[IsoflopGroup]] = None,
    config: Optional[ChinchillaConfig] = None,
    task_id: str = "macro",
) -> ChinchillaFit:
    """Fit the base law by E-grid profiling with inverse-variance weights.

    Raises:
        FitError: fewer than 5 distinct (N, D) points, a single isoFLOP
            group, identical losses, or no restart producing a finite value.
    """
    cfg = config or ChinchillaConfig()
    obs = list(observations)
    distinct = {(o.n_params, o.n_tokens) for o in obs}
    if len(distinct) < 5:
        raise FitError(f"need >= 5 distinct (N, D) points, got {len(distinct)}")
    y = np.array([o.loss for o in obs])
    if not np.isfinite(y).all():
        raise FitError("non-finite loss values")
    if np.ptp(y) == 0:
        raise FitError("degenerate data: all losses are equal")

    w, n_groups = inverse_variance_weights(
        obs, groups, task_id=task_id, width=cfg.isoflop_width, variance_floor=cfg.variance_floor
    )
    if n_groups < 2:
        raise FitError("need points spanning >= 2 isoFLOP groups")
    if not cfg.weighted:
        w = np.ones_like(y)

    log_n = np.log([o.n_params for o in obs])
    log_d = np.log([o.n_tokens for o in obs])
    y_min = float(y.min())
    e_grid = np.linspace(cfg.e_lo_frac * y_min, cfg.e_hi_frac * y_min, cfg.n_e_grid)

    bounds = optimizer.Bounds.from_pairs([LOG_SCALE_BOUNDS, LOG_SCALE_BOUNDS, EXPONENT_BOUNDS, EXPONENT_BOUNDS])
    sampler = optimizer.box_sampler(
        [LOG_SCALE_INIT[0], LOG_SCALE_INIT[0], EXPONENT_INIT[0], EXPONENT_INIT[0]],
        [LOG_SCALE_INIT[1], LOG_SCALE_INIT[1], EXPONENT_INIT[1], EXPONENT_INIT[1]],
    )

    best_f = math.inf
    best_x = None
    for i, e in enumerate(e_grid):
        try:
            res = optimizer.multi_start(
                _ProfileSSE(e, log_n, log_d, y, w),
                bounds,
                sampler,
                cfg.n_restarts,
                seed=_derived_seed(cfg.seed, i),
                tol=cfg.tol,
                max_iter=cfg.max_iter,
                workers=cfg.workers,
            )
        except optimizer.OptimizationError:
            continue
        if res.f_best < best_f:
            best_f = res.f_best
            best_x = np.concatenate([[e], res.x_best])
    if best_x is None:
        raise FitError("no E candidate produced a finite objective")

    if cfg.polish:
        full = _FullSSE(log_n, log_d, y, w)
        full_bounds = optimizer.Bounds.from_pairs(
            [(float(e_grid[0]), float(e_grid[-1])), LOG_SCALE_BOUNDS, LOG_SCALE_BOUNDS, EXPONENT_BOUNDS, EXPONENT_BOUNDS]
        )
        polished = optimizer.minimize_bounded(full, best_x, full_bounds, tol=cfg.tol, max_iter=cfg.max_iter)
        if polished.f_best < best_f:
            best_x, best_f = polished.x_best, polished.f_best

    e, la, lb, al, be = (float(v) for v in best_x)
    return ChinchillaFit(
        E=e,
        A=math.exp(la),
        alpha=al,
        B=math.exp(lb),
        beta=be,
        sse=float(best_f),
        weighted=cfg.weighted,
        task_id=task_id,
        n_points=len(obs),
        config=config_dict(cfg),
        config_digest=config_digest(cfg),
    )
