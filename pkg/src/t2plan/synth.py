"""Synthetic checkpoints and pass targets drawn from known parameters.

Everything here is deterministic given ``GroundTruth.seed``. Random draws for
a cell come from a Philox stream keyed on ``(seed, stream, task, checkpoint)``,
so a dataset does not depend on the order in which cells are generated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .approach1 import Approach1Fit, predict_loss_k
from .approach2 import Approach2Fit, predict_pass_at_k, beta_params
from .chinchilla import ChinchillaFit, predict_loss
from .dataset import P_FLOOR, CheckpointRecord, CheckpointSet
from .passk import DEFAULT_K_GRID, PassTarget

__all__ = [
    "GridSpec",
    "GroundTruth",
    "generate_grid",
    "generate_nll_data",
    "generate_pass_targets",
    "model_id_for",
    "DEFAULT_TASK",
]

DEFAULT_TASK = "synthetic"

_NLL_STREAM = 0
_TARGET_STREAM = 1


@dataclass(frozen=True)
class GridSpec:
    """Budgets crossed with model sizes, optionally thinned.

    For each budget, sizes whose tokens-per-parameter ratio falls outside
    ``tpp_range`` are dropped and at most ``max_per_budget`` remain, chosen
    closest (in log ratio) to ``target_tpp``.
    """

    budgets: tuple
    sizes: tuple
    tpp_range: Optional[tuple] = None
    max_per_budget: Optional[int] = None
    target_tpp: float = 20.0

    @classmethod
    def default(cls) -> "GridSpec":
        """12 doubling budgets 1.25e16..2.56e19 over 16 sizes 5M..901M."""
        budgets = tuple(1.25e16 * 2.0**j for j in range(12))
        sizes = tuple(float(s) for s in np.round(np.geomspace(5e6, 9.01e8, 16)))
        return cls(budgets=budgets, sizes=sizes, tpp_range=(1.0, 1000.0), max_per_budget=9)


def generate_grid(spec: Optional[GridSpec] = None) -> list[tuple[float, float]]:
    """``(n_params, n_tokens)`` pairs with ``n_tokens = budget / (6 n_params)``.

    Raises:
        ValueError: if the spec is empty or filters out every pair.
    """
    spec = spec or GridSpec.default()
    if not spec.budgets or not spec.sizes:
        raise ValueError("grid spec needs at least one budget and one size")
    if min(spec.budgets) <= 0 or min(spec.sizes) < 1:
        raise ValueError("budgets must be positive and sizes >= 1")
    pairs = []
    for c in sorted(spec.budgets):
        chosen = []
        for n in sorted(spec.sizes):
            tpp = c / (6.0 * n * n)
            if spec.tpp_range is not None and not spec.tpp_range[0] <= tpp <= spec.tpp_range[1]:
                continue
            chosen.append((abs(math.log(tpp / spec.target_tpp)), n))
        if spec.max_per_budget is not None:
            chosen = sorted(chosen)[: spec.max_per_budget]
        for n in sorted(n for _, n in chosen):
            pairs.append((float(n), c / (6.0 * n)))
    if not pairs:
        raise ValueError("grid spec produced no (N, D) pairs")
    return pairs


@dataclass(frozen=True)
class GroundTruth:
    E: float
    A: float
    alpha: float
    B: float
    beta: float
    G: Optional[float] = None
    gamma: Optional[float] = None
    theta: Optional[tuple] = None
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        vals = (self.E, self.A, self.alpha, self.B, self.beta)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("ground-truth parameters must be finite")
        if self.E < 0 or min(self.A, self.alpha, self.B, self.beta) <= 0:
            raise ValueError("need E >= 0 and A, alpha, B, beta > 0")
        if (self.G is None) != (self.gamma is None):
            raise ValueError("G and gamma come together")
        if self.G is not None and (self.G < 0 or self.gamma <= 0):
            raise ValueError("need G >= 0 and gamma > 0")
        if self.theta is not None:
            if len(self.theta) != 5 or not 0 < self.theta[2] <= 1:
                raise ValueError("theta is (theta0..theta4) with theta2 in (0, 1]")
        if not self.noise_sigma >= 0:
            raise ValueError("noise_sigma must be >= 0")

    def chinchilla(self, task_id: str = DEFAULT_TASK) -> ChinchillaFit:
        return ChinchillaFit(E=self.E, A=self.A, alpha=self.alpha, B=self.B, beta=self.beta, task_id=task_id)

    def approach1(self, task_id: str = DEFAULT_TASK) -> Approach1Fit:
        if self.G is None:
            raise ValueError("ground truth has no (G, gamma) block")
        return Approach1Fit(
            E=self.E, A=self.A, alpha=self.alpha, B=self.B, beta=self.beta,
            G=self.G, gamma=self.gamma, task_id=task_id,
        )

    def approach2(self, task_id: str = DEFAULT_TASK) -> Approach2Fit:
        if self.theta is None:
            raise ValueError("ground truth has no theta block")
        t = [float(v) for v in self.theta]
        return Approach2Fit(
            base=self.chinchilla(task_id), theta0=t[0], theta1=t[1], theta2=t[2], theta3=t[3], theta4=t[4],
            task_id=task_id,
        )


def model_id_for(index: int) -> str:
    return f"ckpt{index:03d}"


def _rng(seed: int, stream: int, task: int, ckpt: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, task, ckpt])))


def _integer_grid(grid: Sequence[tuple[float, float]]) -> list[tuple[int, int]]:
    out = [(int(round(n)), int(round(d))) for n, d in grid]
    if not out:
        raise ValueError("empty grid")
    if len(set(out)) != len(out):
        raise ValueError("grid has duplicate (N, D) pairs after rounding")
    return out


def generate_nll_data(
    truth: GroundTruth,
    grid: Sequence[tuple[float, float]],
    n_questions: int = 1000,
    task_ids: Sequence[str] = (DEFAULT_TASK,),
    beta_spread: Optional[bool] = None,
) -> CheckpointSet:
    """Per-question NLL records for every grid point and task.

    With a theta block (and ``beta_spread`` not False) question probabilities
    are drawn from the model's Beta(a, b) and recorded as ``-ln p``, with ``p``
    floored at ``P_FLOOR``. Otherwise each question's NLL is ``L̂`` plus
    independent Gaussian noise of scale ``noise_sigma``, clipped at 0.
    """
    if n_questions < 1:
        raise ValueError("n_questions must be >= 1")
    if not task_ids:
        raise ValueError("need at least one task id")
    spread = truth.theta is not None if beta_spread is None else beta_spread
    if spread and truth.theta is None:
        raise ValueError("Beta spread requested without a theta block")
    pairs = _integer_grid(grid)
    records = []
    for ti, task in enumerate(task_ids):
        for ci, (n, d) in enumerate(pairs):
            rng = _rng(truth.seed, _NLL_STREAM, ti, ci)
            if spread:
                a, b, _, _ = beta_params(truth.approach2(task), n, d)
                p = np.maximum(rng.beta(a, b, size=n_questions), P_FLOOR)
                nll = -np.log(p)
            else:
                loss = predict_loss(truth.chinchilla(task), n, d)
                nll = np.full(n_questions, loss)
                if truth.noise_sigma > 0:
                    nll = np.maximum(nll + rng.normal(0.0, truth.noise_sigma, size=n_questions), 0.0)
            mid = model_id_for(ci)
            records.extend(
                CheckpointRecord(mid, n, d, task, f"q{q:04d}", nll=float(v)) for q, v in enumerate(nll)
            )
    return CheckpointSet(records)


def generate_pass_targets(
    truth: GroundTruth,
    grid: Sequence[tuple[float, float]],
    k_grid: Sequence[float] = DEFAULT_K_GRID,
    model: Optional[str] = None,
    task_id: str = DEFAULT_TASK,
    n_questions: int = 1000,
) -> list[PassTarget]:
    """Model-implied targets at every (grid point, k).

    ``model="approach1"`` sets ``mean_neg_log_pass`` from the loss law and
    ``mean_pass = exp(-mean_neg_log_pass)``; ``model="approach2"`` sets
    ``mean_pass`` from the Beta model and ``mean_neg_log_pass = -ln mean_pass``.
    The default picks approach1 when a (G, gamma) block exists, else
    approach2. A positive ``noise_sigma`` adds Gaussian noise to the fitted
    quantity.
    """
    if model is None:
        model = "approach1" if truth.G is not None else "approach2"
    if model == "approach1":
        fit = truth.approach1(task_id)
    elif model == "approach2":
        fit = truth.approach2(task_id)
    else:
        raise ValueError(f"unknown model {model!r}")
    ks = sorted({float(k) for k in k_grid})
    if not ks or ks[0] < 1:
        raise ValueError("k grid must be non-empty with every k >= 1")
    kk = np.asarray(ks)
    out = []
    for ci, (n, d) in enumerate(_integer_grid(grid)):
        if model == "approach1":
            vals = np.asarray(predict_loss_k(fit, float(n), float(d), kk))
        else:
            vals = np.asarray(predict_pass_at_k(fit, float(n), float(d), kk))
        if truth.noise_sigma > 0:
            vals = vals + _rng(truth.seed, _TARGET_STREAM, 0, ci).normal(0.0, truth.noise_sigma, size=vals.shape)
            vals = np.maximum(vals, 0.0) if model == "approach1" else np.clip(vals, 0.0, 1.0)
        for k, v in zip(ks, vals):
            v = float(v)
            if model == "approach1":
                nlp, mp = v, math.exp(-v)
            else:
                nlp, mp = (-math.log(v) if v > 0 else math.inf), v
            out.append(PassTarget(model_id_for(ci), n, d, k, task_id, mp, nlp, n_questions))
    return out
