"""pass@k estimation and the aggregate targets the fits consume."""

from __future__ import annotations

import csv
import math
import os
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence, TextIO, Union

import numpy as np

from .dataset import P_FLOOR, CheckpointSet, DatasetError, macro_average, probabilities_from_nll
from .numerics import log_pochhammer, stable_pass_transform

__all__ = [
    "DEFAULT_K_GRID",
    "PassTarget",
    "GapRow",
    "exact_pass_at_k",
    "unbiased_pass_at_k",
    "build_pass_targets",
    "naive_vs_mean_gap",
    "split_by_task",
    "macro_targets",
    "write_pass_targets_csv",
    "read_pass_targets_csv",
    "CSV_COLUMNS",
]

DEFAULT_K_GRID: tuple[float, ...] = (1, 2, 4, 8, 16, 32, 64, 128)

# Exact integer arithmetic is used up to this many attempts.
_EXACT_COMB_MAX_N = 1000

CSV_COLUMNS = (
    "model_id",
    "n_params",
    "n_tokens",
    "task_id",
    "k",
    "mean_pass",
    "mean_neg_log_pass",
    "n_questions",
)


@dataclass(frozen=True)
class PassTarget:
    model_id: str
    n_params: int
    n_tokens: int
    k: float
    task_id: str
    mean_pass: float
    mean_neg_log_pass: float
    n_questions: int


@dataclass(frozen=True)
class GapRow:
    model_id: str
    task_id: str
    k: float
    naive: float
    mean: float


def exact_pass_at_k(p, k):
    """``1 - (1 - p)^k`` for a per-sample success probability ``p``."""
    return stable_pass_transform(p, k)[0]


def unbiased_pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased pass@k from ``c`` correct out of ``n`` attempts: ``1 - C(n-c, k) / C(n, k)``.

    Raises:
        ValueError: unless ``0 <= c <= n`` and ``1 <= k <= n``.
    """
    if not 0 <= c <= n:
        raise ValueError(f"need 0 <= c <= n, got n={n}, c={c}")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got n={n}, k={k}")
    if n - c < k:
        return 1.0
    if c == 0:
        return 0.0
    if n <= _EXACT_COMB_MAX_N:
        return float(1 - Fraction(math.comb(n - c, k), math.comb(n, k)))
    # C(n-c, k) / C(n, k) = Γ(n-c+1)Γ(n-k+1) / (Γ(n-c-k+1)Γ(n+1))
    log_ratio = log_pochhammer(n - c - k + 1, k) - log_pochhammer(n - k + 1, k)
    return float(-math.expm1(log_ratio))


def _cell_values(recs, k: float, p_floor: float) -> tuple[np.ndarray, np.ndarray]:
    nll = [r.nll for r in recs if r.nll is not None]
    passes, neg_logs = [], []
    if nll:
        p = probabilities_from_nll(nll, p_floor)
        pv, nv = stable_pass_transform(p, k)
        passes.append(np.atleast_1d(pv))
        neg_logs.append(np.atleast_1d(nv))
    counts = [r for r in recs if r.nll is None]
    if counts:
        if float(k) != int(k):
            raise DatasetError(f"non-integer k={k} requested for count evidence")
        ki = int(k)
        pv = []
        for r in counts:
            if ki > r.n_attempts:
                raise DatasetError(
                    f"k={ki} exceeds n_attempts={r.n_attempts} for {r.model_id}/{r.question_id}"
                )
            pv.append(unbiased_pass_at_k(r.n_attempts, r.n_correct, ki))
        pv = np.asarray(pv)
        passes.append(pv)
        neg_logs.append(-np.log(np.maximum(pv, p_floor)))
    return np.concatenate(passes), np.concatenate(neg_logs)


def build_pass_targets(
    cset: CheckpointSet,
    k_grid: Sequence[float] = DEFAULT_K_GRID,
    p_floor: float = P_FLOOR,
    task_id: Optional[str] = None,
) -> list[PassTarget]:
    """Mean pass@k and mean ``-log pass@k`` per (checkpoint, task, k).

    NLL evidence uses ``exp(-nll)`` clamped at ``p_floor``; count evidence uses
    the unbiased estimator and needs integer ``k`` no larger than the attempt
    count.
    """
    ks = sorted({float(k) for k in k_grid})
    if not ks:
        raise ValueError("k_grid is empty")
    if ks[0] < 1:
        raise ValueError("every k must be >= 1")
    out = []
    for (model_id, task), recs in cset.cells(task_id).items():
        ck = cset.checkpoint(model_id)
        mean_pass = np.empty(len(ks))
        mean_nlp = np.empty(len(ks))
        for j, k in enumerate(ks):
            pv, nv = _cell_values(recs, k, p_floor)
            mean_pass[j] = math.fsum(pv) / pv.size
            mean_nlp[j] = math.fsum(nv) / nv.size
        # Rounding guard: the two log branches may disagree by an ulp.
        mean_pass = np.maximum.accumulate(mean_pass)
        mean_nlp = np.minimum.accumulate(mean_nlp)
        for j, k in enumerate(ks):
            out.append(
                PassTarget(
                    model_id=model_id,
                    n_params=ck.n_params,
                    n_tokens=ck.n_tokens,
                    k=k,
                    task_id=task,
                    mean_pass=float(mean_pass[j]),
                    mean_neg_log_pass=float(mean_nlp[j]),
                    n_questions=len(recs),
                )
            )
    return out


def _plain_probabilities(recs, p_floor: float) -> np.ndarray:
    vals = []
    for r in recs:
        if r.nll is not None:
            vals.append(min(1.0, max(p_floor, math.exp(-r.nll))))
        else:
            vals.append(r.n_correct / r.n_attempts)
    return np.asarray(vals)


def naive_vs_mean_gap(cset: CheckpointSet, k: float, p_floor: float = P_FLOOR) -> list[GapRow]:
    """Compare ``1 - (1 - mean p)^k`` against the mean of ``1 - (1 - p_i)^k``.

    By concavity the first is never smaller; both coincide at ``k = 1``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rows = []
    for (model_id, task), recs in cset.cells().items():
        p = _plain_probabilities(recs, p_floor)
        p_bar = math.fsum(p) / p.size
        if k == 1:
            naive = mean = p_bar
        else:
            mean = math.fsum(np.atleast_1d(exact_pass_at_k(p, k))) / p.size
            # Jensen's inequality holds exactly; clamp away summation rounding.
            naive = max(float(exact_pass_at_k(p_bar, k)), mean)
        rows.append(GapRow(model_id=model_id, task_id=task, k=float(k), naive=naive, mean=mean))
    return rows


def split_by_task(targets: Iterable[PassTarget]) -> dict[str, list[PassTarget]]:
    out: dict[str, list[PassTarget]] = defaultdict(list)
    for t in targets:
        out[t.task_id].append(t)
    return dict(sorted(out.items()))


def macro_targets(targets: Iterable[PassTarget]) -> list[PassTarget]:
    """Average targets over tasks at each (checkpoint, k) present for every task."""
    targets = list(targets)
    tasks = sorted({t.task_id for t in targets})
    cells: dict[tuple[str, float], dict[str, PassTarget]] = defaultdict(dict)
    for t in targets:
        cells[(t.model_id, t.k)][t.task_id] = t
    out = []
    for (model_id, k), per_task in cells.items():
        if len(per_task) != len(tasks):
            continue
        first = next(iter(per_task.values()))
        out.append(
            PassTarget(
                model_id=model_id,
                n_params=first.n_params,
                n_tokens=first.n_tokens,
                k=k,
                task_id="macro",
                mean_pass=macro_average({t: v.mean_pass for t, v in per_task.items()}),
                mean_neg_log_pass=macro_average({t: v.mean_neg_log_pass for t, v in per_task.items()}),
                n_questions=sum(v.n_questions for v in per_task.values()),
            )
        )
    out.sort(key=lambda t: (6.0 * t.n_params * t.n_tokens, t.n_params, t.model_id, t.k))
    return out


def write_pass_targets_csv(targets: Iterable[PassTarget], dest: Union[str, os.PathLike, TextIO]) -> None:
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            write_pass_targets_csv(targets, fh)
        return
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for t in targets:
        writer.writerow(
            [t.model_id, t.n_params, t.n_tokens, t.task_id, repr(float(t.k)),
             repr(t.mean_pass), repr(t.mean_neg_log_pass), t.n_questions]
        )


def read_pass_targets_csv(src: Union[str, os.PathLike, TextIO]) -> list[PassTarget]:
    if isinstance(src, (str, os.PathLike)):
        with open(src, encoding="utf-8", newline="") as fh:
            return read_pass_targets_csv(fh)
    reader = csv.DictReader(src)
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise DatasetError(f"pass-target CSV header must be {','.join(CSV_COLUMNS)}")
    out = []
    for line, row in enumerate(reader, start=2):
        try:
            out.append(
                PassTarget(
                    model_id=row["model_id"],
                    n_params=int(row["n_params"]),
                    n_tokens=int(row["n_tokens"]),
                    k=float(row["k"]),
                    task_id=row["task_id"],
                    mean_pass=float(row["mean_pass"]),
                    mean_neg_log_pass=float(row["mean_neg_log_pass"]),
                    n_questions=int(row["n_questions"]),
                )
            )
        except (TypeError, ValueError) as exc:
            raise DatasetError(f"line {line}: {exc}") from None
    return out
