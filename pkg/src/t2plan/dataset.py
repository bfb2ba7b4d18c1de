"""Checkpoint evaluation records: loading, validation, and isoFLOP grouping.

Input is JSONL, one record per line::

    {"model_id": "m1", "n_params": 37000000, "n_tokens": 740000000,
     "task_id": "lambada", "question_id": "q17", "nll": 2.31}

or with ``"n_attempts"`` / ``"n_correct"`` in place of ``"nll"``.

``n_params`` is taken as reported. Whether it includes embedding parameters
is the data producer's convention; no adjustment is applied here.
"""

from __future__ import annotations

import io
import json
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

import numpy as np

__all__ = [
    "P_FLOOR",
    "DEFAULT_ISOFLOP_WIDTH",
    "DatasetError",
    "SchemaError",
    "CheckpointRecord",
    "Checkpoint",
    "CheckpointSet",
    "LoadReport",
    "IsoflopGroup",
    "load_checkpoints",
    "save_checkpoints",
    "dump_checkpoints",
    "derive_probability",
    "probabilities_from_nll",
    "group_isoflop",
    "isoflop_bucket",
    "macro_average",
]

P_FLOOR = 1e-12
DEFAULT_ISOFLOP_WIDTH = 1.25

_NLL_KEYS = frozenset({"model_id", "n_params", "n_tokens", "task_id", "question_id", "nll"})
_COUNT_KEYS = frozenset(
    {"model_id", "n_params", "n_tokens", "task_id", "question_id", "n_attempts", "n_correct"}
)


class DatasetError(ValueError):
    """The checkpoint data is inconsistent or unusable."""


class SchemaError(DatasetError):
    """A JSONL line does not match the record schema."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class CheckpointRecord:
    model_id: str
    n_params: int
    n_tokens: int
    task_id: str
    question_id: str
    nll: Optional[float] = None
    n_attempts: Optional[int] = None
    n_correct: Optional[int] = None

    def __post_init__(self):
        if self.n_params < 1 or self.n_tokens < 1:
            raise DatasetError("n_params and n_tokens must be >= 1")
        has_nll = self.nll is not None
        has_counts = self.n_attempts is not None or self.n_correct is not None
        if has_nll == has_counts:
            raise DatasetError("a record carries exactly one of nll or (n_attempts, n_correct)")
        if has_nll:
            if not math.isfinite(self.nll) or self.nll < 0:
                raise DatasetError("nll must be finite and >= 0")
        else:
            if self.n_attempts is None or self.n_correct is None:
                raise DatasetError("count evidence needs both n_attempts and n_correct")
            if self.n_attempts < 1 or not 0 <= self.n_correct <= self.n_attempts:
                raise DatasetError("need n_attempts >= 1 and 0 <= n_correct <= n_attempts")

    @property
    def evidence(self) -> str:
        return "nll" if self.nll is not None else "counts"

    @property
    def c_train(self) -> float:
        return 6.0 * self.n_params * self.n_tokens

    def to_json(self) -> dict:
        out = {
            "model_id": self.model_id,
            "n_params": self.n_params,
            "n_tokens": self.n_tokens,
            "task_id": self.task_id,
            "question_id": self.question_id,
        }
        if self.nll is not None:
            out["nll"] = self.nll
        else:
            out["n_attempts"] = self.n_attempts
            out["n_correct"] = self.n_correct
        return out


@dataclass(frozen=True)
class LoadReport:
    n_records: int
    counts_per_task: dict
    evidence_per_task: dict
    warnings: tuple = ()

    def to_json(self) -> dict:
        return {
            "n_records": self.n_records,
            "counts_per_task": dict(self.counts_per_task),
            "evidence_per_task": {t: list(v) for t, v in self.evidence_per_task.items()},
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True)
class Checkpoint:
    model_id: str
    n_params: int
    n_tokens: int

    @property
    def c_train(self) -> float:
        return 6.0 * self.n_params * self.n_tokens


class CheckpointSet:
    """An immutable, validated collection of :class:`CheckpointRecord`."""

    def __init__(self, records: Iterable[CheckpointRecord]):
        records = tuple(records)
        if not records:
            raise DatasetError("no records")
        seen = set()
        by_model: dict[str, tuple[int, int]] = {}
        for rec in records:
            key = (rec.model_id, rec.task_id, rec.question_id)
            if key in seen:
                raise DatasetError(f"duplicate record for {key}")
            seen.add(key)
            shape = (rec.n_params, rec.n_tokens)
            prev = by_model.setdefault(rec.model_id, shape)
            if prev != shape:
                raise DatasetError(
                    f"model {rec.model_id!r} has inconsistent (n_params, n_tokens): {prev} vs {shape}"
                )
        self._records = records
        self._checkpoints = tuple(
            sorted(
                (Checkpoint(m, n, d) for m, (n, d) in by_model.items()),
                key=lambda c: (c.c_train, c.n_params, c.model_id),
            )
        )
        self._tasks = tuple(sorted({r.task_id for r in records}))
        self.report = _build_report(records)

    @property
    def records(self) -> tuple[CheckpointRecord, ...]:
        return self._records

    @property
    def tasks(self) -> tuple[str, ...]:
        return self._tasks

    @property
    def checkpoints(self) -> tuple[Checkpoint, ...]:
        return self._checkpoints

    def __len__(self) -> int:
        return len(self._records)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CheckpointSet):
            return NotImplemented
        return set(self._records) == set(other._records)

    def __hash__(self):
        return hash(frozenset(self._records))

    def checkpoint(self, model_id: str) -> Checkpoint:
        for c in self._checkpoints:
            if c.model_id == model_id:
                return c
        raise KeyError(model_id)

    def cells(self, task_id: Optional[str] = None) -> dict[tuple[str, str], list[CheckpointRecord]]:
        """Records grouped by ``(model_id, task_id)`` in checkpoint order."""
        order = {c.model_id: i for i, c in enumerate(self._checkpoints)}
        grouped: dict[tuple[str, str], list[CheckpointRecord]] = defaultdict(list)
        for rec in self._records:
            if task_id is None or rec.task_id == task_id:
                grouped[(rec.model_id, rec.task_id)].append(rec)
        return dict(sorted(grouped.items(), key=lambda kv: (order[kv[0][0]], kv[0][1])))

    def mean_nll(self, task_id: str) -> dict[str, float]:
        """Mean question-level NLL per model for one task (NLL evidence only)."""
        out = {}
        for (model_id, _), recs in self.cells(task_id).items():
            vals = [r.nll for r in recs if r.nll is not None]
            if vals:
                out[model_id] = math.fsum(vals) / len(vals)
        return out

    def macro_mean_nll(self) -> dict[str, float]:
        per_task = {t: self.mean_nll(t) for t in self._tasks}
        out = {}
        for c in self._checkpoints:
            vals = {t: m[c.model_id] for t, m in per_task.items() if c.model_id in m}
            if vals:
                out[c.model_id] = macro_average(vals)
        return out


def _build_report(records: tuple[CheckpointRecord, ...]) -> LoadReport:
    counts: dict[str, int] = defaultdict(int)
    kinds: dict[str, set] = defaultdict(set)
    for r in records:
        counts[r.task_id] += 1
        kinds[r.task_id].add(r.evidence)
    warnings = tuple(
        f"task {t!r} mixes evidence kinds {sorted(k)}" for t, k in sorted(kinds.items()) if len(k) > 1
    )
    return LoadReport(
        n_records=len(records),
        counts_per_task=dict(sorted(counts.items())),
        evidence_per_task={t: tuple(sorted(k)) for t, k in sorted(kinds.items())},
        warnings=warnings,
    )


def _as_count(value, name: str, line: int) -> int:
    if isinstance(value, bool):
        raise SchemaError(f"{name} must be an integer", line)
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    raise SchemaError(f"{name} must be an integer, got {value!r}", line)


def _parse_line(obj, line: int) -> CheckpointRecord:
    if not isinstance(obj, dict):
        raise SchemaError("record must be a JSON object", line)
    keys = frozenset(obj)
    if keys not in (_NLL_KEYS, _COUNT_KEYS):
        missing = sorted((_NLL_KEYS if "nll" in keys else _COUNT_KEYS) - keys)
        extra = sorted(keys - _NLL_KEYS - _COUNT_KEYS)
        raise SchemaError(f"bad keys (missing {missing}, unexpected {extra})", line)
    for name in ("model_id", "task_id", "question_id"):
        if not isinstance(obj[name], str):
            raise SchemaError(f"{name} must be a string", line)
    kwargs = {
        "model_id": obj["model_id"],
        "task_id": obj["task_id"],
        "question_id": obj["question_id"],
        "n_params": _as_count(obj["n_params"], "n_params", line),
        "n_tokens": _as_count(obj["n_tokens"], "n_tokens", line),
    }
    if "nll" in obj:
        nll = obj["nll"]
        if isinstance(nll, bool) or not isinstance(nll, (int, float)):
            raise SchemaError("nll must be a number", line)
        kwargs["nll"] = float(nll)
    else:
        kwargs["n_attempts"] = _as_count(obj["n_attempts"], "n_attempts", line)
        kwargs["n_correct"] = _as_count(obj["n_correct"], "n_correct", line)
    try:
        return CheckpointRecord(**kwargs)
    except DatasetError as exc:
        raise SchemaError(str(exc), line) from None


def load_checkpoints(source: Union[str, os.PathLike, Iterable[str], io.TextIOBase]) -> CheckpointSet:
    """Parse and validate a JSONL stream (path, open file, or iterable of lines).

    Raises:
        SchemaError: naming the 1-based line of the first bad record.
        DatasetError: on empty input, duplicate triples, or a model whose
            ``(n_params, n_tokens)`` differs between records.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            return load_checkpoints(fh)
    records = []
    for i, raw in enumerate(source, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON ({exc.msg})", i) from None
        records.append(_parse_line(obj, i))
    if not records:
        raise DatasetError("empty input")
    return CheckpointSet(records)


def dump_checkpoints(cset: CheckpointSet) -> str:
    return "".join(json.dumps(r.to_json()) + "\n" for r in cset.records)


def save_checkpoints(cset: CheckpointSet, path: Union[str, os.PathLike]) -> None:
    Path(path).write_text(dump_checkpoints(cset), encoding="utf-8")


def probabilities_from_nll(nll, p_floor: float = P_FLOOR) -> np.ndarray:
    return np.clip(np.exp(-np.asarray(nll, dtype=float)), p_floor, 1.0)


def derive_probability(record: CheckpointRecord, p_floor: float = P_FLOOR) -> float:
    """Per-question success probability ``exp(-nll)`` clamped to ``[p_floor, 1]``."""
    if record.nll is None:
        raise DatasetError("derive_probability needs NLL evidence")
    return min(1.0, max(p_floor, math.exp(-record.nll)))


@dataclass(frozen=True)
class IsoflopGroup:
    c_train: float
    members: tuple[str, ...]
    nll_variance: Mapping[str, float] = field(default_factory=dict)
    index: int = 0


def isoflop_bucket(c_train: float, width: float = DEFAULT_ISOFLOP_WIDTH) -> int:
    """Index of the multiplicative lattice cell ``width**i`` nearest ``c_train``."""
    return int(round(math.log(c_train) / math.log(width)))


def _variance(values: list[float]) -> float:
    arr = np.asarray(values, dtype=float)
    return float(np.mean((arr - arr.mean()) ** 2))


def group_isoflop(cset: CheckpointSet, width: float = DEFAULT_ISOFLOP_WIDTH) -> list[IsoflopGroup]:
    """Bucket checkpoints by ``log(6ND)`` on a lattice of spacing ``log(width)``.

    ``nll_variance`` maps each NLL-evidence task (and ``"macro"``) to the
    population variance, across members, of each member's mean question NLL.
    The representative ``c_train`` is the geometric mean of the members'.
    """
    if width <= 1:
        raise ValueError("width must be > 1")
    buckets: dict[int, list[Checkpoint]] = defaultdict(list)
    for c in cset.checkpoints:
        buckets[isoflop_bucket(c.c_train, width)].append(c)
    per_task = {t: cset.mean_nll(t) for t in cset.tasks}
    per_task["macro"] = cset.macro_mean_nll()
    groups = []
    for idx in sorted(buckets):
        members = buckets[idx]
        ids = tuple(c.model_id for c in members)
        variances = {}
        for t, means in per_task.items():
            vals = [means[m] for m in ids if m in means]
            if vals:
                variances[t] = _variance(vals)
        rep = math.exp(math.fsum(math.log(c.c_train) for c in members) / len(members))
        groups.append(IsoflopGroup(c_train=rep, members=ids, nll_variance=variances, index=idx))
    return groups


def macro_average(per_task_values: Mapping[str, float]) -> float:
    """Unweighted mean over tasks, correctly rounded from exact rational arithmetic."""
    if not per_task_values:
        raise ValueError("macro_average needs at least one task")
    total = sum(Fraction(float(v)) for v in per_task_values.values())
    return float(total / len(per_task_values))
