"""Bounded quasi-Newton minimisation with multi-start restarts.

The local solver is scipy's L-BFGS-B driven by central-difference gradients.
Objectives are plain callables ``f(x) -> float``. An objective may also expose
``f.batch(X) -> values`` evaluating each row of ``X``; the gradient then costs
one vectorised call instead of ``2 * len(x)`` scalar ones.

Restarts are deterministic: all start points are drawn up front from a single
``numpy.random.default_rng(seed)`` stream, so the starts for ``n`` restarts are
a prefix of those for ``n + 1``. Ties between restarts break toward the lowest
index, which keeps parallel execution (``workers > 1``) bit-identical to the
serial path.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize as _sp_optimize

__all__ = [
    "Bounds",
    "OptResult",
    "OptimizationError",
    "GradientError",
    "numerical_gradient",
    "minimize_bounded",
    "multi_start",
    "minimize_scalar",
    "box_sampler",
]

DEFAULT_REL_STEP = 1e-7


class OptimizationError(RuntimeError):
    """Raised when no finite objective value could be produced."""


class GradientError(OptimizationError):
    """The objective failed (raised or went non-finite) while differencing."""


@dataclass(frozen=True)
class Bounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).copy()
        hi = np.asarray(self.upper, dtype=float).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be 1-D and of equal length")
        if np.isnan(lo).any() or np.isnan(hi).any():
            raise ValueError("bounds contain NaN")
        if (lo > hi).any():
            raise ValueError("lower bound exceeds upper bound")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, float]]) -> "Bounds":
        lo, hi = zip(*pairs)
        return cls(np.array(lo, dtype=float), np.array(hi, dtype=float))

    def __len__(self) -> int:
        return len(self.lower)

    def project(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(((x >= self.lower) & (x <= self.upper)).all())

    def as_scipy(self) -> list[tuple[Optional[float], Optional[float]]]:
        return [
            (None if math.isinf(lo) else float(lo), None if math.isinf(hi) else float(hi))
            for lo, hi in zip(self.lower, self.upper)
        ]


@dataclass(frozen=True)
class OptResult:
    x_best: np.ndarray
    f_best: float
    n_restarts_run: int
    converged: bool
    n_evals: int
    restart_index: int = 0


class _Counted:
    """Wraps an objective, counting evaluations and rejecting NaN."""

    def __init__(self, f):
        self.f = f
        self.batch = getattr(f, "batch", None)
        self.n = 0

    def __call__(self, x) -> float:
        self.n += 1
        return float(self.f(x))

    def rows(self, X: np.ndarray) -> np.ndarray:
        self.n += len(X)
        if self.batch is not None:
            return np.asarray(self.batch(X), dtype=float)
        return np.array([float(self.f(row)) for row in X])


def _steps(x: np.ndarray, rel_step: float) -> np.ndarray:
    return rel_step * np.maximum(np.abs(x), 1.0)


def numerical_gradient(f: Callable, x, rel_step: float = DEFAULT_REL_STEP) -> np.ndarray:
    """Central-difference gradient with step ``rel_step * max(|x_i|, 1)``.

    Raises:
        GradientError: if ``f`` raises or returns a non-finite value at any
            perturbed point.
    """
    if rel_step <= 0:
        raise ValueError("rel_step must be positive")
    x = np.asarray(x, dtype=float)
    return _central_gradient(_Counted(f), x, rel_step, bounds=None)


def _central_gradient(
    f: _Counted, x: np.ndarray, rel_step: float, bounds: Optional[Bounds], with_value: bool = False
):
    n = x.size
    h = _steps(x, rel_step)
    up = x + h
    dn = x - h
    if bounds is not None:
        # Inside a box the stencil turns one-sided at an active face.
        bwd = up > bounds.upper
        up = np.where(bwd, x, up)
        dn = np.where((dn < bounds.lower) & ~bwd, x, dn)
    X = np.empty((2 * n + 1, n))
    X[:] = x
    idx = np.arange(n)
    X[idx, idx] = up
    X[n + idx, idx] = dn
    try:
        vals = f.rows(X if with_value else X[: 2 * n])
    except (ArithmeticError, ValueError) as exc:
        raise GradientError(f"objective failed during differencing: {exc}") from exc
    if not np.isfinite(vals[: 2 * n]).all():
        raise GradientError("objective is non-finite at a perturbed point")
    grad = (vals[:n] - vals[n : 2 * n]) / (up - dn)
    if with_value:
        return float(vals[2 * n]), grad
    return grad


def _projected_gradient(g: np.ndarray, x: np.ndarray, bounds: Bounds) -> np.ndarray:
    pg = g.copy()
    at_lo = (x <= bounds.lower) & (g > 0)
    at_hi = (x >= bounds.upper) & (g < 0)
    pg[at_lo | at_hi] = 0.0
    return pg


def minimize_bounded(
    f: Callable,
    x0,
    bounds: Bounds,
    tol: float = 1e-15,
    max_iter: int = 5000,
    rel_step: float = DEFAULT_REL_STEP,
) -> OptResult:
    """Local L-BFGS-B minimisation inside a box.

    ``converged`` is set when the projected-gradient max-norm falls to
    ``tol * (1 + |f_best|)`` or when scipy reports success; otherwise the
    iteration cap was hit or the line search stalled. The returned point is
    projected into the box and ``f_best`` is re-evaluated there, so
    ``f_best == f(x_best)`` exactly. ``f_best <= f(x0)`` always holds.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim != 1 or x0.size != len(bounds):
        raise ValueError("x0 and bounds differ in dimension")
    x0 = bounds.project(x0)
    counted = _Counted(f)
    f0 = counted(x0)
    if not math.isfinite(f0):
        raise OptimizationError("objective is non-finite at the starting point")

    def fun_and_grad(x):
        x = bounds.project(x)
        try:
            fx, g = _central_gradient(counted, x, rel_step, bounds, with_value=True)
        except GradientError:
            fx = math.nan
        if not math.isfinite(fx):
            # Reject the step; L-BFGS-B backtracks on a large value.
            return 1e300, np.zeros_like(x)
        return fx, g

    sp_result = _sp_optimize.minimize(
        fun_and_grad,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds.as_scipy(),
        options={
            "maxiter": int(max_iter),
            "maxfun": max(15000, 4 * int(max_iter)),
            "ftol": tol,
            "gtol": tol,
        },
    )
    x_best = bounds.project(sp_result.x)
    f_best = counted(x_best)
    if not math.isfinite(f_best) or f_best > f0:
        x_best, f_best = x0, f0

    try:
        g = _central_gradient(counted, x_best, rel_step, bounds)
        pg_norm = float(np.max(np.abs(_projected_gradient(g, x_best, bounds)))) if g.size else 0.0
    except GradientError:
        pg_norm = math.inf
    converged = bool(sp_result.success) or pg_norm <= tol * (1.0 + abs(f_best))
    return OptResult(
        x_best=x_best,
        f_best=f_best,
        n_restarts_run=1,
        converged=converged,
        n_evals=counted.n,
    )


def box_sampler(lower: Sequence[float], upper: Sequence[float]) -> Callable:
    """Uniform start sampler over a box (pass log-scale coordinates for scales)."""
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)

    def sample(rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(lo, hi)

    return sample


def _run_one(args) -> Optional[OptResult]:
    f, x0, bounds, tol, max_iter, rel_step = args
    try:
        return minimize_bounded(f, x0, bounds, tol=tol, max_iter=max_iter, rel_step=rel_step)
    except (OptimizationError, ArithmeticError, ValueError):
        return None


def multi_start(
    f: Callable,
    bounds: Bounds,
    init_sampler: Callable[[np.random.Generator], np.ndarray],
    n_restarts: int,
    seed: int = 0,
    *,
    initial_points: Sequence[Sequence[float]] = (),
    tol: float = 1e-15,
    max_iter: int = 5000,
    rel_step: float = DEFAULT_REL_STEP,
    workers: int = 1,
) -> OptResult:
    """Best of ``n_restarts`` bounded minimisations.

    ``initial_points`` (if any) are used as the first starts; the remaining
    ones come from ``init_sampler``. With ``workers > 1`` restarts run in a
    process pool, which requires ``f`` to be picklable.

    Raises:
        OptimizationError: if every restart fails to produce a finite value.
    """
    if n_restarts < 1:
        raise ValueError("n_restarts must be >= 1")
    rng = np.random.default_rng(seed)
    starts = [bounds.project(p) for p in list(initial_points)[:n_restarts]]
    while len(starts) < n_restarts:
        starts.append(bounds.project(init_sampler(rng)))

    jobs = [(f, x0, bounds, tol, max_iter, rel_step) for x0 in starts]
    if workers > 1 and n_restarts > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs, chunksize=max(1, n_restarts // (4 * workers))))
    else:
        results = [_run_one(job) for job in jobs]

    best: Optional[OptResult] = None
    best_idx = -1
    n_evals = 0
    for i, res in enumerate(results):
        if res is None:
            continue
        n_evals += res.n_evals
        if best is None or res.f_best < best.f_best:
            best, best_idx = res, i
    if best is None:
        raise OptimizationError("all restarts failed to produce a finite objective")
    return OptResult(
        x_best=best.x_best,
        f_best=best.f_best,
        n_restarts_run=n_restarts,
        converged=best.converged,
        n_evals=n_evals,
        restart_index=best_idx,
    )


def minimize_scalar(
    f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10
) -> tuple[float, float]:
    """Bounded Brent minimisation on ``[lo, hi]``; endpoints are also checked.

    Raises:
        OptimizationError: if ``f`` is non-finite at any probed point.
    """
    if not lo < hi:
        raise ValueError("minimize_scalar requires lo < hi")

    def checked(x: float) -> float:
        v = float(f(x))
        if not math.isfinite(v):
            raise OptimizationError(f"objective is non-finite at x={x!r}")
        return v

    res = _sp_optimize.minimize_scalar(
        checked,
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": tol * (hi - lo), "maxiter": 10_000},
    )
    candidates = [(float(res.x), checked(float(res.x))), (lo, checked(lo)), (hi, checked(hi))]
    # Prefer the interior solution on ties so a flat tail does not pull to an edge.
    x_best, f_best = candidates[0]
    for x, v in candidates[1:]:
        if v < f_best:
            x_best, f_best = x, v
    return x_best, f_best
