"""Special functions and numerically stable transforms.

Everything here is vectorised over numpy arrays and returns a Python float
when every argument is a scalar. NaN inputs are rejected with
:class:`DomainError`; no in-domain input produces NaN.

``log_gamma`` is evaluated piecewise:

* ``x >= 10``: the Stirling series with ten Bernoulli terms.
* ``1.5 <= x < 10``: downward recurrence into ``[1.5, 2.5)`` followed by the
  Taylor series of ``ln Γ(2 + t)`` about ``t = 0``, whose coefficients are
  ``(-1)^k (ζ(k) - 1) / k``.
* ``x < 1.5``: ``ln Γ(1 + t) = ln Γ(2 + t) - log1p(t)`` with ``t = x - 1`` (or
  ``t = x`` and a trailing ``- ln x`` for ``x < 0.5``).

Both series are written as ``t * P(t)`` so the zeros at ``x = 1`` and ``x = 2``
keep full relative precision.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "DomainError",
    "log_gamma",
    "log_beta",
    "log_pochhammer",
    "log_beta_ratio",
    "scaled_sigmoid",
    "stable_pass_transform",
]

EULER_GAMMA = 0.57721566490153286061
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# (zeta(k) - 1) / k for k = 2..30, evaluated with mpmath at 40 digits.
_ZETA_M1_OVER_K = (
    0.3224670334241132,
    0.0673523010531981,
    0.020580808427784546,
    0.007385551028673986,
    0.0028905103307415234,
    0.001192753911703261,
    0.0005096695247430425,
    0.00022315475845357939,
    9.945751278180853e-05,
    4.492623673813314e-05,
    2.050721277567069e-05,
    9.439488275268397e-06,
    4.374866789907488e-06,
    2.039215753801366e-06,
    9.55141213040742e-07,
    4.492469198764566e-07,
    2.1207184805554665e-07,
    1.0043224823968099e-07,
    4.7698101693639804e-08,
    2.2711094608943164e-08,
    1.0838659214896955e-08,
    5.183475041970047e-09,
    2.4836745438024785e-09,
    1.1921401405860912e-09,
    5.731367241678862e-10,
    2.7595228851242334e-10,
    1.330476437424449e-10,
    6.4229645638381e-11,
    3.1044247747322276e-11,
)

# Highest power first, for np.polyval: P(t) = (1 - γ) + Σ_k (-1)^k c_k t^(k-1).
_LNGAMMA2P_POLY = np.array(
    [(-1.0) ** k * c for k, c in zip(range(30, 1, -1), reversed(_ZETA_M1_OVER_K))]
    + [1.0 - EULER_GAMMA]
)

# B_2n / (2n (2n - 1)) for n = 1..10.
_STIRLING = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
    -3617.0 / 122400.0,
    43867.0 / 244188.0,
    -174611.0 / 125400.0,
)
_STIRLING_POLY = np.array(_STIRLING[::-1])

_STIRLING_MIN = 10.0


class DomainError(ValueError):
    """An argument lies outside the domain of a numerical routine."""


def _as_float_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.isnan(arr).any():
        raise DomainError(f"{name} contains NaN")
    return arr


def _result(arr: np.ndarray, *args):
    if all(np.ndim(a) == 0 for a in args):
        return float(arr)
    return arr


def _lngamma2p(t: np.ndarray) -> np.ndarray:
    """ln Γ(2 + t) for |t| <= 0.5."""
    return t * np.polyval(_LNGAMMA2P_POLY, t)


def _lngamma1p(t: np.ndarray) -> np.ndarray:
    """ln Γ(1 + t) for |t| <= 0.5."""
    return _lngamma2p(t) - np.log1p(t)


def _stirling_tail(x: np.ndarray) -> np.ndarray:
    inv = 1.0 / x
    return inv * np.polyval(_STIRLING_POLY, inv * inv)


def _lngamma_stirling(x: np.ndarray) -> np.ndarray:
    return (x - 0.5) * np.log(x) - x + HALF_LOG_2PI + _stirling_tail(x)


def _lngamma_positive(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    small = x < 0.5
    near1 = (x >= 0.5) & (x < 1.5)
    near2 = (x >= 1.5) & (x < 2.5)
    shift = (x >= 2.5) & (x < _STIRLING_MIN)
    big = x >= _STIRLING_MIN

    xs = x[small]
    out[small] = _lngamma1p(xs) - np.log(xs)
    out[near1] = _lngamma1p(x[near1] - 1.0)
    out[near2] = _lngamma2p(x[near2] - 2.0)

    if shift.any():
        # Γ(x) = Γ(x - n) · Π_{j=1..n} (x - j); each x - 1 is exact here.
        t = x[shift].copy()
        prod = np.ones_like(t)
        active = t >= 2.5
        while active.any():
            t[active] -= 1.0
            prod[active] *= t[active]
            active = t >= 2.5
        out[shift] = _lngamma2p(t - 2.0) + np.log(prod)

    with np.errstate(invalid="ignore"):
        out[big] = _lngamma_stirling(x[big])
    out[np.isposinf(x)] = np.inf
    return out


def log_gamma(x):
    """Natural log of the Gamma function for positive real ``x``.

    Relative error is below 1e-12 on ``[1e-6, 1e12]``.

    Raises:
        DomainError: if any ``x <= 0`` or is NaN.
    """
    arr = _as_float_array(x, "x")
    if (arr <= 0).any():
        raise DomainError("log_gamma requires x > 0")
    out = _lngamma_positive(np.atleast_1d(arr)).reshape(arr.shape)
    return _result(out, x)


def log_beta(a, b):
    """ln B(a, b) = ln Γ(a) + ln Γ(b) - ln Γ(a + b), evaluated without large cancellation."""
    a_arr = _as_float_array(a, "a")
    b_arr = _as_float_array(b, "b")
    if (a_arr <= 0).any() or (b_arr <= 0).any():
        raise DomainError("log_beta requires a > 0 and b > 0")
    a_arr, b_arr = np.broadcast_arrays(a_arr, b_arr)
    flat_a = np.atleast_1d(a_arr).astype(float).ravel()
    flat_b = np.atleast_1d(b_arr).astype(float).ravel()
    lo = np.minimum(flat_a, flat_b)
    hi = np.maximum(flat_a, flat_b)
    # ln Γ(lo) - [ln Γ(hi + lo) - ln Γ(hi)]: the bracket is formed without
    # cancelling two values of size ln Γ(hi).
    out = (_lngamma_positive(lo) - _log_pochhammer(hi, lo)).reshape(a_arr.shape)
    return _result(out, a, b)


def _log_pochhammer(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    k = np.asarray(k, dtype=float)
    low = (x < _STIRLING_MIN) & (k < 1.0)
    if low.any():
        # Small increments: Γ(x + k) / Γ(x) = Γ(x + n + k) / Γ(x + n) / Π_{j<n} (1 + k / (x + j))
        # avoids subtracting two nearly equal ln Γ values.
        xl, kl = x[low], k[low]
        n = np.ceil(_STIRLING_MIN - xl)
        acc = np.zeros_like(xl)
        for j in range(int(n.max())):
            live = n > j
            acc[live] -= np.log1p(kl[live] / (xl[live] + j))
        out = np.empty_like(x)
        out[low] = acc + _log_pochhammer(xl + n, kl)
        if (~low).any():
            out[~low] = _log_pochhammer(x[~low], k[~low])
        return out
    out = np.empty_like(x)
    stir = x >= _STIRLING_MIN
    if stir.any():
        xs, ks = x[stir], k[stir]
        xk = xs + ks
        # Stirling difference rearranged so nothing of size ln Γ(x) cancels.
        out[stir] = (
            (xs - 0.5) * np.log1p(ks / xs)
            + ks * (np.log(xk) - 1.0)
            - _stirling_tail_step(xs, ks)
        )
    rest = ~stir
    if rest.any():
        xr = x[rest]
        out[rest] = _lngamma_positive(xr + k[rest]) - _lngamma_positive(xr)
    return out


def log_pochhammer(x, k):
    """ln Γ(x + k) - ln Γ(x) for x > 0, k >= 0, without large cancellation."""
    x_arr = _as_float_array(x, "x")
    k_arr = _as_float_array(k, "k")
    if (x_arr <= 0).any() or (k_arr < 0).any():
        raise DomainError("log_pochhammer requires x > 0 and k >= 0")
    x_arr, k_arr = np.broadcast_arrays(x_arr, k_arr)
    shape = x_arr.shape
    out = _log_pochhammer(
        np.atleast_1d(x_arr).astype(float).ravel(),
        np.atleast_1d(k_arr).astype(float).ravel(),
    ).reshape(shape)
    return _result(out, x, k)


def log_beta_ratio(a, b, k):
    """ln B(a, b + k) - ln B(a, b), the log of E[(1 - p)^k] for p ~ Beta(a, b)."""
    a_arr = _as_float_array(a, "a")
    b_arr = _as_float_array(b, "b")
    k_arr = _as_float_array(k, "k")
    if (a_arr <= 0).any() or (b_arr <= 0).any() or (k_arr < 0).any():
        raise DomainError("log_beta_ratio requires a > 0, b > 0, k >= 0")
    a_arr, b_arr, k_arr = np.broadcast_arrays(a_arr, b_arr, k_arr)
    shape = a_arr.shape
    fa = np.atleast_1d(a_arr).astype(float).ravel()
    fb = np.atleast_1d(b_arr).astype(float).ravel()
    fk = np.atleast_1d(k_arr).astype(float).ravel()
    return _result(np.minimum(_log_beta_ratio(fa, fb, fk), 0.0).reshape(shape), a, b, k)


_RATIO_SUM_MAX = 64

# log1p(u) - u = u^2 * Q(u) with Q(u) = Σ_{j>=2} (-1)^(j+1) u^(j-2) / j, for |u| < 0.1.
_LOG1P_MINUS_U_POLY = np.array([(-1.0) ** (j + 1) / j for j in range(22, 1, -1)])


def _log1p_minus_u(u: np.ndarray) -> np.ndarray:
    small = u < 0.1
    out = np.empty_like(u)
    us = u[small]
    out[small] = us * us * np.polyval(_LOG1P_MINUS_U_POLY, us)
    out[~small] = np.log1p(u[~small]) - u[~small]
    return out


def _stirling_tail_step(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """``T(x) - T(x + h)`` term by term, so a small ``h`` keeps full relative precision."""
    shrink = np.log1p(h / x)
    out = np.zeros_like(x)
    for n, c in enumerate(_STIRLING):
        m = 2 * n + 1
        out += c * x ** (-m) * -np.expm1(-m * shrink)
    return out


def _log_beta_ratio_large_b(a: np.ndarray, b: np.ndarray, k: np.ndarray) -> np.ndarray:
    # Stirling expansion of ln Γ(b+k) - ln Γ(a+b+k) - ln Γ(b) + ln Γ(a+b) for
    # b >= 10, arranged so each term is accurate by itself:
    #   -a log1p(k / (a+b)) + g(b) - g(b+k) + log1p(-a k / ((b+k)(a+b))) / 2 + ΔT
    # with g(x) = x (log1p(a/x) - a/x) and ΔT the Stirling tail differences.
    bk = b + k
    g_b = b * _log1p_minus_u(a / b)
    g_bk = bk * _log1p_minus_u(a / bk)
    tail = _stirling_tail_step(bk, a) - _stirling_tail_step(b, a)
    return (
        -a * np.log1p(k / (a + b))
        + (g_b - g_bk)
        + 0.5 * np.log1p(-a * k / (bk * (a + b)))
        + tail
    )


def _log_beta_ratio(a: np.ndarray, b: np.ndarray, k: np.ndarray) -> np.ndarray:
    big = b >= _STIRLING_MIN
    if big.any():
        # The ratio is symmetric in a and k; the expansion cancels by a factor
        # of about (first / second), so the smaller one goes first.
        lo = np.minimum(a[big], k[big])
        hi = np.maximum(a[big], k[big])
        out = np.empty_like(k)
        out[big] = _log_beta_ratio_large_b(lo, b[big], hi)
        if (~big).any():
            out[~big] = _log_beta_ratio_small_b(a[~big], b[~big], k[~big])
        return out
    return _log_beta_ratio_small_b(a, b, k)


def _log_beta_ratio_small_b(a: np.ndarray, b: np.ndarray, k: np.ndarray) -> np.ndarray:
    # For k = m + f with m <= 64 the integer part is the exact product
    # Π_j (b + f + j) / (a + b + f + j), summed as log1p terms.
    m = np.floor(k)
    small = m <= _RATIO_SUM_MAX
    f = np.where(small, k - m, k)
    bf = b + f
    # The remaining ratio is a difference of two Pochhammer terms, split
    # either as O(a ln b) terms in a or O(f ln b) terms in f, whichever is
    # smaller, so nothing of size k ln k cancels.
    out = np.zeros_like(k)
    by_a = (f > 0) & (a <= f)
    by_f = (f > 0) & (a > f)
    if by_a.any():
        out[by_a] = _log_pochhammer(b[by_a], a[by_a]) - _log_pochhammer(bf[by_a], a[by_a])
    if by_f.any():
        out[by_f] = _log_pochhammer(b[by_f], f[by_f]) - _log_pochhammer(a[by_f] + b[by_f], f[by_f])
    if small.any():
        ms = m[small]
        a_s, base = a[small], a[small] + bf[small]
        bf_s = bf[small]
        acc = np.zeros_like(ms)
        for j in range(int(ms.max()) if ms.size else 0):
            live = ms > j
            den = base[live] + j
            r = a_s[live] / den
            with np.errstate(divide="ignore"):
                acc[live] += np.where(r < 0.5, np.log1p(-r), np.log((bf_s[live] + j) / den))
        out[small] += acc
    return out


def scaled_sigmoid(theta0, theta1, theta2, loss):
    """``theta2 / (1 + exp(theta1 * (loss - theta0)))``, saturating instead of overflowing."""
    loss_arr = _as_float_array(loss, "loss")
    for name, v in (("theta0", theta0), ("theta1", theta1), ("theta2", theta2)):
        if math.isnan(v):
            raise DomainError(f"{name} is NaN")
    if not 0.0 < theta2 <= 1.0:
        raise DomainError("theta2 must lie in (0, 1]")
    z = theta1 * (loss_arr - theta0)
    e = np.exp(-np.abs(z))
    out = np.where(z > 0, theta2 * e / (1.0 + e), theta2 / (1.0 + e))
    return _result(out, loss)


def stable_pass_transform(p, k):
    """Return ``(pass, neg_log_pass)`` with ``pass = 1 - (1 - p)^k``.

    Evaluated as ``-expm1(k * log1p(-p))``. ``p = 0`` gives ``(0, inf)``;
    callers that average ``neg_log_pass`` must clamp ``p`` first.
    """
    p_arr = _as_float_array(p, "p")
    k_arr = _as_float_array(k, "k")
    if ((p_arr < 0) | (p_arr > 1)).any():
        raise DomainError("p must lie in [0, 1]")
    if (k_arr < 1).any():
        raise DomainError("k must be >= 1")
    with np.errstate(divide="ignore"):
        log_fail = k_arr * np.log1p(-p_arr)
        pass_ = -np.expm1(log_fail)
        # -log(1 - q) is accurate via log1p when the miss probability q is small.
        neg_log = np.where(
            log_fail < -math.log(2.0),
            -np.log1p(-np.exp(log_fail)),
            -np.log(pass_),
        )
    neg_log = np.where(pass_ == 0.0, np.inf, neg_log)
    neg_log = np.maximum(neg_log, 0.0)
    return _result(pass_, p, k), _result(neg_log, p, k)
