"""Pure-Python negotiation kernels.

Reference implementation of the hot per-issue math. `agorasim._speedups` is
the compiled twin; both must produce bit-identical doubles, so any change to
an expression here has to be mirrored there verbatim.
"""

from __future__ import annotations

BACKEND = "python"


def time_fraction(t: float, t_max: float, k: float, beta: float) -> float:
    """Concession fraction f(t) = k + (1-k) * (min(t, t_max)/t_max)^(1/beta).

    A zero deadline means immediate full concession (returns 1.0). Result is
    clamped to [0, 1]; f(0) == k exactly and f(t_max) == 1 within rounding.
    """
    if t_max <= 0.0:
        return 1.0
    x = t if t < t_max else t_max
    if x < 0.0:
        x = 0.0
    f = k + (1.0 - k) * (x / t_max) ** (1.0 / beta)
    if f < 0.0:
        return 0.0
    if f > 1.0:
        return 1.0
    return f


def offer_value(vmin: float, vmax: float, f: float, ascending: bool) -> float:
    """Offered value at concession fraction f, clamped into [vmin, vmax]."""
    if ascending:
        v = vmin + f * (vmax - vmin)
    else:
        v = vmin + (1.0 - f) * (vmax - vmin)
    if v < vmin:
        return vmin
    if v > vmax:
        return vmax
    return v


def issue_score(vmin: float, vmax: float, offered: float, buyer: bool) -> float:
    """Normalized score in [0, 1]; buyer prefers low values, seller high."""
    if buyer:
        s = (vmax - offered) / (vmax - vmin)
    else:
        s = (offered - vmin) / (vmax - vmin)
    if s < 0.0:
        return 0.0
    if s > 1.0:
        return 1.0
    return s


def weighted_utility(offers, mins, maxs, weights, buyer: bool) -> float:
    """Weighted sum of per-issue scores over parallel sequences."""
    total = 0.0
    for i in range(len(offers)):
        total += weights[i] * issue_score(mins[i], maxs[i], offers[i], buyer)
    if total < 0.0:
        return 0.0
    if total > 1.0:
        return 1.0
    return total


def concession_ratio(o_minus2: float, o_minus1: float, o_now: float) -> float:
    """Ratio of consecutive offer deltas; NaN when the previous step is flat."""
    denom = o_minus1 - o_minus2
    if denom == 0.0:
        return float("nan")
    return (o_now - o_minus1) / denom


def piecewise_level(xs, ys, t: float) -> float:
    """Evaluate a piecewise-linear schedule at t, clamped to its domain."""
    n = len(xs)
    if t <= xs[0]:
        return ys[0]
    if t >= xs[n - 1]:
        return ys[n - 1]
    for i in range(1, n):
        if t <= xs[i]:
            x0 = xs[i - 1]
            x1 = xs[i]
            y0 = ys[i - 1]
            y1 = ys[i]
            if x1 == x0:
                return y1
            return y0 + (y1 - y0) * (t - x0) / (x1 - x0)
    return ys[n - 1]


def threshold_crossing(xs, ys, threshold: float, t_max: float) -> float:
    """Earliest t in [0, t_max] where the schedule is at or below threshold.

    Returns t_max when the level stays above threshold for the whole window.
    Beyond the last breakpoint the level is held constant. Segments are
    linear, so the first crossing is always at a breakpoint or inside a
    descending segment.
    """
    prev_t = 0.0
    prev_y = piecewise_level(xs, ys, 0.0)
    if prev_y <= threshold:
        return 0.0
    n = len(xs)
    for i in range(n):
        x = xs[i]
        if x <= 0.0:
            continue
        y = ys[i]
        if y <= threshold:
            cx = prev_t + (prev_y - threshold) * (x - prev_t) / (prev_y - y)
            return cx if cx < t_max else t_max
        prev_t = x
        prev_y = y
        if prev_t >= t_max:
            break
    return t_max
