# cython: language_level=3, boundscheck=False, cdivision=False
"""Compiled negotiation kernels.

Twin of agorasim._kernels_py; expressions are kept verbatim so both backends
produce bit-identical doubles (the test suite asserts it).
"""

from libc.math cimport pow, NAN

BACKEND = "cython"


cpdef double time_fraction(double t, double t_max, double k, double beta):
    cdef double x, f
    if t_max <= 0.0:
        return 1.0
    x = t if t < t_max else t_max
    if x < 0.0:
        x = 0.0
    f = k + (1.0 - k) * pow(x / t_max, 1.0 / beta)
    if f < 0.0:
        return 0.0
    if f > 1.0:
        return 1.0
    return f


cpdef double offer_value(double vmin, double vmax, double f, bint ascending):
    cdef double v
    if ascending:
        v = vmin + f * (vmax - vmin)
    else:
        v = vmin + (1.0 - f) * (vmax - vmin)
    if v < vmin:
        return vmin
    if v > vmax:
        return vmax
    return v


cpdef double issue_score(double vmin, double vmax, double offered, bint buyer):
    cdef double s
    if buyer:
        s = (vmax - offered) / (vmax - vmin)
    else:
        s = (offered - vmin) / (vmax - vmin)
    if s < 0.0:
        return 0.0
    if s > 1.0:
        return 1.0
    return s


cpdef double weighted_utility(offers, mins, maxs, weights, bint buyer):
    cdef double total = 0.0
    cdef Py_ssize_t i, n = len(offers)
    for i in range(n):
        total += <double>weights[i] * issue_score(
            <double>mins[i], <double>maxs[i], <double>offers[i], buyer
        )
    if total < 0.0:
        return 0.0
    if total > 1.0:
        return 1.0
    return total


cpdef double concession_ratio(double o_minus2, double o_minus1, double o_now):
    cdef double denom = o_minus1 - o_minus2
    if denom == 0.0:
        return NAN
    return (o_now - o_minus1) / denom


cpdef double piecewise_level(xs, ys, double t):
    cdef Py_ssize_t i, n = len(xs)
    cdef double x0, x1, y0, y1
    if t <= <double>xs[0]:
        return <double>ys[0]
    if t >= <double>xs[n - 1]:
        return <double>ys[n - 1]
    for i in range(1, n):
        if t <= <double>xs[i]:
            x0 = <double>xs[i - 1]
            x1 = <double>xs[i]
            y0 = <double>ys[i - 1]
            y1 = <double>ys[i]
            if x1 == x0:
                return y1
            return y0 + (y1 - y0) * (t - x0) / (x1 - x0)
    return <double>ys[n - 1]


cpdef double threshold_crossing(xs, ys, double threshold, double t_max):
    cdef double prev_t = 0.0
    cdef double prev_y = piecewise_level(xs, ys, 0.0)
    cdef double x, y, cx
    cdef Py_ssize_t i, n = len(xs)
    if prev_y <= threshold:
        return 0.0
    for i in range(n):
        x = <double>xs[i]
        if x <= 0.0:
            continue
        y = <double>ys[i]
        if y <= threshold:
            cx = prev_t + (prev_y - threshold) * (x - prev_t) / (prev_y - y)
            return cx if cx < t_max else t_max
        prev_t = x
        prev_y = y
        if prev_t >= t_max:
            break
    return t_max
