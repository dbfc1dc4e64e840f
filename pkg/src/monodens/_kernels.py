"""Hot numeric kernels: PAVA, multiplier solve, and the per-step OG loop.

Compiled with numba when available; the plain-Python definitions are the
fallback and the reference semantics.
"""

from __future__ import annotations

import numpy as np

try:  # pragma: no cover - exercised implicitly
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


@njit(cache=True)
def pava_decreasing(y, w):
    """Weighted antitonic (non-increasing) regression of y with weights w.

    Pool-adjacent-violators with merge-left-then-recheck-backwards order;
    pooled value is the weighted mean, which for y = counts/width and
    w = width equals pooled_count / pooled_width.
    """
    m = y.shape[0]
    vals = np.empty(m)
    wts = np.empty(m)
    lens = np.empty(m, dtype=np.int64)
    k = -1
    for i in range(m):
        k += 1
        vals[k] = y[i]
        wts[k] = w[i]
        lens[k] = 1
        while k > 0 and vals[k - 1] < vals[k]:
            tot = wts[k - 1] + wts[k]
            vals[k - 1] = (wts[k - 1] * vals[k - 1] + wts[k] * vals[k]) / tot
            wts[k - 1] = tot
            lens[k - 1] += lens[k]
            k -= 1
    out = np.empty(m)
    pos = 0
    for j in range(k + 1):
        for _ in range(lens[j]):
            out[pos] = vals[j]
            pos += 1
    return out


@njit(cache=True)
def clipped_mass(v, widths, a, b, lam):
    s = 0.0
    for j in range(v.shape[0]):
        h = v[j] / lam
        if h < a:
            h = a
        elif h > b:
            h = b
        s += h * widths[j]
    return s


@njit(cache=True)
def solve_box_heights(v, widths, a, b, lam_lo, lam_hi, tol, max_iter):
    """Heights clip(v/lam, a, b) with lam bisected so the mass is 1.

    The map lam -> mass is continuous and non-increasing; the bracket is
    expanded first if needed. When even lam -> 0 cannot reach mass 1 (all
    occupied pools clipped at b, empty pools pinned at a), the multiplier is
    0 and the empty trailing pools are free: they absorb the slack exactly.
    Returns (heights, lam).
    """
    m = v.shape[0]
    if b - a <= 1e-15:
        return np.full(m, a), 1.0
    occupied_mass = 0.0
    free_width = 0.0
    for j in range(m):
        if v[j] > 0.0:
            occupied_mass += b * widths[j]
        else:
            free_width += widths[j]
    if occupied_mass + a * free_width < 1.0 and free_width > 0.0:
        h = np.empty(m)
        fill = (1.0 - occupied_mass) / free_width
        for j in range(m):
            h[j] = b if v[j] > 0.0 else fill
        return h, 0.0
    while clipped_mass(v, widths, a, b, lam_lo) < 1.0 and lam_lo > 1e-280:
        lam_lo *= 0.125
    while clipped_mass(v, widths, a, b, lam_hi) > 1.0 and lam_hi < 1e280:
        lam_hi *= 8.0
    lam = 0.5 * (lam_lo + lam_hi)
    for _ in range(max_iter):
        lam = 0.5 * (lam_lo + lam_hi)
        s = clipped_mass(v, widths, a, b, lam)
        if abs(s - 1.0) <= tol:
            break
        if s > 1.0:
            lam_lo = lam
        else:
            lam_hi = lam
    h = np.empty(v.shape[0])
    mass = 0.0
    for j in range(v.shape[0]):
        x = v[j] / lam
        if x < a:
            x = a
        elif x > b:
            x = b
        h[j] = x
        mass += x * widths[j]
    # exact renormalization; the residual clip is within float rounding
    for j in range(h.shape[0]):
        x = h[j] / mass
        if x < a:
            x = a
        elif x > b:
            x = b
        h[j] = x
    return h, lam


@njit(cache=True)
def constrained_heights(counts, widths, a, b, lam_guess):
    """Constrained monotone MLE heights for cells (counts, widths)."""
    y = counts / widths
    v = pava_decreasing(y, widths)
    if lam_guess <= 0.0:
        lam_guess = 1.0
    lam_lo = lam_guess / 4.0
    lam_hi = lam_guess * 4.0
    h, lam = solve_box_heights(v, widths, a, b, lam_lo, lam_hi, 1e-12, 200)
    return h, lam


@njit(cache=True)
def floored_unconstrained_heights(counts, widths, total, floor):
    """Unconstrained Grenander heights, clipped below at floor, renormalized."""
    y = counts / widths
    v = pava_decreasing(y, widths)
    h = v / total
    mass = 0.0
    for j in range(h.shape[0]):
        if h[j] < floor:
            h[j] = floor
        mass += h[j] * widths[j]
    for j in range(h.shape[0]):
        h[j] /= mass
    return h


@njit(cache=True)
def hist_pdf_scalar(breaks, heights, x):
    """Half-open cell evaluation; x == 1 returns the last height."""
    m = heights.shape[0]
    lo, hi = 0, m
    while lo < hi:
        mid = (lo + hi) // 2
        if breaks[mid + 1] <= x:
            lo = mid + 1
        else:
            hi = mid
    if lo >= m:
        lo = m - 1
    return heights[lo]


# true-density variant codes for in-kernel CDF evaluation
Q_UNIFORM = 0
Q_LINEAR = 1
Q_QUADRATIC = 2
Q_HISTOGRAM = 3  # params = [m+1 breakpoints..., m heights...]


@njit(cache=True)
def q_cdf(code, params, x):
    if code == Q_LINEAR:
        d0 = params[0]
        d1 = params[1]
        return d1 * x - 0.5 * (d1 - d0) * x * x
    if code == Q_QUADRATIC:
        om = 1.0 - x
        return 1.0 - om * om * om
    if code == Q_HISTOGRAM:
        m = (params.shape[0] - 1) // 2
        lo, hi = 0, m
        while lo < hi:
            mid = (lo + hi) // 2
            if params[mid + 1] <= x:
                lo = mid + 1
            else:
                hi = mid
        if lo >= m:
            lo = m - 1
        c = 0.0
        for i in range(lo):
            c += params[m + 1 + i] * (params[i + 1] - params[i])
        c += params[m + 1 + lo] * (x - params[lo])
        return c
    return x


@njit(cache=True)
def kl_q_to_hist(code, params, qlogq, breaks, heights):
    """Exact KL(q || histogram) via cell masses of q; +inf on zero cells."""
    total = qlogq
    prev_cdf = 0.0
    for j in range(heights.shape[0]):
        c = q_cdf(code, params, breaks[j + 1])
        mass = c - prev_cdf
        prev_cdf = c
        if mass > 0.0:
            if heights[j] <= 0.0:
                return np.inf
            total -= mass * np.log(heights[j])
    return total


@njit(cache=True)
def run_og_stream(xs, a, b, use_box, qcode, qparams, qlogq, want_kl):
    """Per-step OG loop: predict, record loss (and KL), insert, refit.

    use_box selects the constrained solver (finite b); otherwise the
    unconstrained Grenander floored below at a (a may be 0). Returns
    (losses, kls, final_breaks, final_heights).
    """
    n = xs.shape[0]
    losses = np.empty(n)
    kls = np.full(n, np.nan)

    vals = np.empty(n)
    cnts = np.empty(n)
    m = 0

    breaks = np.empty(n + 2)
    heights = np.empty(n + 1)
    breaks[0] = 0.0
    breaks[1] = 1.0
    heights[0] = 1.0
    ncells = 1
    lam = 1.0

    counts_buf = np.empty(n + 1)
    widths_buf = np.empty(n + 1)

    for t in range(n):
        x = xs[t]
        fx = hist_pdf_scalar(breaks[: ncells + 1], heights[:ncells], x)
        losses[t] = -np.log(fx) if fx > 0.0 else np.inf
        if want_kl:
            kls[t] = kl_q_to_hist(qcode, qparams, qlogq, breaks[: ncells + 1], heights[:ncells])

        # insert x into the sorted distinct-value table
        lo, hi = 0, m
        while lo < hi:
            mid = (lo + hi) // 2
            if vals[mid] < x:
                lo = mid + 1
            else:
                hi = mid
        if lo < m and vals[lo] == x:
            cnts[lo] += 1.0
        else:
            for j in range(m, lo, -1):
                vals[j] = vals[j - 1]
                cnts[j] = cnts[j - 1]
            vals[lo] = x
            cnts[lo] = 1.0
            m += 1

        # cells (x_(j-1), x_(j)] plus the empty trailing cell when x_(m) < 1
        ncells = m
        prev = 0.0
        for j in range(m):
            counts_buf[j] = cnts[j]
            widths_buf[j] = vals[j] - prev
            prev = vals[j]
        if prev < 1.0:
            counts_buf[m] = 0.0
            widths_buf[m] = 1.0 - prev
            ncells = m + 1

        total = float(t + 1)
        if use_box:
            h, lam = constrained_heights(counts_buf[:ncells], widths_buf[:ncells], a, b, lam)
        else:
            h = floored_unconstrained_heights(counts_buf[:ncells], widths_buf[:ncells], total, a)

        breaks[0] = 0.0
        for j in range(m):
            breaks[j + 1] = vals[j]
        breaks[ncells] = 1.0
        for j in range(ncells):
            heights[j] = h[j]

    return losses, kls, breaks[: ncells + 1].copy(), heights[:ncells].copy()
