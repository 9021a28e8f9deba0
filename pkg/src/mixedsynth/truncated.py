"""Truncated normal sampling: univariate (vectorized) and coordinate-Gibbs
for box/orthant-constrained multivariate normals.

The univariate sampler inverts the normal CDF on the truncation interval,
switching to a shifted-exponential rejection step (Robert-style) whenever the
whole interval lies beyond 6 standard deviations, where the inverse-CDF path
loses precision.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = ["truncnorm_sample", "tmvn_gibbs"]

_TAIL = 6.0


def _tail_reject(rng: np.random.Generator, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Standard normal restricted to [a, b] with a >= _TAIL (right tail)."""
    lam = 0.5 * (a + np.sqrt(a * a + 4.0))
    out = np.empty_like(a)
    pending = np.arange(a.size)
    while pending.size:
        aa = a[pending]
        x = aa + rng.exponential(size=pending.size) / lam[pending]
        logu = np.log(rng.uniform(size=pending.size))
        ok = (x <= b[pending]) & (logu <= -0.5 * (x - lam[pending]) ** 2)
        out[pending[ok]] = x[ok]
        pending = pending[~ok]
    return out


def truncnorm_sample(rng: np.random.Generator, mu, sigma, lo, hi) -> np.ndarray:
    """Draw from N(mu, sigma^2) restricted to [lo, hi], elementwise.

    All arguments broadcast; lo/hi may be -inf/+inf.  Zero-width intervals
    return their endpoint.
    """
    mu, sigma, lo, hi = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.float64) for v in (mu, sigma, lo, hi))
    )
    a = (lo - mu) / sigma
    b = (hi - mu) / sigma
    if np.any(a > b):
        raise ValueError("truncnorm_sample: lower bound exceeds upper bound")
    # mirror right-half intervals so the hard tail is always the left one
    flip = a > 0
    a2 = np.where(flip, -b, a)
    b2 = np.where(flip, -a, b)
    x = np.empty(a2.shape)
    tail = b2 < -_TAIL
    if np.any(tail):
        x[tail] = -_tail_reject(rng, -b2[tail], -a2[tail])
    main = ~tail
    if np.any(main):
        fa = ndtr(a2[main])
        fb = ndtr(b2[main])
        u = rng.uniform(size=int(main.sum()))
        x[main] = ndtri(fa + u * (fb - fa))
    x = np.where(flip, -x, x)
    x = np.clip(x, a, b)  # guard ndtri round-off at interval edges
    return mu + sigma * x


def tmvn_gibbs(
    rng: np.random.Generator,
    mean: np.ndarray,
    cov: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    start: np.ndarray | None = None,
    warm: int = 50,
    sweeps: int = 50,
) -> np.ndarray:
    """Coordinate Gibbs for N(mean, cov) restricted to the box [lo, hi].

    Runs ``warm`` discarded sweeps from ``start`` (default: midpoint of the
    box clamped to +-1), then returns one state per kept sweep, shape
    (sweeps, d).  Coordinates are visited in ascending order.
    """
    mean = np.asarray(mean, dtype=np.float64)
    d = mean.size
    prec = np.linalg.inv(np.asarray(cov, dtype=np.float64))
    cond_sd = 1.0 / np.sqrt(np.diag(prec))
    # w[j] = -prec[j, -j] / prec[j, j], used for conditional means
    w = -prec / np.diag(prec)[:, None]
    np.fill_diagonal(w, 0.0)
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), (d,))
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), (d,))
    if start is None:
        z = np.clip(mean, lo, hi)
        z = np.clip(z, np.where(np.isfinite(lo), lo, -1.0), np.where(np.isfinite(hi), hi, 1.0))
        unbounded = ~np.isfinite(lo) & ~np.isfinite(hi)
        z = np.where(unbounded, mean, z)
        # nudge off the boundary
        width_lo = np.where(np.isfinite(lo), lo + 1e-3, -np.inf)
        width_hi = np.where(np.isfinite(hi), hi - 1e-3, np.inf)
        ok = width_lo <= width_hi
        z = np.where(ok, np.clip(z, width_lo, width_hi), 0.5 * (lo + hi))
    else:
        z = np.array(start, dtype=np.float64)
    out = np.empty((sweeps, d))
    for it in range(warm + sweeps):
        for j in range(d):
            m = mean[j] + w[j] @ (z - mean)
            z[j] = truncnorm_sample(rng, m, cond_sd[j], lo[j], hi[j])[()]
        if it >= warm:
            out[it - warm] = z
    return out
