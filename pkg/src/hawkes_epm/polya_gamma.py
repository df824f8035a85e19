"""Polya-Gamma moments and an approximate moment-matched sampler.

PG(b, c) is the infinite convolution

    omega = 1 / (2 pi^2) * sum_k g_k / ((k - 1/2)^2 + c^2 / (4 pi^2)),  g_k ~ Gamma(b, 1).

The sampler keeps the first ``n_terms`` summands exactly and replaces the
remainder by a single gamma variable whose mean and variance equal those of
the truncated tail, so the first two moments of the draw are exact.
"""

import numpy as np

_SMALL_C = 1e-4


def _check_b(b):
    b = np.asarray(b, dtype=np.float64)
    if np.any(~(b > 0)):
        raise ValueError("Polya-Gamma shape b must be positive")
    return b


def pg_expectation(b, c):
    """E[omega] = b / (2c) tanh(c / 2), with limit b / 4 at c = 0."""
    b = _check_b(b)
    c = np.abs(np.asarray(c, dtype=np.float64))
    b, c = np.broadcast_arrays(b, c)
    out = np.empty(b.shape)
    small = c < _SMALL_C
    cs = c[small]
    # tanh(x/2)/(2x) = 1/4 - x^2/48 + x^4/480 - ...
    out[small] = b[small] * (0.25 - cs ** 2 / 48.0 + cs ** 4 / 480.0)
    cl = c[~small]
    out[~small] = b[~small] * np.tanh(cl / 2.0) / (2.0 * cl)
    return float(out) if out.ndim == 0 else out


def pg_variance(b, c):
    """Var[omega] = b / (4 c^3) (sinh c - c) / cosh^2(c / 2); b / 24 at c = 0."""
    b = _check_b(b)
    c = np.abs(np.asarray(c, dtype=np.float64))
    b, c = np.broadcast_arrays(b, c)
    out = np.empty(b.shape)
    small = c < 1e-2
    cs = c[small]
    out[small] = b[small] * (1.0 / 24.0 - cs ** 2 / 120.0 + 17.0 * cs ** 4 / 13440.0)
    cl = c[~small]
    # (sinh c - c) / cosh^2(c/2) written to avoid overflow for large c
    ratio = np.where(cl < 40.0,
                     (np.sinh(np.minimum(cl, 40.0)) - cl) / np.cosh(np.minimum(cl, 40.0) / 2.0) ** 2,
                     2.0)
    out[~small] = b[~small] * ratio / (4.0 * cl ** 3)
    return float(out) if out.ndim == 0 else out


def sample_pg(b, c, rng, n_terms=4):
    """Approximate PG(b, c) draws with exact first two moments.

    ``b`` and ``c`` broadcast; the output has their broadcast shape.
    """
    b = _check_b(b)
    c = np.asarray(c, dtype=np.float64)
    b, c = np.broadcast_arrays(b, c)
    shape = b.shape
    b = b.reshape(-1)
    c = c.reshape(-1)
    k = np.arange(1, n_terms + 1, dtype=np.float64)
    denom = (k[None, :] - 0.5) ** 2 + (c[:, None] / (2 * np.pi)) ** 2
    head = rng.gamma(np.broadcast_to(b[:, None], denom.shape)) / denom
    head = head.sum(axis=1) / (2 * np.pi ** 2)
    head_mean = b * np.sum(1.0 / denom, axis=1) / (2 * np.pi ** 2)
    head_var = b * np.sum(1.0 / denom ** 2, axis=1) / (4 * np.pi ** 4)
    tail_mean = np.maximum(pg_expectation(b, c) - head_mean, 0.0)
    tail_var = np.maximum(pg_variance(b, c) - head_var, 0.0)
    tail = np.zeros_like(tail_mean)
    ok = (tail_mean > 0) & (tail_var > 0)
    tail[ok] = rng.gamma(tail_mean[ok] ** 2 / tail_var[ok], tail_var[ok] / tail_mean[ok])
    out = head + tail
    return float(out[0]) if shape == () else out.reshape(shape)
