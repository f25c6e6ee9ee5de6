import math

import numpy as np
from scipy.special import gamma, gammainc

# Below this argument the top order comes from a 7-term Taylor series
_TAYLOR_CUTOFF = 1e-2
_TAYLOR_TERMS = 7


def boys_table(m_max: int, x) -> np.ndarray:
    """F_m(x) for m = 0..m_max, shape (m_max + 1,) + x.shape.

    The top order is evaluated from the regularized incomplete gamma function
    (Taylor series near zero), lower orders by downward recursion
    F_m = (2x F_{m+1} + exp(-x)) / (2m + 1).
    """
    if m_max < 0:
        raise ValueError(f"Boys order must be non-negative, got {m_max}")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0):
        raise ValueError("Boys function argument must be non-negative")

    top = np.empty_like(x)
    small = x < _TAYLOR_CUTOFF
    xs = x[small]
    series = np.zeros_like(xs)
    for k in range(_TAYLOR_TERMS):
        series += (-xs) ** k / (math.factorial(k) * (2 * m_max + 2 * k + 1))
    top[small] = series
    xl = x[~small]
    a = m_max + 0.5
    top[~small] = gamma(a) * gammainc(a, xl) / (2.0 * xl ** a)

    table = np.empty((m_max + 1,) + x.shape)
    table[m_max] = top
    decay = np.exp(-x)
    for m in range(m_max - 1, -1, -1):
        table[m] = (2.0 * x * table[m + 1] + decay) / (2 * m + 1)
    return table


def boys(m: int, x):
    """F_m(x) = integral over t in [0, 1] of t^(2m) exp(-x t^2)"""
    values = boys_table(m, x)[m]
    return float(values) if values.ndim == 0 else values
