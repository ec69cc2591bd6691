"""Fast standard normal CDF for compiled inner loops.

Piecewise degree-5 Taylor expansions on cells of width 1/32 over [-9, 9],
saturating outside.  Absolute error is below 1e-13 everywhere, well under the
statistical resolution of any network simulation.  Derivatives of Phi are
``Phi^(k+1)(x) = (-1)^k He_k(x) phi(x)`` with ``He_k`` the probabilists'
Hermite polynomials.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np
from scipy.special import ndtr

_HALF_WIDTH = 9.0
_CELLS_PER_UNIT = 32.0


def _build_table() -> np.ndarray:
    h = 1.0 / _CELLS_PER_UNIT
    n = int(round(2 * _HALF_WIDTH * _CELLS_PER_UNIT))
    xc = -_HALF_WIDTH + h * (np.arange(n) + 0.5)
    phi = np.exp(-0.5 * xc * xc) / math.sqrt(2 * math.pi)
    he = [np.ones_like(xc), xc]
    for k in range(2, 5):
        he.append(xc * he[-1] - (k - 1) * he[-2])
    cols = [ndtr(xc)]
    for k in range(1, 6):
        cols.append((-1) ** (k - 1) * he[k - 1] * phi / math.factorial(k))
    return np.ascontiguousarray(np.stack(cols, axis=1))


PHI_TABLE = _build_table()


@nb.njit(inline="always", cache=True)
def phi_fast(x, tab):
    if x <= -9.0:
        return 0.0
    if x >= 9.0:
        return 1.0
    y = (x + 9.0) * 32.0
    k = int(y)
    if k >= tab.shape[0]:
        k = tab.shape[0] - 1
    u = (y - k - 0.5) * 0.03125
    c = tab[k]
    return c[0] + u * (c[1] + u * (c[2] + u * (c[3] + u * (c[4] + u * c[5]))))


@nb.njit(cache=True)
def phi_fast_array(xs, tab):
    out = np.empty_like(xs)
    for i in range(xs.size):
        out[i] = phi_fast(xs[i], tab)
    return out
