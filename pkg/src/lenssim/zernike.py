"""Zernike polynomial evaluation with Noll indexing.

Used to synthesize wavefront aberration rasters over the unit disk.
Normalization follows the Noll convention: sqrt(n+1) for m = 0 terms,
sqrt(2(n+1)) otherwise, so coefficients are RMS wavefront contributions.
"""

from math import factorial

import numpy as np

from .errors import ParameterError


def noll_to_nm(j: int) -> tuple[int, int]:
    """Convert a Noll index j >= 1 to the (n, m) radial/azimuthal pair.

    m carries the sign convention: even j maps to cosine terms (m >= 0),
    odd j to sine terms (m < 0), except m = 0.
    """
    if j < 1:
        raise ParameterError(f"Noll index must be >= 1, got {j}")
    n = 0
    while (n + 1) * (n + 2) // 2 < j:
        n += 1
    remaining = j - n * (n + 1) // 2
    # remaining is now in 1..n+1 within row n; enumerate |m| in Noll order
    ms = list(range(n % 2, n + 1, 2))
    # each |m| > 0 occupies two slots (sin, cos); m = 0 occupies one
    slots = []
    for m in ms:
        slots.append(m)
        if m > 0:
            slots.append(m)
    m_abs = slots[remaining - 1]
    if m_abs == 0:
        return n, 0
    sign = 1 if j % 2 == 0 else -1
    return n, sign * m_abs


def radial_poly(n: int, m_abs: int, rho: np.ndarray) -> np.ndarray:
    """Radial polynomial R_n^|m| evaluated on rho."""
    if (n - m_abs) % 2 != 0:
        return np.zeros_like(rho)
    out = np.zeros_like(rho, dtype=float)
    for k in range((n - m_abs) // 2 + 1):
        c = ((-1) ** k * factorial(n - k)
             / (factorial(k)
                * factorial((n + m_abs) // 2 - k)
                * factorial((n - m_abs) // 2 - k)))
        out += c * rho ** (n - 2 * k)
    return out


def zernike_noll(j: int, rho: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Evaluate the Noll-indexed Zernike polynomial Z_j on polar grids."""
    n, m = noll_to_nm(j)
    r = radial_poly(n, abs(m), rho)
    if m == 0:
        return np.sqrt(n + 1.0) * r
    norm = np.sqrt(2.0 * (n + 1.0))
    if m > 0:
        return norm * r * np.cos(m * theta)
    return norm * r * np.sin(-m * theta)
