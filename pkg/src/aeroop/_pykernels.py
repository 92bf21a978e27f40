"""Pure numpy implementations of the hot kernels (fallback backend)."""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu_with_grad(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact GELU and its derivative."""
    x = np.asarray(x, dtype=np.float64)
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return x * cdf, cdf + x * pdf


def split_gelu_with_grad(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """GELU on real and imaginary parts; derivative packed as ``d_re + 1j*d_im``."""
    z = np.asarray(z, dtype=np.complex128)
    yr, dr = gelu_with_grad(z.real)
    yi, di = gelu_with_grad(z.imag)
    return yr + 1j * yi, dr + 1j * di


def split_scale(g: np.ndarray, d: np.ndarray) -> np.ndarray:
    """``g.real * d.real + 1j * g.imag * d.imag``."""
    return g.real * d.real + 1j * (g.imag * d.imag)


def _neighbors(c: np.ndarray, axis: int, periodic: bool, fill) -> tuple[np.ndarray, np.ndarray]:
    """Values before/after each cell along ``axis``; ``fill`` = None copies the cell."""
    lo = np.roll(c, 1, axis=axis)
    hi = np.roll(c, -1, axis=axis)
    if not periodic:
        first = [slice(None)] * 2
        last = [slice(None)] * 2
        first[axis] = 0
        last[axis] = -1
        lo[tuple(first)] = c[tuple(first)] if fill is None else fill
        hi[tuple(last)] = c[tuple(last)] if fill is None else fill
    return lo, hi


def _upwind(c, vel, axis, dtdx, periodic):
    lo, hi = _neighbors(c, axis, periodic, 0.0)
    if axis == 1:
        vl, vr = vel[:, :-1], vel[:, 1:]
    else:
        vl, vr = vel[:-1, :], vel[1:, :]
    fr = np.maximum(vr, 0.0) * c + np.minimum(vr, 0.0) * hi
    fl = np.maximum(vl, 0.0) * lo + np.minimum(vl, 0.0) * c
    return c - dtdx * (fr - fl)


def advance(c_in, u, v, rates, src_rows, src_cols, dtdx, ddiff, decay, dt_sub, periodic):
    """Run ``rates.shape[0]`` substeps of the split upwind/diffusion scheme."""
    c = np.array(c_in, dtype=np.float64, copy=True)
    for s in range(rates.shape[0]):
        c = _upwind(c, u, 1, dtdx, periodic)
        c = _upwind(c, v, 0, dtdx, periodic)
        n, so = _neighbors(c, 0, periodic, None)
        we, ea = _neighbors(c, 1, periodic, None)
        c = c + ddiff * ((((n + so) + we) + ea) - 4.0 * c)
        for k in range(rates.shape[1]):
            c[src_rows[k], src_cols[k]] = c[src_rows[k], src_cols[k]] + dt_sub * rates[s, k]
        c = c * decay
    return c
