# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_pykernels`` for the reference numpy versions."""

import numpy as np
cimport numpy as cnp
from libc.math cimport erf, exp, sqrt

cnp.import_array()

cdef double INV_SQRT2 = 0.7071067811865476
cdef double INV_SQRT_2PI = 0.3989422804014327


def gelu_with_grad(x):
    """Exact GELU and its derivative."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xf = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    cdef Py_ssize_t n = xf.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dy = np.empty(n)
    cdef double[::1] xv = xf, yv = y, dv = dy
    cdef double v, cdf
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            v = xv[i]
            cdf = 0.5 * (1.0 + erf(v * INV_SQRT2))
            yv[i] = v * cdf
            dv[i] = cdf + v * exp(-0.5 * v * v) * INV_SQRT_2PI
    shape = np.shape(x)
    return y.reshape(shape), dy.reshape(shape)


def split_gelu_with_grad(z):
    """GELU on real and imaginary parts; derivative packed as ``d_re + 1j*d_im``."""
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] zf = np.ascontiguousarray(z, dtype=np.complex128).reshape(-1)
    cdef Py_ssize_t n = zf.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] zr = zf.view(np.float64)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] y = np.empty(n, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] dy = np.empty(n, dtype=np.complex128)
    cdef double[::1] xv = zr
    cdef double[::1] yv = y.view(np.float64)
    cdef double[::1] dv = dy.view(np.float64)
    cdef double v, cdf
    cdef Py_ssize_t i
    with nogil:
        for i in range(2 * n):
            v = xv[i]
            cdf = 0.5 * (1.0 + erf(v * INV_SQRT2))
            yv[i] = v * cdf
            dv[i] = cdf + v * exp(-0.5 * v * v) * INV_SQRT_2PI
    shape = np.shape(z)
    return y.reshape(shape), dy.reshape(shape)


def split_scale(g, d):
    """``g.real * d.real + 1j * g.imag * d.imag`` for complex ``g`` and ``d``."""
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] gf = np.ascontiguousarray(g, dtype=np.complex128).reshape(-1)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] df = np.ascontiguousarray(d, dtype=np.complex128).reshape(-1)
    cdef Py_ssize_t n = gf.shape[0]
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] out = np.empty(n, dtype=np.complex128)
    cdef double[::1] gv = gf.view(np.float64)
    cdef double[::1] dv = df.view(np.float64)
    cdef double[::1] ov = out.view(np.float64)
    cdef Py_ssize_t i
    with nogil:
        for i in range(2 * n):
            ov[i] = gv[i] * dv[i]
    return out.reshape(np.shape(g))


def advance(double[:, ::1] c_in, double[:, ::1] u, double[:, ::1] v, double[:, ::1] rates,
            long[::1] src_rows, long[::1] src_cols, double dtdx, double ddiff, double decay,
            double dt_sub, bint periodic):
    """Run ``rates.shape[0]`` substeps of the split upwind/diffusion scheme."""
    cdef Py_ssize_t h = c_in.shape[0], w = c_in.shape[1]
    cdef Py_ssize_t nsub = rates.shape[0], nsrc = rates.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] a_arr = np.array(c_in, dtype=np.float64, copy=True)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] b_arr = np.empty((h, w))
    cdef double[:, ::1] a = a_arr
    cdef double[:, ::1] b = b_arr
    cdef double[:, ::1] tmp
    cdef Py_ssize_t s, i, j, k
    cdef double cl, cr, cc, fl, fr, ul, ur, n, so, we, ea
    with nogil:
        for s in range(nsub):
            # advection along columns (x)
            for i in range(h):
                for j in range(w):
                    cc = a[i, j]
                    if j > 0:
                        cl = a[i, j - 1]
                    elif periodic:
                        cl = a[i, w - 1]
                    else:
                        cl = 0.0
                    if j < w - 1:
                        cr = a[i, j + 1]
                    elif periodic:
                        cr = a[i, 0]
                    else:
                        cr = 0.0
                    ul = u[i, j]
                    ur = u[i, j + 1]
                    fr = _pos(ur) * cc + _neg(ur) * cr
                    fl = _pos(ul) * cl + _neg(ul) * cc
                    b[i, j] = cc - dtdx * (fr - fl)
            tmp = a; a = b; b = tmp
            # advection along rows (y)
            for i in range(h):
                for j in range(w):
                    cc = a[i, j]
                    if i > 0:
                        cl = a[i - 1, j]
                    elif periodic:
                        cl = a[h - 1, j]
                    else:
                        cl = 0.0
                    if i < h - 1:
                        cr = a[i + 1, j]
                    elif periodic:
                        cr = a[0, j]
                    else:
                        cr = 0.0
                    ul = v[i, j]
                    ur = v[i + 1, j]
                    fr = _pos(ur) * cc + _neg(ur) * cr
                    fl = _pos(ul) * cl + _neg(ul) * cc
                    b[i, j] = cc - dtdx * (fr - fl)
            tmp = a; a = b; b = tmp
            # diffusion; outflow boundaries are no-flux
            for i in range(h):
                for j in range(w):
                    cc = a[i, j]
                    if i > 0:
                        n = a[i - 1, j]
                    elif periodic:
                        n = a[h - 1, j]
                    else:
                        n = cc
                    if i < h - 1:
                        so = a[i + 1, j]
                    elif periodic:
                        so = a[0, j]
                    else:
                        so = cc
                    if j > 0:
                        we = a[i, j - 1]
                    elif periodic:
                        we = a[i, w - 1]
                    else:
                        we = cc
                    if j < w - 1:
                        ea = a[i, j + 1]
                    elif periodic:
                        ea = a[i, 0]
                    else:
                        ea = cc
                    b[i, j] = cc + ddiff * ((((n + so) + we) + ea) - 4.0 * cc)
            tmp = a; a = b; b = tmp
            for k in range(nsrc):
                a[src_rows[k], src_cols[k]] = a[src_rows[k], src_cols[k]] + dt_sub * rates[s, k]
            for i in range(h):
                for j in range(w):
                    a[i, j] = a[i, j] * decay
    return np.asarray(a).copy()


cdef inline double _pos(double x) nogil:
    return x if x > 0.0 else 0.0


cdef inline double _neg(double x) nogil:
    return x if x < 0.0 else 0.0
