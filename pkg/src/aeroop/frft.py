"""Discrete Fourier and fractional Fourier transforms.

The fractional transform is built from an orthonormal eigenbasis of the
unitary DFT.  The basis comes from the tridiagonal matrix that commutes with
the DFT (the Harper/Grünbaum construction), split into even and odd parts so
that every eigenvector has definite parity.  With hermite indices ``k`` and
eigenvectors ``E``::

    F^a = E @ diag(exp(-1j * pi * k * a / 2)) @ E.T

which is exactly unitary, additive in ``a`` and 4-periodic.  All fractional
transforms use the *centered* convention: index ``n`` carries coordinate
``n - N // 2``, so ``F^1`` equals the centered unitary DFT::

    C[m, n] = exp(-2j * pi * (m - c) * (n - c) / N) / sqrt(N),   c = N // 2

The ordinary FFT helpers use numpy's uncentered convention: unnormalized
forward transform and ``1 / (H * W)`` on the inverse.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DFrFTBasis",
    "BasisError",
    "build_basis",
    "centered_dft_matrix",
    "frft_matrix",
    "frft_matrix_dalpha",
    "frft_1d",
    "frft_1d_dalpha",
    "frft_2d",
    "fft_2d",
    "ifft_2d",
    "frequency_indices",
    "centered_indices",
    "truncate_modes",
]

# Reconstruction of the centered DFT from the eigenbasis must hold to this.
_RECON_TOL = 1e-8


class BasisError(RuntimeError):
    """The eigen-solver produced a basis that fails its own checks."""


@dataclass(frozen=True)
class DFrFTBasis:
    """Orthonormal eigenbasis of the centered N-point unitary DFT."""

    n: int
    vectors: np.ndarray
    hermite_indices: np.ndarray

    def phases(self, alpha: float) -> np.ndarray:
        return np.exp(-0.5j * np.pi * self.hermite_indices * alpha)


def _hermite_indices(n: int) -> np.ndarray:
    # DFT eigenvalue multiplicities: index N-1 is replaced by N for even N.
    if n % 2:
        return np.arange(n)
    return np.concatenate([np.arange(n - 1), [n]])


def _commuting_matrix(n: int) -> np.ndarray:
    s = np.diag(2.0 * np.cos(2.0 * np.pi * np.arange(n) / n) - 4.0)
    s += np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)
    s[0, -1] += 1.0
    s[-1, 0] += 1.0
    return s


def _parity_transform(n: int) -> np.ndarray:
    """Orthogonal map splitting a length-n vector into even and odd parts."""
    p = np.zeros((n, n))
    r = n // 2
    even = n % 2 == 0
    h = 1.0 / np.sqrt(2.0)
    p[0, 0] = 1.0
    for i in range(1, r - even + 1):
        p[i, i] = h
        p[i, n - i] = h
    if even:
        p[r, r] = 1.0
    for i in range(r + 1, n):
        p[i, i] = -h
        p[i, n - i] = h
    return p


def _uncentered_basis(n: int) -> np.ndarray:
    s = _commuting_matrix(n)
    p = _parity_transform(n)
    cs = p @ s @ p.T
    n_even = n // 2 + 1
    ev_c, vc = np.linalg.eigh(cs[:n_even, :n_even])
    ev_s, vs = np.linalg.eigh(cs[n_even:, n_even:])
    # descending eigenvalue order = increasing Hermite order
    vc = vc[:, np.argsort(-ev_c, kind="stable")]
    vs = vs[:, np.argsort(-ev_s, kind="stable")]
    even_vecs = p.T @ np.vstack([vc, np.zeros((n - n_even, n_even))])
    odd_vecs = p.T @ np.vstack([np.zeros((n_even, n - n_even)), vs])
    e = np.zeros((n, n))
    if n % 2:
        e[:, 0::2] = even_vecs
        e[:, 1::2] = odd_vecs
    else:
        # even N: columns follow indices 0..N-2 then N (an even vector)
        e[:, 0 : n - 1 : 2] = even_vecs[:, :-1]
        e[:, 1 : n - 1 : 2] = odd_vecs
        e[:, -1] = even_vecs[:, -1]
    # fix signs so that each vector is reproducible across LAPACK builds
    for j in range(n):
        col = e[:, j]
        pivot = np.argmax(np.abs(col) > 1e-8 * np.abs(col).max())
        if col[pivot] < 0:
            e[:, j] = -col
    return e


def centered_dft_matrix(n: int) -> np.ndarray:
    """Direct-sum centered unitary DFT matrix (oracle for tests)."""
    c = n // 2
    idx = np.arange(n) - c
    return np.exp(-2j * np.pi * np.outer(idx, idx) / n) / np.sqrt(n)


@functools.lru_cache(maxsize=None)
def build_basis(n: int) -> DFrFTBasis:
    """Eigenbasis of the centered DFT for size ``n`` (cached per size)."""
    n = int(n)
    if n < 2:
        raise ValueError(f"basis size must be >= 2, got {n}")
    e = _uncentered_basis(n)
    # centering is a circular shift of the rows
    e = np.roll(e, n // 2, axis=0)
    k = _hermite_indices(n)
    orth = np.abs(e.T @ e - np.eye(n)).max()
    recon = (e * np.exp(-0.5j * np.pi * k)) @ e.T
    resid = np.abs(recon - centered_dft_matrix(n)).max()
    if orth > 1e-10 or resid > _RECON_TOL:
        raise BasisError(
            f"eigenbasis for N={n} failed: orthogonality residual {orth:.3e}, "
            f"DFT reconstruction residual {resid:.3e}"
        )
    e.setflags(write=False)
    k.setflags(write=False)
    return DFrFTBasis(n=n, vectors=e, hermite_indices=k)


def frft_matrix(alpha: float, basis: DFrFTBasis) -> np.ndarray:
    e = basis.vectors
    return (e * basis.phases(alpha)) @ e.T


def frft_matrix_dalpha(alpha: float, basis: DFrFTBasis) -> np.ndarray:
    """Derivative of :func:`frft_matrix` with respect to the order."""
    e = basis.vectors
    d = -0.5j * np.pi * basis.hermite_indices * basis.phases(alpha)
    return (e * d) @ e.T


def _check_len(x: np.ndarray, basis: DFrFTBasis) -> None:
    if x.shape[-1] != basis.n:
        raise ValueError(f"length {x.shape[-1]} does not match basis size {basis.n}")


def frft_1d(x, alpha: float, basis: DFrFTBasis) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    _check_len(x, basis)
    return frft_matrix(alpha, basis) @ x


def frft_1d_dalpha(x, alpha: float, basis: DFrFTBasis) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    _check_len(x, basis)
    return frft_matrix_dalpha(alpha, basis) @ x


def frft_2d(field, alpha: float, bases=None, axis_order=(0, 1)) -> np.ndarray:
    """Separable fractional transform of the last two axes of ``field``.

    ``bases`` is a ``(basis_rows, basis_cols)`` pair; built on demand if omitted.
    """
    field = np.asarray(field, dtype=complex)
    h, w = field.shape[-2:]
    if bases is None:
        bases = (build_basis(h), build_basis(w))
    b0, b1 = bases
    if (b0.n, b1.n) != (h, w):
        raise ValueError(f"field {h}x{w} does not match bases {b0.n}x{b1.n}")
    out = field
    for ax in axis_order:
        if ax == 0:
            out = np.einsum("mh,...hw->...mw", frft_matrix(alpha, b0), out)
        else:
            out = np.einsum("...hw,nw->...hn", out, frft_matrix(alpha, b1))
    return out


def fft_2d(field) -> np.ndarray:
    """Unnormalized forward 2D DFT over the last two axes."""
    return np.fft.fft2(np.asarray(field, dtype=complex))


def ifft_2d(coeffs) -> np.ndarray:
    """Inverse of :func:`fft_2d` (carries the 1/(H*W) factor)."""
    return np.fft.ifft2(np.asarray(coeffs, dtype=complex))


def frequency_indices(n: int, kmax: int, *, two_sided: bool) -> np.ndarray:
    """Kept FFT indices along one axis.

    Two-sided keeps ``0..kmax-1`` and ``n-kmax+1..n-1``; one-sided keeps
    ``0..kmax-1``.
    """
    if not 1 <= kmax <= n:
        raise ValueError(f"kmax={kmax} out of range for axis of size {n}")
    low = np.arange(kmax)
    if not two_sided:
        return low
    high = np.arange(n - kmax + 1, n)
    return np.unique(np.concatenate([low, high]))


def centered_indices(n: int, kmax: int, *, two_sided: bool) -> np.ndarray:
    """Kept positions in the centered domain matching :func:`frequency_indices`."""
    return np.sort((frequency_indices(n, kmax, two_sided=two_sided) + n // 2) % n)


def truncate_modes(coeffs, kmax: int, ordering: str = "frequency", bases=None) -> np.ndarray:
    """Zero every coefficient outside the kept low-order set.

    ``frequency``: FFT coefficients, two-sided on axis 0, one-sided on axis 1.
    ``centered``: the same sets expressed in centered-DFT positions.
    ``hermite``: coefficients on the ``kmax`` lowest-order DFT eigenvectors
    per axis (hermite index < kmax, all of them when kmax == N); ``coeffs`` is a spatial-domain field and the result is returned
    in the spatial domain.
    """
    coeffs = np.asarray(coeffs, dtype=complex)
    h, w = coeffs.shape[-2:]
    if not 1 <= kmax <= min(h, w):
        raise ValueError(f"kmax={kmax} out of range for {h}x{w} grid")
    if ordering in ("frequency", "centered"):
        pick = frequency_indices if ordering == "frequency" else centered_indices
        mask = np.zeros((h, w), dtype=bool)
        mask[np.ix_(pick(h, kmax, two_sided=True), pick(w, kmax, two_sided=False))] = True
        return np.where(mask, coeffs, 0.0)
    if ordering == "hermite":
        if bases is None:
            bases = (build_basis(h), build_basis(w))
        p0 = _hermite_projector(bases[0], kmax)
        p1 = _hermite_projector(bases[1], kmax)
        return np.einsum("mh,...hw,nw->...mn", p0, coeffs, p1)
    raise ValueError(f"unknown ordering {ordering!r}")


def _hermite_projector(basis: DFrFTBasis, kmax: int) -> np.ndarray:
    # keep the kmax lowest-order eigenvectors; this is ``index < kmax`` except
    # for kmax == N with N even, where the top index is N and is kept too
    keep = np.argsort(basis.hermite_indices, kind="stable")[:kmax]
    e = basis.vectors[:, keep]
    return e @ e.T
