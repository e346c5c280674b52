"""Fourier and difference transforms.

Conventions, fixed once here and assumed everywhere else:
  - forward DFT is unnormalized: F[j] = sum_t x[t] e^{-2 pi i j t / n};
  - the inverse carries the full 1/n factor;
  - "first k coefficients" means indices 0..k-1 literally, with no
    conjugate-symmetric completion; pad_and_invert therefore takes the
    real part of the inverse, discarding the imaginary residue the
    one-sided truncation induces. truncate_symmetric is the documented
    alternative that synthesizes the mirrored bins from the retained
    ones.

Power-of-2 lengths run through a radix-2 kernel (compiled when built,
numpy fallback otherwise; the two are bit-identical). Every other
length uses one shared direct-summation path so backend choice never
changes a coefficient anywhere.
"""
from __future__ import annotations

import numpy as np

from privseq._backend import fft_pow2_batch
from privseq.core import ComplexSeq, ParameterError, RealSeq

__all__ = [
    "dft",
    "idft",
    "truncate_low",
    "truncate_symmetric",
    "complete_symmetric",
    "pad_and_invert",
    "diff_transform",
    "cumsum_reconstruct",
    "dft_batch",
    "idft_batch",
]

# Per-length tables: bit-reversal permutation, forward twiddles,
# conjugated twiddles. Direct-summation matrices are cached separately;
# both caches are small in practice (one entry per distinct length).
_TABLES: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
_DIRECT: dict[int, np.ndarray] = {}


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _tables(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cached = _TABLES.get(n)
    if cached is not None:
        return cached
    bits = n.bit_length() - 1
    idx = np.arange(n, dtype=np.intp)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    tw = np.empty(max(n - 1, 0), dtype=np.complex128)
    h = 1
    while h < n:
        ang = -np.pi * np.arange(h, dtype=np.float64) / h
        tw[h - 1 : 2 * h - 1] = np.cos(ang) + 1j * np.sin(ang)
        h *= 2
    entry = (rev, tw, np.conj(tw))
    _TABLES[n] = entry
    return entry


def _direct_matrix(n: int) -> np.ndarray:
    cached = _DIRECT.get(n)
    if cached is not None:
        return cached
    t = np.arange(n, dtype=np.float64)
    w = np.exp(-2j * np.pi * np.outer(t, t) / n)
    _DIRECT[n] = w
    return w


def dft_batch(rows: np.ndarray) -> np.ndarray:
    """Forward transform of each row of a (m, n) float64 array."""
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2:
        raise ParameterError(f"expected a 2-D batch, got shape {x.shape}")
    n = x.shape[1]
    if n < 1:
        raise ParameterError("rows must have length >= 1")
    if _is_pow2(n):
        rev, tw, _ = _tables(n)
        return fft_pow2_batch(x.astype(np.complex128), rev, tw, 1.0)
    # einsum keeps a fixed per-element summation order, so a batch of m
    # rows is bit-identical to m single-row calls (BLAS gemm is not).
    return np.einsum("mt,tj->mj", x.astype(np.complex128), _direct_matrix(n))


def idft_batch(rows: np.ndarray) -> np.ndarray:
    """Inverse transform (with the 1/n factor) of each complex row."""
    f = np.asarray(rows, dtype=np.complex128)
    if f.ndim != 2:
        raise ParameterError(f"expected a 2-D batch, got shape {f.shape}")
    n = f.shape[1]
    if n < 1:
        raise ParameterError("rows must have length >= 1")
    if _is_pow2(n):
        rev, _, tw_inv = _tables(n)
        return fft_pow2_batch(f, rev, tw_inv, 1.0 / n)
    return np.einsum("mj,jt->mt", f, np.conj(_direct_matrix(n))) * (1.0 / n)


def dft(x: RealSeq) -> ComplexSeq:
    """F[j] = sum_t x[t] e^{-2 pi i j t / n} for j = 0..n-1."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ParameterError("dft expects a non-empty 1-D sequence")
    return dft_batch(arr[np.newaxis, :])[0]


def idft(f: ComplexSeq) -> ComplexSeq:
    """x[t] = (1/n) sum_j F[j] e^{+2 pi i j t / n}; exact inverse of dft."""
    arr = np.asarray(f, dtype=np.complex128)
    if arr.ndim != 1 or arr.size < 1:
        raise ParameterError("idft expects a non-empty 1-D sequence")
    return idft_batch(arr[np.newaxis, :])[0]


def truncate_low(f: ComplexSeq, k: int) -> ComplexSeq:
    """The first k coefficients (indices 0..k-1), in order."""
    arr = np.asarray(f, dtype=np.complex128)
    if arr.ndim != 1:
        raise ParameterError("truncate_low expects a 1-D sequence")
    if not 1 <= k <= arr.size:
        raise ParameterError(f"k must be in [1, {arr.size}], got {k}")
    return arr[:k].copy()


def _reflect_conjugate(full: np.ndarray, k: int) -> None:
    """Fill bins n-1..n-k+1 with conjugates of bins 1..k-1, in place.

    Bins already inside the retained range [0, k) are left alone, so
    k = n is the identity and overlapping mirrors never clobber data.
    """
    n = full.shape[-1]
    j = np.arange(1, k)
    t = n - j
    keep = t >= k
    full[..., t[keep]] = np.conj(full[..., j[keep]])


def complete_symmetric(fk: ComplexSeq, n: int) -> ComplexSeq:
    """Zero-pad k retained coefficients to length n with conjugate completion.

    Places fk at indices 0..k-1 and synthesizes bin n-j as the conjugate
    of bin j for j = 1..k-1 (skipping any mirror position that falls
    inside the retained range, so k = n is the identity). For the
    spectrum of a real signal this restores both halves of each retained
    frequency, so a pure cosine at bin j < k survives at full amplitude
    where the one-sided truncation halves it.
    """
    arr = np.asarray(fk, dtype=np.complex128)
    if arr.ndim != 1 or arr.size < 1:
        raise ParameterError("complete_symmetric expects a non-empty 1-D sequence")
    if n < 1 or arr.size > n:
        raise ParameterError(f"cannot pad length {arr.size} to {n}")
    out = np.zeros(n, dtype=np.complex128)
    out[: arr.size] = arr
    _reflect_conjugate(out, arr.size)
    return out


def truncate_symmetric(f: ComplexSeq, k: int) -> ComplexSeq:
    """Length-preserving truncation with conjugate completion.

    Keeps indices 0..k-1, zeroes the rest, then mirrors the retained
    bins per complete_symmetric. Depends only on the first k input
    coefficients.
    """
    arr = np.asarray(f, dtype=np.complex128)
    if arr.ndim != 1:
        raise ParameterError("truncate_symmetric expects a 1-D sequence")
    n = arr.size
    if not 1 <= k <= n:
        raise ParameterError(f"k must be in [1, {n}], got {k}")
    return complete_symmetric(arr[:k], n)


def pad_and_invert(fk: ComplexSeq, n: int) -> RealSeq:
    """Zero-pad coefficients to length n, invert, take the real part."""
    arr = np.asarray(fk, dtype=np.complex128)
    if arr.ndim != 1 or arr.size < 1:
        raise ParameterError("pad_and_invert expects a non-empty 1-D sequence")
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if arr.size > n:
        raise ParameterError(f"cannot pad length {arr.size} down to {n}")
    full = np.zeros(n, dtype=np.complex128)
    full[: arr.size] = arr
    return idft_batch(full[np.newaxis, :])[0].real.copy()


def diff_transform(x: RealSeq) -> RealSeq:
    """d[0] = x[0]; d[t] = x[t] - x[t-1] for t >= 1."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ParameterError("diff_transform expects a non-empty 1-D sequence")
    out = np.empty_like(arr)
    out[0] = arr[0]
    np.subtract(arr[1:], arr[:-1], out=out[1:])
    return out


def cumsum_reconstruct(d: RealSeq) -> RealSeq:
    """x[0] = d[0]; x[t] = x[t-1] + d[t]: running-sum inverse of diff."""
    arr = np.asarray(d, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ParameterError("cumsum_reconstruct expects a non-empty 1-D sequence")
    return np.cumsum(arr)
