"""Pure-numpy transform kernel: the fallback when the extension is absent.

The butterfly schedule, twiddle tables, and elementary operation
structure mirror the compiled kernel exactly, so both backends produce
bit-identical coefficients. Complex values are manipulated as float64
component pairs with separate multiply/add/subtract steps: numpy's
complex-multiply ufunc may fuse operations on SIMD hardware, which
would break cross-backend bit identity.
"""
from __future__ import annotations

import numpy as np

BACKEND = "python"


def fft_pow2_batch(data: np.ndarray, rev: np.ndarray, tw: np.ndarray, scale: float) -> np.ndarray:
    """Radix-2 transform of each row of `data` (row length a power of 2).

    data: (m, n) complex128 rows to transform.
    rev:  length-n bit-reversal permutation.
    tw:   flat twiddle table; the stage with half-width h occupies
          tw[h-1 : 2h-1]. The caller passes a conjugated table for the
          inverse direction.
    scale: final multiplier (1.0 forward, 1/n inverse; exact for
          power-of-2 n, so it introduces no rounding).
    """
    a = np.ascontiguousarray(
        np.asarray(data, dtype=np.complex128)[:, np.asarray(rev, dtype=np.intp)]
    )
    m, n = a.shape
    av = a.view(np.float64).reshape(m, n, 2)
    w = np.ascontiguousarray(tw, dtype=np.complex128).view(np.float64).reshape(-1, 2)
    h = 1
    while h < n:
        wr = w[h - 1 : 2 * h - 1, 0]
        wi = w[h - 1 : 2 * h - 1, 1]
        blocks = av.reshape(m, n // (2 * h), 2 * h, 2)
        top = blocks[:, :, h:, :]
        # hr/hi/lo must be materialized before any write below; the views
        # alias the same buffer.
        hr = top[..., 0] * wr - top[..., 1] * wi
        hi = top[..., 0] * wi + top[..., 1] * wr
        lo = blocks[:, :, :h, :].copy()
        blocks[:, :, :h, 0] = lo[..., 0] + hr
        blocks[:, :, :h, 1] = lo[..., 1] + hi
        blocks[:, :, h:, 0] = lo[..., 0] - hr
        blocks[:, :, h:, 1] = lo[..., 1] - hi
        h *= 2
    if scale != 1.0:
        av *= scale
    return a
