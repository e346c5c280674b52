# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled radix-2 transform kernel.

Mirrors the pure-numpy fallback butterfly for butterfly (see
_kernels_py): identical stage order, twiddle tables, and elementary
operation structure, expressed over float64 component pairs. Built with
floating-point contraction disabled so no fused multiply-add can change
results relative to the fallback.
"""
import numpy as np

BACKEND = "compiled"


def fft_pow2_batch(data, rev, tw, double scale):
    """Radix-2 transform of each row of `data` (row length a power of 2).

    Same contract as the fallback: rev is the bit-reversal permutation,
    tw the flat twiddle table (stage half-width h at tw[h-1:2h-1],
    conjugated by the caller for the inverse), scale the final
    multiplier.
    """
    a_arr = np.ascontiguousarray(
        np.asarray(data, dtype=np.complex128)[:, np.asarray(rev, dtype=np.intp)]
    )
    cdef Py_ssize_t m = a_arr.shape[0]
    cdef Py_ssize_t n = a_arr.shape[1]
    cdef double[:, :, ::1] a = a_arr.view(np.float64).reshape(m, n, 2)
    cdef double[:, ::1] w = (
        np.ascontiguousarray(tw, dtype=np.complex128).view(np.float64).reshape(-1, 2)
    )
    cdef Py_ssize_t row, h, s, j, p, q
    cdef double wr, wi, pr, pi, hr, hi, lr, li
    with nogil:
        for row in range(m):
            h = 1
            while h < n:
                s = 0
                while s < n:
                    for j in range(h):
                        wr = w[h - 1 + j, 0]
                        wi = w[h - 1 + j, 1]
                        p = s + j
                        q = s + h + j
                        pr = a[row, q, 0]
                        pi = a[row, q, 1]
                        hr = pr * wr - pi * wi
                        hi = pr * wi + pi * wr
                        lr = a[row, p, 0]
                        li = a[row, p, 1]
                        a[row, p, 0] = lr + hr
                        a[row, p, 1] = li + hi
                        a[row, q, 0] = lr - hr
                        a[row, q, 1] = li - hi
                    s += 2 * h
                h *= 2
            if scale != 1.0:
                for j in range(n):
                    a[row, j, 0] = a[row, j, 0] * scale
                    a[row, j, 1] = a[row, j, 1] * scale
    return a_arr
