"""Low-level affine kernels with a reproducible accumulation order.

Every output neuron is accumulated strictly in ascending input-index order,
one product at a time, so results are bit-identical regardless of batch
size, chunking, or thread count.  The per-step product is stored through a
staging buffer before the add; the store forces the product to be rounded
to the working precision, which keeps the compiler from fusing the
multiply-add (an FMA would change the rounding and break bit-equality with
the plain numpy path).
"""

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None
    HAVE_NUMBA = False


def affine_numpy(x, w_t, b, out, tmp):
    """Reference implementation: out = x @ w_t + b, ascending-index order.

    ``tmp`` is accepted for signature compatibility and unused.
    """
    out[:] = b
    for j in range(w_t.shape[0]):
        out += x[:, j : j + 1] * w_t[j]
    return out


def _affine_rows(x, w_t, b, out, tmp):
    k, nin = x.shape
    nout = w_t.shape[1]
    for r in range(k):
        for i in range(nout):
            out[r, i] = b[i]
        for j in range(nin):
            xv = x[r, j]
            for i in range(nout):
                tmp[i] = xv * w_t[j, i]
            for i in range(nout):
                out[r, i] = out[r, i] + tmp[i]
    return out


if HAVE_NUMBA:
    affine = njit(cache=True, nogil=True)(_affine_rows)
else:  # pragma: no cover
    affine = affine_numpy
