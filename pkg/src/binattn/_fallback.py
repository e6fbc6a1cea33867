"""Pure numpy versions of the compiled kernels, same names and signatures."""

import numpy as np

from .tensor_io import tail_mask, words_per_row

_CHUNK_BYTES = 1 << 22


def pack_signs(m):
    m = np.ascontiguousarray(m, dtype=np.float64)
    n, d = m.shape
    wpr = words_per_row(d)
    bits = np.zeros((n, wpr * 64), dtype=bool)
    bits[:, :d] = m >= 0.0
    packed = np.packbits(bits, axis=1, bitorder="little")
    return packed.view("<u8").astype(np.uint64).reshape(n, wpr)


def hamming_rows(a, i, b, j, d):
    x = a[i] ^ b[j]
    x[-1] &= np.uint64(tail_mask(d))
    return int(np.bitwise_count(x).sum())


def binary_gemm(s, t, d, nthreads=1):
    n, m = s.shape[0], t.shape[0]
    nw = s.shape[1]
    out = np.empty((n, m), dtype=np.int32)
    mask = np.uint64(tail_mask(d))
    step = max(1, _CHUNK_BYTES // max(1, m * nw * 8))
    for i0 in range(0, n, step):
        x = s[i0 : i0 + step, None, :] ^ t[None, :, :]
        x[..., -1] &= mask
        h = np.bitwise_count(x).sum(axis=-1, dtype=np.int64)
        out[i0 : i0 + step] = d - 2 * h
    return out


def naive_f32_gemm(a, b):
    return np.matmul(a, b.T).astype(np.float32)


def u8s8_matmul(p, v):
    return np.matmul(p.astype(np.int32), v.astype(np.int32))


def f64_matmul(a, b):
    return np.matmul(a, b)
