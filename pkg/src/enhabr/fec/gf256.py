"""Arithmetic over GF(2^8) with the 0x11d primitive polynomial.

Multiplication uses log/antilog tables; matrix helpers work on lists of
rows so they stay readable for the small systems (at most 255 x 255) the
erasure code needs.
"""

import numpy as np

PRIMITIVE_POLY = 0x11D

EXP = np.zeros(512, dtype=np.uint8)
LOG = np.zeros(256, dtype=np.int32)


def _build_tables():
    x = 1
    for i in range(255):
        EXP[i] = x
        LOG[x] = i
        x <<= 1
        if x & 0x100:
            x ^= PRIMITIVE_POLY
    EXP[255:510] = EXP[:255]


_build_tables()

# Full 256x256 product table; 64 KiB, makes vectorised row operations cheap.
MUL = np.zeros((256, 256), dtype=np.uint8)
_nz = np.arange(1, 256)
MUL[1:, 1:] = EXP[(LOG[_nz][:, None] + LOG[_nz][None, :]) % 255]


def mul(a, b):
    if a == 0 or b == 0:
        return 0
    return int(EXP[LOG[a] + LOG[b]])


def inv(a):
    if a == 0:
        raise ZeroDivisionError("0 has no inverse in GF(256)")
    return int(EXP[255 - LOG[a]])


def power(a, n):
    if n == 0:
        return 1
    if a == 0:
        return 0
    return int(EXP[(LOG[a] * n) % 255])


def mat_inv(m):
    """Invert a square matrix (uint8 ndarray) by Gauss-Jordan elimination."""
    n = m.shape[0]
    a = m.astype(np.uint8).copy()
    out = np.eye(n, dtype=np.uint8)
    for col in range(n):
        pivots = np.nonzero(a[col:, col])[0]
        if pivots.size == 0:
            raise np.linalg.LinAlgError("singular matrix over GF(256)")
        piv = col + int(pivots[0])
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            out[[col, piv]] = out[[piv, col]]
        scale = inv(int(a[col, col]))
        a[col] = MUL[scale][a[col]]
        out[col] = MUL[scale][out[col]]
        for row in range(n):
            f = int(a[row, col])
            if row != col and f:
                a[row] ^= MUL[f][a[col]]
                out[row] ^= MUL[f][out[col]]
    return out


def mat_vec_rows(m, rows):
    """Multiply matrix ``m`` (p x q) by a stack of q byte rows, giving p rows."""
    result = np.zeros((m.shape[0], rows.shape[1]), dtype=np.uint8)
    for i in range(m.shape[0]):
        acc = result[i]
        for j in range(m.shape[1]):
            c = int(m[i, j])
            if c:
                acc ^= MUL[c][rows[j]]
    return result
