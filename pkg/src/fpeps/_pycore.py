"""Pure-Python versions of the compiled helpers in ``fpeps._core``."""

from __future__ import annotations

import math
from functools import lru_cache

import scipy.linalg


@lru_cache(maxsize=4096)
def _plan(sa: tuple, sb: tuple, axa: tuple, axb: tuple):
    fa = [i for i in range(len(sa)) if i not in axa]
    fb = [i for i in range(len(sb)) if i not in axb]
    k = math.prod(sa[i] for i in axa)
    m = math.prod(sa[i] for i in fa)
    n = math.prod(sb[i] for i in fb)
    out = tuple(sa[i] for i in fa) + tuple(sb[i] for i in fb)
    return tuple(fa) + axa, (m, k), axb + tuple(fb), (k, n), out


def tdot(a, b, axes):
    """``numpy.tensordot(a, b, axes)`` with cached index bookkeeping."""
    axa, axb = tuple(axes[0]), tuple(axes[1])
    pa, sa2, pb, sb2, out = _plan(a.shape, b.shape, axa, axb)
    return (a.transpose(pa).reshape(sa2) @ b.transpose(pb).reshape(sb2)).reshape(out)


def qr(mat):
    """Thin QR: ``(q (m, k), r (k, n))``."""
    return scipy.linalg.qr(mat, mode="economic", check_finite=False)


def lq(mat):
    """Thin LQ: ``(l (m, k), q (k, n))``."""
    q, r = scipy.linalg.qr(mat.conj().T, mode="economic", check_finite=False)
    return r.conj().T, q.conj().T
