# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled tensordot and thin QR/LQ for small complex tensors.

These remove the per-call Python overhead of ``numpy.tensordot`` and
``scipy.linalg.qr``, which dominates the boundary contraction at small bond
dimensions.  The API matches ``fpeps._pycore``.
"""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy, memset
from scipy.linalg.cython_blas cimport zgemm
from scipy.linalg.cython_lapack cimport zgelqf, zunglq, zgeqrf, zungqr

cnp.import_array()

ctypedef double complex cplx

cdef enum:
    MAXDIM = 12


cdef class _Plan:
    cdef int nda, ndb
    cdef int perm_a[MAXDIM]
    cdef int perm_b[MAXDIM]
    cdef Py_ssize_t shape_a[MAXDIM]
    cdef Py_ssize_t shape_b[MAXDIM]
    cdef int copy_a, copy_b   # 0: use as is, 1: permuted copy
    cdef char trans_a, trans_b
    cdef Py_ssize_t m, n, k
    cdef object out_shape
    cdef int nd_out
    cdef cnp.npy_intp dims_out[2 * MAXDIM]


cdef dict _plans = {}


cdef _Plan _make_plan(tuple sa, tuple sb, tuple axa, tuple axb):
    cdef _Plan p = _Plan()
    cdef int i, j
    cdef int na = len(sa), nb = len(sb)
    if na > MAXDIM or nb > MAXDIM:
        raise ValueError("too many axes")
    if len(axa) != len(axb):
        raise ValueError("axes lists differ in length")
    for i in range(len(axa)):
        if sa[axa[i]] != sb[axb[i]]:
            raise ValueError("shape mismatch for contracted axes")
    p.nda, p.ndb = na, nb
    fa = [i for i in range(na) if i not in axa]
    fb = [i for i in range(nb) if i not in axb]
    p.m = 1
    for i in fa:
        p.m *= sa[i]
    p.n = 1
    for i in fb:
        p.n *= sb[i]
    p.k = 1
    for i in axa:
        p.k *= sa[i]
    for i in range(na):
        p.shape_a[i] = sa[i]
    for i in range(nb):
        p.shape_b[i] = sb[i]
    # operand a as an (m, k) matrix
    order_a = fa + list(axa)
    if order_a == list(range(na)):
        p.copy_a = 0
        p.trans_a = b'N'
    elif list(axa) + fa == list(range(na)):
        p.copy_a = 0
        p.trans_a = b'T'
    else:
        p.copy_a = 1
        p.trans_a = b'N'
    for i in range(na):
        p.perm_a[i] = order_a[i]
    # operand b as a (k, n) matrix
    order_b = list(axb) + fb
    if order_b == list(range(nb)):
        p.copy_b = 0
        p.trans_b = b'N'
    elif fb + list(axb) == list(range(nb)):
        p.copy_b = 0
        p.trans_b = b'T'
    else:
        p.copy_b = 1
        p.trans_b = b'N'
    for i in range(nb):
        p.perm_b[i] = order_b[i]
    p.out_shape = tuple(sa[i] for i in fa) + tuple(sb[i] for i in fb)
    p.nd_out = len(p.out_shape)
    for i in range(p.nd_out):
        p.dims_out[i] = p.out_shape[i]
    return p


cdef inline cnp.ndarray _as_c(x):
    if (
        cnp.PyArray_Check(x)
        and cnp.PyArray_TYPE(<cnp.ndarray> x) == cnp.NPY_COMPLEX128
        and cnp.PyArray_IS_C_CONTIGUOUS(<cnp.ndarray> x)
    ):
        return <cnp.ndarray> x
    return np.asarray(x, dtype=np.complex128, order="C")


cdef void _permute(const cplx* src, const Py_ssize_t* shape, const int* perm, int nd,
                   cplx* dst) noexcept nogil:
    """Copy ``src`` (C order, ``shape``) into ``dst`` laid out along ``perm``."""
    cdef Py_ssize_t strides[MAXDIM]
    cdef Py_ssize_t pshape[MAXDIM]
    cdef Py_ssize_t pstride[MAXDIM]
    cdef Py_ssize_t idx[MAXDIM]
    cdef Py_ssize_t total = 1, off = 0, t, inner_n, inner_s
    cdef int i
    strides[nd - 1] = 1
    for i in range(nd - 2, -1, -1):
        strides[i] = strides[i + 1] * shape[i + 1]
    for i in range(nd):
        pshape[i] = shape[perm[i]]
        pstride[i] = strides[perm[i]]
        idx[i] = 0
        total *= pshape[i]
    if total == 0:
        return
    inner_n = pshape[nd - 1]
    inner_s = pstride[nd - 1]
    t = 0
    while t < total:
        for i in range(inner_n):
            dst[t + i] = src[off + i * inner_s]
        t += inner_n
        i = nd - 2
        while i >= 0:
            idx[i] += 1
            off += pstride[i]
            if idx[i] < pshape[i]:
                break
            off -= pstride[i] * pshape[i]
            idx[i] = 0
            i -= 1


def tdot(a, b, axes):
    """``numpy.tensordot(a, b, axes)`` for complex128 operands."""
    cdef object axa = axes[0]
    cdef object axb = axes[1]
    if type(axa) is not tuple:
        axa = tuple(axa)
    if type(axb) is not tuple:
        axb = tuple(axb)
    cdef cnp.ndarray A = _as_c(a)
    cdef cnp.ndarray B = _as_c(b)
    cdef tuple sa = (<object> A).shape
    cdef tuple sb = (<object> B).shape
    key = (sa, sb, axa, axb)
    cdef _Plan p = _plans.get(key)
    if p is None:
        p = _make_plan(sa, sb, axa, axb)
        _plans[key] = p
    cdef cnp.ndarray out = cnp.PyArray_EMPTY(p.nd_out, p.dims_out, cnp.NPY_COMPLEX128, 0)
    cdef cplx* pa = <cplx*> cnp.PyArray_DATA(A)
    cdef cplx* pb = <cplx*> cnp.PyArray_DATA(B)
    cdef cplx* pc = <cplx*> cnp.PyArray_DATA(out)
    cdef cplx* ta = NULL
    cdef cplx* tb = NULL
    cdef int m = <int> p.m, n = <int> p.n, k = <int> p.k
    cdef int lda, ldb, ldc = n if n > 0 else 1
    cdef cplx one = 1.0, zero = 0.0
    cdef char tra = p.trans_a, trb = p.trans_b
    if m == 0 or n == 0:
        return out
    if k == 0:
        memset(pc, 0, m * n * sizeof(cplx))
        return out
    try:
        if p.copy_a:
            ta = <cplx*> malloc(m * k * sizeof(cplx))
            _permute(pa, p.shape_a, p.perm_a, p.nda, ta)
            pa = ta
        if p.copy_b:
            tb = <cplx*> malloc(k * n * sizeof(cplx))
            _permute(pb, p.shape_b, p.perm_b, p.ndb, tb)
            pb = tb
        # row-major C = A B is the column-major product C^T = B^T A^T
        lda = k if tra == b'N' else m
        ldb = n if trb == b'N' else k
        zgemm(&trb, &tra, &n, &m, &k, &one, pb, &ldb, pa, &lda, &zero, pc, &ldc)
    finally:
        if ta != NULL:
            free(ta)
        if tb != NULL:
            free(tb)
    return out


cdef int _lq_colmajor(cplx* buf, int rows, int cols, cplx* lower, int kk) except -1:
    """LQ of the column-major ``rows x cols`` matrix in ``buf``.

    Writes the ``rows x kk`` lower trapezoid into ``lower`` (column-major) and
    overwrites the first ``kk`` rows of ``buf`` with the orthonormal factor.
    """
    cdef int info = 0, lwork = -1, i, j
    cdef cplx wq
    cdef cplx* tau = <cplx*> malloc(kk * sizeof(cplx))
    cdef cplx* work = NULL
    try:
        zgelqf(&rows, &cols, buf, &rows, tau, &wq, &lwork, &info)
        lwork = max(<int> wq.real, 64 * (rows + cols))
        work = <cplx*> malloc(lwork * sizeof(cplx))
        zgelqf(&rows, &cols, buf, &rows, tau, work, &lwork, &info)
        if info != 0:
            raise ArithmeticError(f"zgelqf failed ({info})")
        for j in range(kk):
            for i in range(rows):
                lower[j * rows + i] = buf[j * rows + i] if i >= j else 0.0
        zunglq(&kk, &cols, &kk, buf, &rows, tau, work, &lwork, &info)
        if info != 0:
            raise ArithmeticError(f"zunglq failed ({info})")
    finally:
        free(tau)
        if work != NULL:
            free(work)
    return 0


cdef int _qr_colmajor(cplx* buf, int rows, int cols, cplx* upper, int kk) except -1:
    """QR of the column-major ``rows x cols`` matrix; ``upper`` is ``kk x cols``."""
    cdef int info = 0, lwork = -1, i, j
    cdef cplx wq
    cdef cplx* tau = <cplx*> malloc(kk * sizeof(cplx))
    cdef cplx* work = NULL
    try:
        zgeqrf(&rows, &cols, buf, &rows, tau, &wq, &lwork, &info)
        lwork = max(<int> wq.real, 64 * (rows + cols))
        work = <cplx*> malloc(lwork * sizeof(cplx))
        zgeqrf(&rows, &cols, buf, &rows, tau, work, &lwork, &info)
        if info != 0:
            raise ArithmeticError(f"zgeqrf failed ({info})")
        for j in range(cols):
            for i in range(kk):
                upper[j * kk + i] = buf[j * rows + i] if i <= j else 0.0
        zungqr(&rows, &kk, &kk, buf, &rows, tau, work, &lwork, &info)
        if info != 0:
            raise ArithmeticError(f"zungqr failed ({info})")
    finally:
        free(tau)
        if work != NULL:
            free(work)
    return 0


def qr(mat):
    """Thin QR of a row-major complex matrix: ``(q (m, k), r (k, n))``."""
    cdef cnp.ndarray M = np.array(mat, dtype=np.complex128, order="C", copy=True)
    cdef int m = M.shape[0], n = M.shape[1]
    cdef int kk = min(m, n)
    # row-major (m, n) is the column-major (n, m) transpose; its LQ gives our QR
    cdef cnp.ndarray r = np.empty((kk, n), dtype=np.complex128)
    if kk == 0:
        return np.zeros((m, 0), dtype=np.complex128), r
    _lq_colmajor(<cplx*> cnp.PyArray_DATA(M), n, m, <cplx*> cnp.PyArray_DATA(r), kk)
    # the first kk column-major rows of M hold Q^T with leading dimension n
    cdef cnp.ndarray q = np.empty((m, kk), dtype=np.complex128)
    cdef cplx* src = <cplx*> cnp.PyArray_DATA(M)
    cdef cplx* dst = <cplx*> cnp.PyArray_DATA(q)
    cdef int i, j
    for i in range(m):
        for j in range(kk):
            dst[i * kk + j] = src[i * n + j]
    return q, r


def lq(mat):
    """Thin LQ of a row-major complex matrix: ``(l (m, k), q (k, n))``."""
    cdef cnp.ndarray M = np.array(mat, dtype=np.complex128, order="C", copy=True)
    cdef int m = M.shape[0], n = M.shape[1]
    cdef int kk = min(m, n)
    cdef cnp.ndarray l = np.empty((m, kk), dtype=np.complex128)
    if kk == 0:
        return l, np.zeros((0, n), dtype=np.complex128)
    # row-major (m, n) is column-major (n, m); its QR gives our LQ
    cdef cnp.ndarray lt = np.empty((kk, m), dtype=np.complex128)  # column-major kk x m
    _qr_colmajor(<cplx*> cnp.PyArray_DATA(M), n, m, <cplx*> cnp.PyArray_DATA(lt), kk)
    # column-major upper (kk x m) read row-major is its transpose (m x kk) = L
    memcpy(cnp.PyArray_DATA(l), cnp.PyArray_DATA(lt), m * kk * sizeof(cplx))
    cdef cnp.ndarray q = np.empty((kk, n), dtype=np.complex128)
    cdef cplx* src = <cplx*> cnp.PyArray_DATA(M)
    cdef cplx* dst = <cplx*> cnp.PyArray_DATA(q)
    cdef int i, j
    # column-major Q (n x kk, ld n) read row-major is (kk x n)
    for i in range(kk):
        for j in range(n):
            dst[i * n + j] = src[i * n + j]
    return l, q
