import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpeps import tensors as T
from conftest import crandn

dims = st.integers(1, 4)


def loop_contract(a, b, pairs):
    """Reference contraction by explicit summation over index tuples."""
    fa = [i for i in range(a.ndim) if i not in [p[0] for p in pairs]]
    fb = [j for j in range(b.ndim) if j not in [p[1] for p in pairs]]
    out = np.zeros([a.shape[i] for i in fa] + [b.shape[j] for j in fb], dtype=complex)
    summed = [a.shape[p[0]] for p in pairs]
    for idx_out in itertools.product(*[range(n) for n in out.shape]):
        acc = 0j
        for idx_s in itertools.product(*[range(n) for n in summed]):
            ia, ib = [0] * a.ndim, [0] * b.ndim
            for k, i in enumerate(fa):
                ia[i] = idx_out[k]
            for k, j in enumerate(fb):
                ib[j] = idx_out[len(fa) + k]
            for (i, j), v in zip(pairs, idx_s):
                ia[i] = v
                ib[j] = v
            acc += a[tuple(ia)] * b[tuple(ib)]
        out[idx_out] = acc
    return out


@settings(max_examples=40, deadline=None)
@given(st.lists(dims, min_size=2, max_size=4), st.lists(dims, min_size=1, max_size=3), st.integers(1, 2), st.randoms())
def test_contract_matches_loop(sa, sb_free, npair, rnd):
    rng = np.random.default_rng(rnd.randint(0, 2**31))
    npair = min(npair, len(sa))
    ia = rnd.sample(range(len(sa)), npair)
    sb = list(sb_free)
    jb = []
    for i in ia:
        j = rnd.randint(0, len(sb))
        sb.insert(j, sa[i])
        jb = [x + (x >= j) for x in jb] + [j]
    a, b = crandn(rng, *sa), crandn(rng, *sb)
    pairs = list(zip(ia, jb))
    np.testing.assert_allclose(T.contract(a, b, pairs), loop_contract(a, b, pairs), atol=1e-12)


def test_contract_rejects_mismatch(rng):
    with pytest.raises(T.DimensionError):
        T.contract(crandn(rng, 2, 3), crandn(rng, 4, 2), [(1, 0)])


@settings(max_examples=40, deadline=None)
@given(st.lists(dims, min_size=2, max_size=4), st.data())
def test_factorizations_reconstruct(shape, data):
    rng = np.random.default_rng(data.draw(st.integers(0, 10**6)))
    t = crandn(rng, *shape)
    k = data.draw(st.integers(1, len(shape) - 1))
    rows = data.draw(st.permutations(range(len(shape))))[:k]
    cols = [i for i in range(len(shape)) if i not in rows]
    perm = list(rows) + cols
    ref = np.transpose(t, perm)
    q, r = T.qr_split(t, rows).factors
    np.testing.assert_allclose(np.tensordot(q, r, 1), ref, atol=1e-10)
    qm = q.reshape(-1, q.shape[-1])
    np.testing.assert_allclose(qm.conj().T @ qm, np.eye(qm.shape[1]), atol=1e-10)
    l_, q2 = T.lq_split(t, rows).factors
    np.testing.assert_allclose(np.tensordot(l_, q2, 1), ref, atol=1e-10)
    q2m = q2.reshape(q2.shape[0], -1)
    np.testing.assert_allclose(q2m @ q2m.conj().T, np.eye(q2m.shape[0]), atol=1e-10)
    u, s, v = T.svd_truncate(t, rows, max_rank=10**6).factors
    np.testing.assert_allclose(np.tensordot(u * s, v, 1), ref, atol=1e-10)


def test_svd_truncation_weight(rng):
    t = crandn(rng, 6, 5)
    f = T.svd_truncate(t, [0], max_rank=2)
    s_all = np.linalg.svd(t, compute_uv=False)
    assert f.rank_kept == 2
    assert f.discarded_weight == pytest.approx(np.sum(s_all[2:] ** 2))
    u, s, v = f.factors
    # Eckart-Young: truncation error equals the discarded weight
    assert np.linalg.norm(t - (u * s) @ v) ** 2 == pytest.approx(f.discarded_weight)


def test_svd_rejects_zero_rank(rng):
    with pytest.raises(ValueError):
        T.svd_truncate(crandn(rng, 3, 3), [0], 0)


def _herm(rng, n):
    m = crandn(rng, n, n)
    return m + m.conj().T


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 7), st.integers(0, 10**6))
def test_positive_approximant_idempotent(n, seed):
    m = _herm(np.random.default_rng(seed), n)
    x, clipped = T.hermitian_positive_approximant(m)
    p = x @ x.conj().T
    w = np.linalg.eigvalsh(p)
    assert w.min() > -1e-10 * max(1.0, abs(w).max())
    x2, clipped2 = T.hermitian_positive_approximant(p)
    np.testing.assert_allclose(x2 @ x2.conj().T, p, atol=1e-9 * max(1.0, np.abs(p).max()))
    assert clipped2 < 1e-9 * max(1.0, np.abs(p).max())
    assert clipped == pytest.approx(-np.sum(np.minimum(np.linalg.eigvalsh(m), 0)), abs=1e-9)


def test_positive_approximant_is_nearest(rng):
    m = _herm(rng, 5)
    x, _ = T.hermitian_positive_approximant(m)
    p = x @ x.conj().T
    w, u = np.linalg.eigh(m)
    np.testing.assert_allclose(p, (u * np.clip(w, 0, None)) @ u.conj().T, atol=1e-10)


def test_pinv_and_condition_number(rng):
    u, _ = np.linalg.qr(crandn(rng, 4, 4))
    w = np.array([1e-14, 1e-3, 0.5, 2.0])
    m = (u * w) @ u.conj().T
    s = T.PinvSettings(1e-10)
    pinv = T.pseudo_inverse(m, s)
    kept = (u[:, 1:] / w[1:]) @ u[:, 1:].conj().T
    np.testing.assert_allclose(pinv, kept, atol=1e-8)
    assert T.condition_number(m, s) == pytest.approx(2.0 / 1e-3)
    b = crandn(rng, 4)
    x, cond = T.pinv_solve(m, b, s)
    np.testing.assert_allclose(x, kept @ b, atol=1e-8)
    assert cond == pytest.approx(2e3)


def test_pinv_settings_validation():
    with pytest.raises(ValueError):
        T.PinvSettings(-1.0)


def test_pinv_of_zero_warns():
    with pytest.warns(T.DegenerateMatrixWarning):
        out = T.pseudo_inverse(np.zeros((3, 3)))
    assert not out.any()


def test_regularized_inverse(rng):
    m = crandn(rng, 4, 4)
    inv, cond = T.regularized_inverse(m)
    np.testing.assert_allclose(inv @ m, np.eye(4), atol=1e-10)
    assert cond == pytest.approx(np.linalg.cond(m))
