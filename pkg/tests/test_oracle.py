import math

import numpy as np
import pytest
from scipy.linalg import expm

from fpeps import oracle as O
from fpeps import peps as P
from fpeps.evolution import build_gates
from fpeps.models import SX, SY, SZ, ModelSpec, bond_hamiltonians


def dense_h(m, rows, cols):
    h = O.DenseHamiltonian(m, rows, cols)
    return np.column_stack([h.matvec(e) for e in np.eye(h.dim, dtype=complex)])


def embed(op, i, n):
    out = np.ones((1, 1))
    for k in range(n):
        out = np.kron(out, op if k == i else np.eye(2))
    return out


def test_bond_terms_sum_to_full_hamiltonian():
    m = ModelSpec("ising", B=0.7)
    n = 4  # 2x2, sites 0 1 / 2 3
    ref = sum(-embed(SZ, i, n) @ embed(SZ, j, n) for i, j in ((0, 1), (2, 3), (0, 2), (1, 3)))
    ref = ref - 0.7 * sum(embed(SX, i, n) for i in range(n))
    np.testing.assert_allclose(dense_h(m, 2, 2), ref, atol=1e-12)
    assert len(bond_hamiltonians(m, 2, 3)) == 7


def test_heisenberg_plaquette_energy():
    e0, vec = O.exact_ground_state(ModelSpec("heisenberg"), 2)
    assert e0 == pytest.approx(-2.0, abs=1e-12)
    h = dense_h(ModelSpec("heisenberg"), 2, 2)
    assert np.linalg.norm(h @ vec - e0 * vec) < 1e-8
    assert O.DenseHamiltonian(ModelSpec("heisenberg"), 2).energy(vec) == pytest.approx(e0, abs=1e-10)


def test_ising_pair_without_field():
    e0, _ = O.exact_ground_state(ModelSpec("ising"), 1, 2)
    assert e0 == pytest.approx(-1.0, abs=1e-12)


def test_sparse_path_matches_dense():
    m = ModelSpec("ising", B=1.3)
    e_sparse, _ = O.exact_ground_state(m, 2, 4)  # 256 states, Lanczos path
    e_dense = np.linalg.eigvalsh(dense_h(m, 2, 4))[0]
    assert e_sparse == pytest.approx(e_dense, abs=1e-9)


def test_long_time_evolution_reaches_ground_state():
    m = ModelSpec("heisenberg")
    e0, _ = O.exact_ground_state(m, 2, 3)
    start = O.product_dense([np.array([1.0, 0.3]), np.array([0.3, 1.0])] * 3)
    v = O.dense_evolve(start, m, 1.0, 40, 2, 3)
    v = v / np.linalg.norm(v)
    assert O.DenseHamiltonian(m, 2, 3).energy(v) == pytest.approx(e0, abs=1e-6)


def test_dense_evolve_matches_expm():
    m = ModelSpec("ising", B=0.5)
    rng = np.random.default_rng(0)
    v = rng.standard_normal(16) + 0j
    ref = expm(-0.3 * dense_h(m, 2, 2)) @ v
    np.testing.assert_allclose(O.dense_evolve(v, m, 0.1, 3, 2, 2), ref, rtol=1e-10)


def test_trotter_step_error_order():
    m = ModelSpec("heisenberg")
    h = dense_h(m, 2, 2)
    v = O.product_dense([np.array([1.0, 0.2]), np.array([0.1, 1.0])] * 2)
    errs = []
    for tau in (0.1, 0.05):
        approx = O.dense_trotter_step(v, list(build_gates(m, tau, 2).all_gates()), 2)
        errs.append(np.linalg.norm(approx - expm(-tau * h) @ v))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.3)


def test_peps_to_dense_of_product_state():
    vecs = [np.array([math.cos(a), math.sin(a)]) for a in np.linspace(0.1, 1.2, 6)]
    base = np.array(vecs).reshape(2, 3, 2)
    psi = P.init_separable_with_noise(2, 2, 2, base, 0.0, cols=3)
    np.testing.assert_allclose(O.peps_to_dense(psi), O.product_dense(vecs), atol=1e-14)


def test_dense_expectations():
    v = O.product_dense([np.array([1.0, 0.0]), np.array([1.0, 1.0]) / math.sqrt(2)])
    assert O.dense_expect_local(v, 0, SZ, 2) == pytest.approx(1.0)
    assert O.dense_expect_local(v, 1, SX, 2) == pytest.approx(1.0)
    assert O.dense_expect_product(v, {0: SZ, 1: SY}, 2) == pytest.approx(0.0)


def test_size_cap():
    with pytest.raises(O.OracleSizeError):
        O.exact_ground_state(ModelSpec("ising"), 3, 6)
    with pytest.raises(O.OracleSizeError):
        O.peps_to_dense(P.random_peps(4, 5, 2, 1))
