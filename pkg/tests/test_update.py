import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpeps import environment as E
from fpeps import peps as P
from fpeps import update as U
from fpeps.evolution import gate_from_hamiltonian
from fpeps.models import ModelSpec, bond_coupling
from conftest import crandn

EXACT = E.ContractionSettings(D_prime=64)
HEIS_GATE = gate_from_hamiltonian(bond_coupling(ModelSpec("heisenberg")), 0.1)


def strip_pair(seed, D=2, rows=3, cols=3):
    psi = P.random_peps(rows, cols, 2, D, seed=seed)
    tops, bottoms = E.row_environments(psi, EXACT)
    env = E.RowStrip(tops[1], bottoms[1], psi.row(1)).pair_environment(0)
    return psi[1, 0], psi[1, 1], env


def separable_env(rng, A_L, A_R):
    """Bond-one ring of random positive matrices on the outer legs."""

    def psd(n):
        m = crandn(rng, n, n)
        return (m @ m.conj().T + 0.1 * np.eye(n))[None, :, :, None]

    _, u, l, d, _ = A_L.shape
    _, ur, _, dr, r = A_R.shape
    return E.PairEnvironment(psd(l), psd(u), psd(ur), psd(r), psd(dr), psd(d))


def theta(A_L, A_R):
    return np.tensordot(A_L, A_R, ([4], [2]))


def fidelity(a, b):
    a, b = a.ravel(), b.ravel()
    return abs(np.vdot(a, b)) ** 2 / (np.vdot(a, a).real * np.vdot(b, b).real)


def test_reduce_recombine(rng):
    A_L, A_R, _ = strip_pair(1)
    pair = U.reduce_pair(A_L, A_R)
    L2, R2 = U.recombine(pair)
    np.testing.assert_allclose(L2, A_L, atol=1e-12)
    np.testing.assert_allclose(R2, A_R, atol=1e-12)
    with pytest.raises(ValueError):
        U.reduce_pair(A_L, A_R[:, :, :1])


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6))
def test_gauge_leaves_cost_invariant(seed):
    rng = np.random.default_rng(seed)
    A_L, A_R, env = strip_pair(seed % 1000)
    pair = U.reduce_pair(A_L, A_R)
    n = U.reduced_environment(env, pair.Q_L, pair.Q_R)
    Xt, _ = U.positive_root(n, pair.a_L.shape[0], pair.a_R.shape[2])
    g = U.gauge_fix(Xt)
    target = U.apply_gate(HEIS_GATE, U.pair_theta(pair.a_L, pair.a_R))
    trial_L, trial_R = crandn(rng, *pair.a_L.shape), crandn(rng, *pair.a_R.shape)
    plain = U.cost(Xt, trial_L, trial_R, U.projected(Xt, target))
    gL, gR = U.apply_gauge(pair.a_L, pair.a_R, g)
    tL, tR = U.apply_gauge(trial_L, trial_R, g)
    y = U.projected(g.X, U.apply_gate(HEIS_GATE, U.pair_theta(gL, gR)))
    assert U.cost(g.X, tL, tR, y) == pytest.approx(plain, rel=1e-10)
    back = U.remove_gauge(tL, tR, g)
    np.testing.assert_allclose(back[0], trial_L, atol=1e-10)
    np.testing.assert_allclose(back[1], trial_R, atol=1e-10)


@pytest.mark.parametrize("gauge", ["global", "local", "none"])
@pytest.mark.parametrize("full", [False, True])
def test_identity_gate_is_fixed_point(gauge, full):
    A_L, A_R, env = strip_pair(3)
    run = U.full_tensor_update if full else U.update_pair
    new_L, new_R, rep = run(A_L, A_R, np.eye(4), env, U.UpdateSettings(D=2, gauge=gauge))
    assert fidelity(theta(new_L, new_R), theta(A_L, A_R)) > 1 - 1e-8
    assert not rep.aborted


def test_identity_gate_simple_update(rng):
    A_L, A_R, _ = strip_pair(4)
    env = separable_env(rng, A_L, A_R)
    new_L, new_R, _ = U.simple_update(A_L, A_R, np.eye(4), env, 2)
    assert fidelity(theta(new_L, new_R), theta(A_L, A_R)) > 1 - 1e-8


def test_simple_update_needs_separable_env():
    A_L, A_R, env = strip_pair(2)
    with pytest.raises(ValueError):
        U.simple_update(A_L, A_R, HEIS_GATE, env, 2)


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("gauge", ["global", "none"])
def test_als_costs_nonincreasing(seed, gauge):
    A_L, A_R, env = strip_pair(seed)
    _, _, rep = U.update_pair(A_L, A_R, HEIS_GATE, env, U.UpdateSettings(D=1, gauge=gauge))
    c = np.array(rep.costs[1:])
    assert np.all(np.diff(c) <= 1e-12 * max(rep.costs))
    assert rep.sweeps >= 1 and len(rep.conds) == 2 * rep.sweeps


def test_full_tensor_costs_nonincreasing():
    A_L, A_R, env = strip_pair(6)
    _, _, rep = U.full_tensor_update(A_L, A_R, HEIS_GATE, env, U.UpdateSettings(D=1))
    c = np.array(rep.costs[1:])
    assert np.all(np.diff(c) <= 1e-10 * max(rep.costs))
    assert rep.method == "full"


@pytest.mark.parametrize("seed", range(3))
def test_svd_init_exact_for_separable_environment(seed):
    rng = np.random.default_rng(seed)
    A_L, A_R, _ = strip_pair(seed)
    env = separable_env(rng, A_L, A_R)
    s = U.UpdateSettings(D=1, gauge="global", max_sweeps=10, eps_tol=0.0)
    _, _, rep = U.update_pair(A_L, A_R, HEIS_GATE, env, s)
    after_init, best = rep.costs[1], min(rep.costs[2:])
    assert after_init == pytest.approx(best, rel=1e-8, abs=1e-12 * rep.costs[0])
    assert max(rep.conds) < 1 + 1e-6


def test_gauge_improves_conditioning_in_separable_environment(rng):
    A_L, A_R, _ = strip_pair(8)
    env = separable_env(rng, A_L, A_R)
    _, _, with_g = U.update_pair(A_L, A_R, HEIS_GATE, env, U.UpdateSettings(D=2))
    _, _, without = U.update_pair(A_L, A_R, HEIS_GATE, env, U.UpdateSettings(D=2, gauge="none"))
    assert np.median(with_g.conds) < np.median(without.conds)


def test_truncation_reduces_bond():
    A_L, A_R, env = strip_pair(5)
    new_L, new_R, _ = U.update_pair(A_L, A_R, HEIS_GATE, env, U.UpdateSettings(D=1))
    assert new_L.shape[4] == new_R.shape[2] == 1
    assert new_L.shape[:4] == A_L.shape[:4]


def test_gate_pair_is_exact():
    A_L, A_R, _ = strip_pair(7)
    GL, GR = U.gate_pair(A_L, A_R, HEIS_GATE)
    ref = np.einsum("pqxy,xuldm,yvmer->puldqver", HEIS_GATE.reshape(2, 2, 2, 2), A_L, A_R)
    np.testing.assert_allclose(np.einsum("puldm,qvmer->puldqver", GL, GR), ref, atol=1e-12)


def test_settings_validation():
    with pytest.raises(ValueError):
        U.UpdateSettings(D=2, gauge="sideways")
    with pytest.raises(ValueError):
        U.UpdateSettings(D=0)
    assert U.UpdateSettings(D=2).use_svd_init and not U.UpdateSettings(D=2, gauge="none").use_svd_init
    assert U.UpdateSettings(D=2).pinv.relative_cutoff < U.UpdateSettings(D=2, gauge="none").pinv.relative_cutoff
