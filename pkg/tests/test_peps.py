import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpeps import peps as P
from fpeps.environment import ContractionSettings, log_norm_squared
from fpeps.oracle import peps_to_dense, product_dense
from conftest import crandn


def test_separable_embedding_is_product_state():
    vecs = np.array([0.6, 0.8j])
    psi = P.init_separable_with_noise(3, 2, 3, vecs, noise_amplitude=0.0)
    psi.validate()
    np.testing.assert_allclose(peps_to_dense(psi), product_dense([vecs] * 9), atol=1e-14)


def test_separable_noise_fills_zeros_only():
    psi = P.init_separable_with_noise(3, 2, 2, P.neel_states(3), 1e-3, seed=4)
    t = psi[1, 1]
    assert t[0, 0, 0, 0, 0] == 1.0  # even sublattice: up spin kept exactly
    assert t[1, 0, 0, 0, 0] != 0.0
    assert 0 < np.abs(t[:, 1:]).max() <= 1e-3
    with pytest.raises(ValueError):
        P.init_separable_with_noise(2, 2, 0, np.array([1.0, 0.0]))


def test_bond_extents_and_validate():
    psi = P.random_peps(3, 4, 2, 3, seed=1)
    psi.validate()
    assert psi.shape == (3, 4) and psi.D == 3 and psi.d == 2
    broken = psi.copy()
    broken[0, 0] = broken[0, 0][:, :, :, :2, :]
    with pytest.raises(ValueError, match="vertical bond"):
        broken.validate()


def test_embed_preserves_state():
    psi = P.random_peps(3, 3, 2, 2, seed=2)
    big = P.embed(psi, 3, noise_amplitude=0.0)
    assert big.D == 3
    np.testing.assert_allclose(peps_to_dense(big), peps_to_dense(psi), atol=1e-12)
    with pytest.raises(ValueError):
        P.embed(big, 2)


def test_transposed_and_flipped_are_relabelings():
    psi = P.random_peps(2, 3, 2, 2, seed=5)
    v = peps_to_dense(psi).reshape((2,) * 6)  # row-major site order
    vt = peps_to_dense(psi.transposed()).reshape((2,) * 6)
    np.testing.assert_allclose(vt, v.transpose(0, 3, 1, 4, 2, 5), atol=1e-12)
    vf = peps_to_dense(psi.flipped()).reshape((2,) * 6)
    np.testing.assert_allclose(vf, v.transpose(3, 4, 5, 0, 1, 2), atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["right", "down"]))
def test_gauge_insertion_leaves_state_invariant(seed, direction):
    rng = np.random.default_rng(seed)
    psi = P.random_peps(3, 3, 2, 2, seed=seed)
    m = crandn(rng, 2, 2) + 2 * np.eye(2)
    out = P.insert_gauge(psi, (1, 1), direction, m)
    np.testing.assert_allclose(peps_to_dense(out), peps_to_dense(psi), rtol=1e-10, atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6))
def test_normalize_idempotent(seed):
    psi = P.random_peps(3, 3, 2, 2, seed=seed)
    n1 = P.normalize(psi)
    s = ContractionSettings(D_prime=16)
    assert log_norm_squared(n1, s) == pytest.approx(0.0, abs=1e-10)
    m = P.max_abs_elements(n1)
    assert np.ptp(m) < 1e-12 * m.max()
    n2 = P.normalize(n1)
    for site in n1.sites():
        np.testing.assert_allclose(n2[site], n1[site], rtol=1e-10, atol=1e-14)


def test_normalize_rejects_zero_site():
    psi = P.random_peps(2, 2, 2, 2, seed=0)
    psi[0, 1] = np.zeros_like(psi[0, 1])
    with pytest.raises(P.ScalingError):
        P.normalize(psi)


@settings(max_examples=15, deadline=None)
@given(L=st.integers(1, 4), D=st.integers(1, 3), seed=st.integers(0, 10**6))
def test_checkpoint_round_trip(L, D, seed, tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "state.peps"
    psi = P.random_peps(L, L, 2, D, seed=seed)
    P.save(psi, path, {"seed": seed})
    back = P.load(path)
    for site in psi.sites():
        assert np.array_equal(back[site], psi[site])
    assert P.read_metadata(path) == {"seed": str(seed)}
    assert path.stat().st_size == P.checkpoint_size([psi[s].shape for s in psi.sites()])


def test_checkpoint_corruption(tmp_path):
    path = tmp_path / "s.peps"
    P.save(P.random_peps(2, 2, 2, 2), path)
    data = path.read_bytes()
    (tmp_path / "magic.peps").write_bytes(b"XXXX" + data[4:])
    (tmp_path / "short.peps").write_bytes(data[:-8])
    (tmp_path / "long.peps").write_bytes(data + b"\0")
    for name, msg in (("magic", "magic"), ("short", "truncated"), ("long", "trailing")):
        with pytest.raises(P.CheckpointError, match=msg):
            P.load(tmp_path / f"{name}.peps")
    with pytest.raises(ValueError):
        P.save(P.random_peps(2, 3, 2, 2), tmp_path / "rect.peps")
