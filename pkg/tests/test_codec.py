from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import subspace_angles

from memcil import container
from memcil.codec import (Code, DownsampleCodec, IdentityCodec, PcaCodec, cost_ratio, decode, encode,
                          fit_incremental, make_codec)
from memcil.errors import ConfigError, IntegrityError, ParseError, ShapeError, StateError


def _aniso(seed, n=400, d=12):
    # well separated spectrum: 4, 3.5, ..., then a noise floor
    rng = np.random.default_rng(seed)
    scales = np.concatenate([np.linspace(4, 2.5, 4), np.full(d - 4, 0.3)])
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    return (rng.normal(size=(n, d)) * scales) @ q.T + rng.normal(size=d)


def _batch_pca(x, k):
    # oracle: eigendecomposition of the sample covariance
    c = np.cov(x, rowvar=False, bias=True)
    vals, vecs = np.linalg.eigh(c)
    return vecs[:, np.argsort(vals)[::-1][:k]].T


def test_identity_round_trip_exact():
    x = np.random.default_rng(0).normal(size=7)
    c = IdentityCodec(7)
    code = encode(c, x, label=3)
    np.testing.assert_array_equal(code.payload, x)
    assert code.label == 3
    np.testing.assert_array_equal(decode(c, code), x)
    assert cost_ratio(c) == 1


def test_downsample_cifar_shape():
    c = DownsampleCodec((32, 32, 3), 2)
    x = np.random.default_rng(0).normal(size=32 * 32 * 3)
    assert len(encode(c, x).payload) == 16 * 16 * 3
    assert cost_ratio(c) == Fraction(1, 4)


def test_downsample_constant_image_exact():
    c = DownsampleCodec((8, 8, 2), 2)
    x = np.full(128, 1.75)
    np.testing.assert_array_equal(c.roundtrip(x[None])[0], x)


def test_downsample_block_means():
    img = np.arange(16.0).reshape(4, 4, 1)
    payload = DownsampleCodec((4, 4, 1), 2).encode(img.reshape(-1)).payload
    np.testing.assert_allclose(payload, [2.5, 4.5, 10.5, 12.5])


def test_downsample_factor_must_divide():
    with pytest.raises(ConfigError):
        DownsampleCodec((6, 6, 1), 4)


@pytest.mark.parametrize("d,k,r", [(3072, 1024, Fraction(1, 3)), (3072, 256, Fraction(1, 12)),
                                   (3072, 512, Fraction(1, 6))])
def test_pca_cost_ratio_reference_settings(d, k, r):
    assert cost_ratio(PcaCodec(d, k)) == r


def test_make_codec_pca_rounds_components():
    assert make_codec("pca", (3072,), Fraction(1, 3)).k == 1024
    assert make_codec("pca", (16,), Fraction(1, 3)).k == 5
    assert make_codec("downsample", (8, 8, 1), Fraction(1, 4)).factor == 2
    with pytest.raises(ConfigError):
        make_codec("downsample", (8, 8, 1), Fraction(1, 3))
    with pytest.raises(ConfigError):
        make_codec("pca", (16,), Fraction(0))


def test_pca_k_larger_than_d():
    with pytest.raises(ConfigError):
        PcaCodec(4, 5)


def test_unfitted_pca_state_error():
    with pytest.raises(StateError):
        PcaCodec(4, 2).encode(np.zeros(4))


def test_fit_dimension_mismatch():
    with pytest.raises(ShapeError):
        PcaCodec(4, 2).fit_incremental(np.zeros((3, 5)))


def test_data_in_affine_subspace_reconstructs():
    rng = np.random.default_rng(1)
    basis, _ = np.linalg.qr(rng.normal(size=(10, 3)))
    x = rng.normal(size=(40, 3)) @ basis.T + rng.normal(size=10)
    c = fit_incremental(PcaCodec(10, 3), x)
    assert np.abs(c.roundtrip(x) - x).max() < 1e-6


def test_subspace_data_in_two_batches_reconstructs():
    rng = np.random.default_rng(2)
    basis, _ = np.linalg.qr(rng.normal(size=(10, 3)))
    x = rng.normal(size=(40, 3)) @ basis.T + 5.0
    c = PcaCodec(10, 3).fit_incremental(x[:20]).fit_incremental(x[20:])
    assert np.abs(c.roundtrip(x) - x).max() < 1e-6


def test_single_repeated_point():
    p = np.random.default_rng(3).normal(size=6)
    c = PcaCodec(6, 2).fit_incremental(np.tile(p, (5, 1)))
    np.testing.assert_allclose(c.mean, p, atol=1e-15)
    np.testing.assert_allclose(c.roundtrip(p[None])[0], p, atol=1e-12)


def test_full_rank_k_equals_d():
    x = np.random.default_rng(4).normal(size=(50, 6))
    c = PcaCodec(6, 6).fit_incremental(x)
    assert np.abs(c.roundtrip(x) - x).max() < 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_two_halves_match_batch_pca(seed):
    x = _aniso(seed)
    c = PcaCodec(x.shape[1], 4).fit_incremental(x[:200]).fit_incremental(x[200:])
    angles = subspace_angles(c.components.T, _batch_pca(x, 4).T)
    assert angles.max() < 0.1
    np.testing.assert_allclose(c.mean, x.mean(axis=0), atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_many_small_batches_match_batch_pca(seed):
    x = _aniso(seed + 10)
    c = PcaCodec(x.shape[1], 4)
    for part in np.array_split(x, 10):
        c = c.fit_incremental(part)
    assert subspace_angles(c.components.T, _batch_pca(x, 4).T).max() < 0.1


def test_short_first_batch_is_padded_orthonormal():
    x = np.random.default_rng(5).normal(size=(2, 8))
    c = PcaCodec(8, 5).fit_incremental(x)
    g = c.components @ c.components.T
    assert np.abs(g - np.eye(5)).max() < 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8), st.integers(1, 4))
def test_components_orthonormal_after_any_updates(seed, k, batches):
    rng = np.random.default_rng(seed)
    c = PcaCodec(8, k)
    for _ in range(batches):
        c = c.fit_incremental(rng.normal(size=(int(rng.integers(1, 12)), 8)) * rng.uniform(0.1, 3))
    g = c.components @ c.components.T
    off = g - np.diag(np.diag(g))
    assert np.abs(off).max() < 1e-8
    assert np.abs(np.diag(g) - 1).max() < 1e-8


def test_reconstruction_mse_non_increasing_in_k():
    x = _aniso(7, d=16)
    mses = []
    for k in (1, 2, 4, 8, 16):
        c = PcaCodec(16, k).fit_incremental(x[:200]).fit_incremental(x[200:])
        mses.append(np.mean((c.roundtrip(x) - x) ** 2))
    assert all(b <= a + 1e-12 for a, b in zip(mses, mses[1:]))


@pytest.mark.parametrize("codec", [IdentityCodec(16), DownsampleCodec((4, 4, 1), 2),
                                   PcaCodec(16, 5).fit_incremental(np.eye(16))])
def test_cost_accounting_and_dimensions(codec):
    x = np.random.default_rng(0).normal(size=(3, 16))
    codes = codec.encode_many(x, [1, 1, 2])
    for code in codes:
        assert Fraction(len(code)) == codec.cost_ratio() * 16
        assert codec.decode(code).shape == (16,)
    assert [c.payload.tobytes() for c in codes] == [c.payload.tobytes()
                                                    for c in codec.encode_many(x, [1, 1, 2])]


def test_fit_returns_new_value_and_stateless_kinds_unchanged():
    c0 = PcaCodec(4, 2)
    c1 = c0.fit_incremental(np.random.default_rng(0).normal(size=(5, 4)))
    assert not c0.fitted and c1.fitted and c1.codec_id != c0.codec_id
    ident = IdentityCodec(4)
    assert ident.fit_incremental(np.zeros((2, 4))) is ident


def test_decode_with_wrong_codec_is_integrity_error():
    x = np.random.default_rng(0).normal(size=(6, 4))
    a = PcaCodec(4, 2).fit_incremental(x[:3])
    b = a.fit_incremental(x[3:])
    with pytest.raises(IntegrityError):
        b.decode(a.encode(x[0]))
    with pytest.raises(IntegrityError):
        IdentityCodec(4).decode(Code(np.zeros(4), "identity-5", 1))


@pytest.mark.parametrize("codec", [IdentityCodec(6), DownsampleCodec((4, 4, 2), 2),
                                   PcaCodec(6, 3).fit_incremental(np.random.default_rng(1).normal(size=(9, 6)))])
def test_container_round_trip(codec):
    back = container.load_codec(container.dump_codec(codec))
    assert back.codec_id == codec.codec_id
    x = np.random.default_rng(2).normal(size=(4, codec.input_dim))
    np.testing.assert_allclose(back.roundtrip(x), codec.roundtrip(x), atol=1e-5)


def test_container_rejects_corruption():
    blob = container.dump_codec(PcaCodec(6, 3).fit_incremental(np.eye(6)))
    with pytest.raises(ParseError, match="offset 0"):
        container.load_codec(b"XXXX" + blob[4:])
    with pytest.raises(ParseError):
        container.load_codec(blob[:-3])
    with pytest.raises(ParseError, match="trailing"):
        container.load_codec(blob + b"\0")
