import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsrdiff.autograd import constant
from tsrdiff.codec import LatentCodec


def test_identity_codec_is_a_no_op():
    codec = LatentCodec(patch=1, channels=1, matrix=np.eye(1))
    x = np.random.default_rng(0).random((1, 5, 7))
    np.testing.assert_array_equal(codec.encode(x), x)


def test_patch_two_shape():
    codec = LatentCodec(patch=2, channels=1, seed=3)
    assert codec.encode(np.zeros((1, 4, 4))).shape == (4, 2, 2)
    assert codec.latent_shape((1, 32, 128)) == (4, 16, 64)


def test_both_round_trips_and_energy():
    rng = np.random.default_rng(1)
    codec = LatentCodec(patch=4, seed=0)
    for _ in range(100):
        x = rng.random((1, 32, 128))
        z = codec.encode(x)
        np.testing.assert_allclose(codec.decode(z), x, rtol=0, atol=1e-9)
        assert abs(np.linalg.norm(z) - np.linalg.norm(x)) < 1e-9
        zr = rng.standard_normal(z.shape)
        np.testing.assert_allclose(codec.encode(codec.decode(zr)), zr, rtol=0, atol=1e-9)


def test_decode_is_linear():
    rng = np.random.default_rng(2)
    codec = LatentCodec(patch=4, seed=5)
    z1, z2 = rng.standard_normal((2, 16, 4, 8))
    a, b = 1.7, -0.3
    np.testing.assert_allclose(codec.decode(a * z1 + b * z2), a * codec.decode(z1) + b * codec.decode(z2),
                               rtol=0, atol=1e-9)


def test_mixing_matrix_is_not_trivial():
    codec = LatentCodec(patch=4, seed=0)
    assert not np.allclose(codec.M, np.eye(16))


def test_node_decode_matches_array_decode():
    rng = np.random.default_rng(3)
    codec = LatentCodec(patch=4, seed=1)
    z = rng.standard_normal((3, 16, 8, 32))
    np.testing.assert_allclose(codec.decode_node(constant(z)).value, codec.decode(z), rtol=0, atol=1e-12)


def test_errors():
    with pytest.raises(ValueError):
        LatentCodec(patch=0)
    with pytest.raises(ValueError):
        LatentCodec(patch=2, matrix=np.ones((4, 4)))
    codec = LatentCodec(patch=4)
    with pytest.raises(ValueError):
        codec.encode(np.zeros((1, 30, 128)))
    with pytest.raises(ValueError):
        codec.decode(np.zeros((8, 8, 32)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), p=st.sampled_from([1, 2, 4]), c=st.integers(1, 3),
       h=st.integers(1, 4), w=st.integers(1, 4))
def test_shape_contract_and_exactness(seed, p, c, h, w):
    codec = LatentCodec(patch=p, channels=c, seed=seed % 1000)
    x = np.random.default_rng(seed).random((2, c, h * p, w * p))
    z = codec.encode(x)
    assert z.shape == (2, c * p * p, h, w)
    np.testing.assert_allclose(codec.decode(z), x, rtol=0, atol=1e-9)
