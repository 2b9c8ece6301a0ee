"""
Tests for the tanh decoder, the linear-arctanh encoder and score transport.
"""

import numpy as np
import pytest

from score_crl.errors import DomainViolation, RankDeficientEncoder, RankDeficientJacobian
from score_crl.seeding import derive_rng
from score_crl.transform import (
    DecoderGlm,
    EncoderLinear,
    decode,
    decoder_jacobian,
    encode,
    encoder_inverse,
    encoder_inverse_jacobian,
    encoder_jacobian,
    encoder_pinv,
    observed_score_diff,
    observed_score_transport,
    pseudo_inverse,
    sample_decoder,
    true_encoder,
)


def random_latents(n: int, k: int, seed: int) -> np.ndarray:
    return derive_rng(seed, 50).normal(size=(k, n))


# --- Decoder ---


def test_sample_decoder_shapes_and_rank():
    """Sampled decoders have full column rank."""
    dec = sample_decoder(1, 1, seed=0)
    assert dec.G.shape == (1, 1)
    assert dec.G[0, 0] != 0

    dec = sample_decoder(5, 25, seed=0)
    assert dec.G.shape == (25, 5)
    assert np.linalg.matrix_rank(dec.G) == 5
    assert np.linalg.svd(dec.G, compute_uv=False).min() > 1e-6


def test_sample_decoder_rank_over_many_seeds():
    """Random draws pass the rank check."""
    for seed in range(100):
        assert np.linalg.svd(sample_decoder(5, 25, seed=seed).G, compute_uv=False).min() > 1e-6


def test_decoder_validation():
    """d < n and rank-deficient matrices are refused."""
    with pytest.raises(ValueError):
        DecoderGlm(np.ones((2, 3)))
    with pytest.raises(ValueError):
        DecoderGlm(np.ones((4, 2)))


def test_decode_examples():
    """tanh of the linear map."""
    dec = DecoderGlm(np.array([[1.0]]))
    np.testing.assert_allclose(decode(dec, np.array([1.0])), [np.tanh(1.0)])
    np.testing.assert_allclose(decode(dec, np.array([1.0])), [0.76159], atol=1e-5)
    np.testing.assert_array_equal(decode(sample_decoder(3, 6, seed=1), np.zeros(3)), np.zeros(6))


def test_decoder_jacobian_examples():
    """J = G at the origin; scalar chain rule elsewhere."""
    dec = sample_decoder(3, 6, seed=2)
    np.testing.assert_allclose(decoder_jacobian(dec, np.zeros(3)), dec.G)
    scalar = DecoderGlm(np.array([[2.0]]))
    np.testing.assert_allclose(decoder_jacobian(scalar, np.array([1.0])), [[2.0 * (1 - np.tanh(2.0) ** 2)]])
    np.testing.assert_allclose(decoder_jacobian(scalar, np.array([1.0])), [[0.1413]], atol=1e-4)


def test_decoder_jacobian_matches_finite_differences():
    """Batched Jacobians agree with central differences of decode."""
    dec = sample_decoder(3, 7, seed=3)
    step = 1e-6
    for z in random_latents(3, 10, 3):
        fd = np.empty((7, 3))
        for i in range(3):
            bump = np.zeros(3)
            bump[i] = step
            fd[:, i] = (decode(dec, z + bump) - decode(dec, z - bump)) / (2 * step)
        assert np.max(np.abs(decoder_jacobian(dec, z) - fd)) < 1e-6


# --- Score transport ---


def test_observed_score_diff_examples():
    """Zero maps to zero; the identity Jacobian passes the difference through."""
    dec = sample_decoder(3, 6, seed=4)
    np.testing.assert_allclose(observed_score_diff(dec, np.ones(3) * 0.2, np.zeros(3)), np.zeros(6))
    scalar = DecoderGlm(np.array([[1.0]]))
    np.testing.assert_allclose(observed_score_diff(scalar, np.array([0.0]), np.array([3.0])), [3.0])


def test_observed_score_diff_pulls_back_to_latent():
    """Jᵀ · (J†)ᵀ v = v and the result lies in the column space of J."""
    dec = sample_decoder(4, 9, seed=5)
    rng = derive_rng(5, 51)
    z = random_latents(4, 100, 5)
    v = rng.normal(size=(100, 4))
    observed = observed_score_diff(dec, z, v)
    jac = decoder_jacobian(dec, z)
    pulled = np.einsum("kdn,kd->kn", jac, observed)
    assert np.max(np.abs(pulled - v)) < 1e-8
    for k in range(100):
        projector = jac[k] @ np.linalg.pinv(jac[k])
        assert np.max(np.abs(projector @ observed[k] - observed[k])) < 1e-10


def test_observed_score_transport_detects_rank_loss():
    """Saturated tanh units zero out the Jacobian."""
    dec = DecoderGlm(np.array([[1.0], [2.0]]))
    with pytest.raises(RankDeficientJacobian):
        observed_score_transport(dec, np.array([[40.0]]))


def test_pseudo_inverse_matches_numpy():
    """SVD pseudoinverse agrees with numpy on stacks."""
    stack = derive_rng(6, 52).normal(size=(4, 5, 3))
    pinv, s = pseudo_inverse(stack)
    np.testing.assert_allclose(pinv, np.linalg.pinv(stack), atol=1e-12)
    assert s.shape == (4, 3)


# --- Encoder ---


def test_encode_examples():
    """Zero maps to zero; a scalar encoder inverts the scalar decoder."""
    enc = EncoderLinear(np.array([[1.0]]))
    np.testing.assert_allclose(encode(enc, np.array([0.0])), [0.0])
    np.testing.assert_allclose(encode(enc, np.tanh(np.array([0.5]))), [0.5])


def test_true_encoder_round_trip():
    """encode(G†, decode(G, z)) = z."""
    dec = sample_decoder(5, 25, seed=7)
    enc = true_encoder(dec)
    z = random_latents(5, 100, 7)
    assert np.max(np.abs(encode(enc, decode(dec, z)) - z)) < 1e-10


def test_encode_refuses_boundary():
    """arctanh is undefined at ±1."""
    enc = EncoderLinear(np.ones((1, 2)))
    with pytest.raises(DomainViolation):
        encode(enc, np.array([0.5, 1.0]))
    with pytest.raises(DomainViolation):
        encoder_jacobian(enc, np.array([-1.0, 0.0]))


def test_encoder_inverse_examples():
    """Exact inverse when square; right inverse when d > n."""
    np.testing.assert_allclose(encoder_inverse(EncoderLinear(np.eye(2)), np.zeros(2)), np.zeros(2))

    dec = sample_decoder(4, 4, seed=8)
    enc = true_encoder(dec)
    x = decode(dec, random_latents(4, 50, 8))
    assert np.max(np.abs(encoder_inverse(enc, encode(enc, x)) - x)) < 1e-10

    wide = EncoderLinear(derive_rng(8, 53).normal(size=(3, 7)))
    z_hat = random_latents(3, 50, 9)
    assert np.max(np.abs(encode(wide, encoder_inverse(wide, z_hat)) - z_hat)) < 1e-10


def test_encoder_pinv_detects_rank_loss():
    """Repeated rows are not of full row rank."""
    with pytest.raises(RankDeficientEncoder):
        encoder_pinv(EncoderLinear(np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]])))
    with pytest.raises(RankDeficientEncoder):
        encoder_pinv(EncoderLinear(np.ones((3, 2))))


def test_encoder_inverse_jacobian_examples():
    """At the origin the Jacobian of a square inverse is H⁻¹."""
    h = derive_rng(10, 54).normal(size=(3, 3)) + 3 * np.eye(3)
    enc = EncoderLinear(h)
    np.testing.assert_allclose(encoder_inverse_jacobian(enc, np.zeros(3)), np.linalg.inv(h), atol=1e-12)


def test_encoder_inverse_jacobian_matches_finite_differences():
    """Central differences of encoder_inverse."""
    enc = EncoderLinear(derive_rng(11, 55).normal(size=(3, 6)))
    step = 1e-6
    for z_hat in random_latents(3, 10, 11):
        fd = np.empty((6, 3))
        for i in range(3):
            bump = np.zeros(3)
            bump[i] = step
            fd[:, i] = (encoder_inverse(enc, z_hat + bump) - encoder_inverse(enc, z_hat - bump)) / (2 * step)
        assert np.max(np.abs(encoder_inverse_jacobian(enc, z_hat) - fd)) < 1e-6


def test_encoder_jacobians_compose_to_identity():
    """J_h(x) · J_{h⁻¹}(h(x)) = I at the true encoder."""
    dec = sample_decoder(4, 10, seed=12)
    enc = true_encoder(dec)
    x = decode(dec, random_latents(4, 20, 12))
    product = encoder_jacobian(enc, x) @ encoder_inverse_jacobian(enc, encode(enc, x))
    assert np.max(np.abs(product - np.eye(4))) < 1e-8


def test_permuted_encoder_reorders_outputs():
    """Row i of the permuted encoder is row perm[i]."""
    enc = EncoderLinear(derive_rng(13, 56).normal(size=(3, 5)))
    x = np.tanh(derive_rng(13, 57).normal(size=(4, 5)))
    np.testing.assert_allclose(encode(enc.permuted([2, 0, 1]), x), encode(enc, x)[:, [2, 0, 1]])
