"""
The tanh generalized-linear decoder and the linear-arctanh encoder family.

Every function accepts a single vector or a row-major batch; batched Jacobians
are stacked along the first axis.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from score_crl.errors import DomainViolation, RankDeficientEncoder, RankDeficientJacobian
from score_crl.seeding import RngLike, as_rng

DECODER_RANK_TOL = 1e-9
DECODER_REDRAW_TOL = 1e-6
JACOBIAN_RANK_TOL = 1e-10
ENCODER_RANK_TOL = 1e-10
ARCTANH_MARGIN = 1e-12
PINV_RCOND = 1e-12


@dataclass(frozen=True, eq=False)
class DecoderGlm:
    """x = tanh(G z) with G of shape (d, n) and full column rank."""

    G: np.ndarray

    def __post_init__(self) -> None:
        g = np.atleast_2d(np.asarray(self.G, dtype=float))
        d, n = g.shape
        if d < n:
            raise ValueError(f"Decoder needs d >= n, got d={d}, n={n}")
        smallest = np.linalg.svd(g, compute_uv=False).min()
        if smallest <= DECODER_RANK_TOL:
            raise ValueError(f"Decoder matrix is rank deficient (smallest singular value {smallest:.3g})")
        object.__setattr__(self, "G", g)

    @property
    def n(self) -> int:
        return self.G.shape[1]

    @property
    def d(self) -> int:
        return self.G.shape[0]


@dataclass(frozen=True, eq=False)
class EncoderLinear:
    """ẑ = H arctanh(x) with H of shape (n, d)."""

    H: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "H", np.atleast_2d(np.asarray(self.H, dtype=float)))

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def d(self) -> int:
        return self.H.shape[1]

    def permuted(self, perm) -> "EncoderLinear":
        """Encoder whose i-th output is output ``perm[i]`` of this one."""
        return EncoderLinear(self.H[list(perm)])


def pseudo_inverse(m: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Moore-Penrose pseudoinverse through the SVD, with singular values below
    PINV_RCOND · σ_max treated as zero. Works on stacks of matrices.

    Returns:
        (pseudoinverse, singular values)
    """
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    cutoff = PINV_RCOND * s.max(axis=-1, keepdims=True)
    s_inv = np.where(s > cutoff, 1.0 / np.where(s > cutoff, s, 1.0), 0.0)
    pinv = np.swapaxes(vt, -1, -2) @ (s_inv[..., :, None] * np.swapaxes(u, -1, -2))
    return pinv, s


def sample_decoder(n: int, d: int, seed: RngLike = None) -> DecoderGlm:
    """
    Sample G with i.i.d. Normal(0, 1/d) entries, redrawn when nearly singular.
    """
    if d < n:
        raise ValueError(f"Decoder needs d >= n, got d={d}, n={n}")
    rng = as_rng(seed)
    while True:
        g = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, n))
        if np.linalg.svd(g, compute_uv=False).min() >= DECODER_REDRAW_TOL:
            return DecoderGlm(g)


def decode(dec: DecoderGlm, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("z must be finite")
    return np.tanh(z @ dec.G.T)


def decoder_jacobian(dec: DecoderGlm, z: np.ndarray) -> np.ndarray:
    """J = diag(1 - tanh²(G z)) G; shape (d, n) or (k, d, n)."""
    w = 1.0 - decode(dec, z) ** 2
    return w[..., :, None] * dec.G


def observed_score_transport(dec: DecoderGlm, z: np.ndarray) -> np.ndarray:
    """
    The matrices [J_g(z)†]ᵀ that carry latent score differences to observed
    ones, with the rank of every Jacobian checked.

    Raises:
        RankDeficientJacobian: If some J_g(z) has a singular value below 1e-10
    """
    jac = decoder_jacobian(dec, z)
    pinv, s = pseudo_inverse(jac)
    if np.any(s.min(axis=-1) < JACOBIAN_RANK_TOL):
        raise RankDeficientJacobian("Decoder Jacobian lost full column rank")
    return np.swapaxes(pinv, -1, -2)


def observed_score_diff(dec: DecoderGlm, z: np.ndarray, latent_diff: np.ndarray) -> np.ndarray:
    """
    Observed-space score difference at x = decode(z): [J_g(z)†]ᵀ · latent_diff.

    Args:
        dec: Decoder
        z: Latent vector (n,) or batch (k, n)
        latent_diff: Latent score difference of the same shape as ``z``

    Returns:
        Vector (d,) or batch (k, d)
    """
    transport = observed_score_transport(dec, z)
    return np.einsum("...dn,...n->...d", transport, np.asarray(latent_diff, dtype=float))


def _check_domain(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) >= 1.0 - ARCTANH_MARGIN):
        raise DomainViolation("Observation outside the open cube where arctanh is defined")
    return x


def encode(enc: EncoderLinear, x: np.ndarray) -> np.ndarray:
    return np.arctanh(_check_domain(x)) @ enc.H.T


def encoder_jacobian(enc: EncoderLinear, x: np.ndarray) -> np.ndarray:
    """J_h(x) = H diag(1 / (1 - x²)); shape (n, d) or (k, n, d)."""
    x = _check_domain(x)
    return enc.H * (1.0 / (1.0 - x**2))[..., None, :]


def encoder_pinv(enc: EncoderLinear) -> np.ndarray:
    """
    H† of shape (d, n).

    Raises:
        RankDeficientEncoder: If H is not of full row rank
    """
    pinv, s = pseudo_inverse(enc.H)
    if enc.n > enc.d or s.min() < ENCODER_RANK_TOL:
        raise RankDeficientEncoder(f"Encoder is not of full row rank (smallest singular value {s.min():.3g})")
    return pinv


def encoder_inverse(enc: EncoderLinear, z_hat: np.ndarray) -> np.ndarray:
    """x̂ = tanh(H† ẑ)."""
    return np.tanh(np.asarray(z_hat, dtype=float) @ encoder_pinv(enc).T)


def encoder_inverse_jacobian(enc: EncoderLinear, z_hat: np.ndarray) -> np.ndarray:
    """J_{h⁻¹}(ẑ) = diag(1 - tanh²(H† ẑ)) H†; shape (d, n) or (k, d, n)."""
    pinv = encoder_pinv(enc)
    w = 1.0 - np.tanh(np.asarray(z_hat, dtype=float) @ pinv.T) ** 2
    return w[..., :, None] * pinv


def true_encoder(dec: DecoderGlm) -> EncoderLinear:
    """The encoder H = G† that inverts ``dec`` on its image."""
    pinv, _ = pseudo_inverse(dec.G)
    return EncoderLinear(pinv)
