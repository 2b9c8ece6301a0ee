"""
Observed-space score differences and score-change matrices.

The three families of differences (observational vs first set, observational
vs second set, first vs second set) are produced by a pluggable estimator,
carried into the latent space of a candidate encoder and averaged into the
score-change matrices D_t(h), D(h) and D̃(h).
"""

import dataclasses
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence, Tuple

import numpy as np

from score_crl.scm import OBS, EnvironmentId, QuadraticScm, env1, env2, latent_score_diff
from score_crl.seeding import RngLike, as_rng
from score_crl.transform import (
    DecoderGlm,
    EncoderLinear,
    decode,
    encode,
    encoder_inverse_jacobian,
    observed_score_transport,
)

EnvPair = Tuple[EnvironmentId, EnvironmentId]
FAMILIES = ("d_obs1", "d_obs2", "d_pair")


@dataclass(frozen=True, eq=False)
class ScoreDiffBatch:
    """
    Score differences at the observational samples.

    ``d_obs1[m, k]`` is (s_X - s_X^m)(x_k), ``d_obs2[m, k]`` is
    (s_X - s̃_X^m)(x_k) and ``d_pair[m, k]`` is (s_X^m - s̃_X^m)(x_k); each array
    has shape (n, n_s, d). ``z_samples`` is only kept on the oracle side.
    """

    x_samples: np.ndarray
    d_obs1: np.ndarray
    d_obs2: np.ndarray
    d_pair: np.ndarray
    z_samples: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        x = np.atleast_2d(np.asarray(self.x_samples, dtype=float))
        object.__setattr__(self, "x_samples", x)
        n_s, d = x.shape
        shape = None
        for name in FAMILIES:
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 3 or arr.shape[1:] != (n_s, d):
                raise ValueError(f"{name} has shape {arr.shape}, expected (n, {n_s}, {d})")
            if shape is not None and arr.shape != shape:
                raise ValueError(f"{name} shape {arr.shape} differs from {shape}")
            shape = arr.shape
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.d_pair.shape[0]

    @property
    def n_s(self) -> int:
        return self.x_samples.shape[0]

    @property
    def d(self) -> int:
        return self.x_samples.shape[1]

    def family(self, name: str) -> np.ndarray:
        if name not in FAMILIES:
            raise ValueError(f"Unknown family {name!r}")
        return getattr(self, name)

    def relabel_second(self, perm: Sequence[int]) -> "ScoreDiffBatch":
        """
        Relabel the second interventional set so that its m-th environment is
        the old environment ``perm[m]``. The pair family is rebuilt from the
        telescoping identity (s^m - s̃^π(m)) = (s - s̃^π(m)) - (s - s^m).
        """
        perm = list(perm)
        if sorted(perm) != list(range(self.n)):
            raise ValueError(f"{perm} is not a permutation of range({self.n})")
        d_obs2 = self.d_obs2[perm]
        return dataclasses.replace(self, d_obs2=d_obs2, d_pair=d_obs2 - self.d_obs1)

    def without_latents(self) -> "ScoreDiffBatch":
        """The batch as the fitting code sees it: x-space quantities only."""
        return dataclasses.replace(self, z_samples=None)


@dataclass(frozen=True, eq=False)
class ScoreChangeMatrices:
    """D_t(h), D(h), D̃(h); entry [i, m] is the mean |difference| of coordinate i in pair m."""

    d_t: np.ndarray
    d: np.ndarray
    d_tilde: np.ndarray

    @property
    def n(self) -> int:
        return self.d_t.shape[0]

    def permuted_rows(self, perm: Sequence[int]) -> "ScoreChangeMatrices":
        perm = list(perm)
        return ScoreChangeMatrices(self.d_t[perm], self.d[perm], self.d_tilde[perm])


class ScoreDiffEstimator(Protocol):
    """Anything that can estimate the observed score difference of two environments."""

    def score_diffs(self, x_samples: np.ndarray, env_pair: EnvPair) -> np.ndarray:
        """Return s_a(x_k) - s_b(x_k) as an (n_s, d) array for env_pair = (a, b)."""
        ...


class OracleEstimator:
    """
    Exact score differences computed from the generating latents.

    The latent samples stay inside the oracle; callers pass only x.
    """

    def __init__(self, scm: QuadraticScm, dec: DecoderGlm, z_samples: np.ndarray) -> None:
        self.scm = scm
        self.dec = dec
        self.z_samples = np.atleast_2d(np.asarray(z_samples, dtype=float))
        self._transport: Optional[np.ndarray] = None

    def _carrier(self) -> np.ndarray:
        if self._transport is None:
            self._transport = observed_score_transport(self.dec, self.z_samples)
        return self._transport

    def score_diffs(self, x_samples: np.ndarray, env_pair: EnvPair) -> np.ndarray:
        if np.shape(x_samples)[0] != self.z_samples.shape[0]:
            raise ValueError("The oracle is bound to the samples it was built with")
        latent = latent_score_diff(self.scm, env_pair[0], env_pair[1], self.z_samples)
        return np.einsum("kdn,kn->kd", self._carrier(), latent)


class NoisedEstimator:
    """Adds i.i.d. Normal(0, tau²) noise to every entry of a base estimator's output."""

    def __init__(self, base: ScoreDiffEstimator, tau: float, seed: RngLike = None) -> None:
        if tau < 0:
            raise ValueError(f"tau must be >= 0, got {tau}")
        self.base = base
        self.tau = tau
        self.rng = as_rng(seed)

    def score_diffs(self, x_samples: np.ndarray, env_pair: EnvPair) -> np.ndarray:
        clean = self.base.score_diffs(x_samples, env_pair)
        return clean + self.rng.normal(0.0, self.tau, size=clean.shape)


def build_score_batch(
    estimator: ScoreDiffEstimator,
    x_samples: np.ndarray,
    n: int,
    z_samples: Optional[np.ndarray] = None,
    seed: Optional[int] = None,
) -> ScoreDiffBatch:
    """
    Query an estimator for all three families and every m.

    Queries run in a fixed order (m ascending; obs-vs-first, obs-vs-second,
    first-vs-second), so stochastic estimators stay reproducible.
    """
    x_samples = np.atleast_2d(np.asarray(x_samples, dtype=float))
    families = {name: [] for name in FAMILIES}
    for m in range(n):
        families["d_obs1"].append(estimator.score_diffs(x_samples, (OBS, env1(m))))
        families["d_obs2"].append(estimator.score_diffs(x_samples, (OBS, env2(m))))
        families["d_pair"].append(estimator.score_diffs(x_samples, (env1(m), env2(m))))
    return ScoreDiffBatch(
        x_samples=x_samples,
        z_samples=z_samples,
        seed=seed,
        **{name: np.stack(arrays) for name, arrays in families.items()},
    )


def oracle_score_diffs(
    scm: QuadraticScm, dec: DecoderGlm, z_samples: np.ndarray, seed: Optional[int] = None
) -> ScoreDiffBatch:
    """
    Exact score-difference batch at the observational latents ``z_samples``.

    Raises:
        SingularQuadraticForm: If a latent sits where a mechanism is not differentiable
    """
    z_samples = np.atleast_2d(np.asarray(z_samples, dtype=float))
    x_samples = decode(dec, z_samples)
    return build_score_batch(OracleEstimator(scm, dec, z_samples), x_samples, scm.n, z_samples, seed)


def transport_to_candidate(
    enc: EncoderLinear, batch: ScoreDiffBatch
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Carry every observed difference into the latent space of ``enc``:
    [J_{h⁻¹}(ẑ_k)]ᵀ · diff(x_k) with ẑ_k = h(x_k).

    Returns:
        (t_obs1, t_obs2, t_pair), each of shape (n, n_s, n)
    """
    z_hat = encode(enc, batch.x_samples)
    jac = encoder_inverse_jacobian(enc, z_hat)
    return tuple(np.einsum("kdi,mkd->mki", jac, batch.family(name)) for name in FAMILIES)


def score_change_matrices(enc: EncoderLinear, batch: ScoreDiffBatch) -> ScoreChangeMatrices:
    """Empirical D_t(h), D(h), D̃(h) over the observational samples."""
    t_obs1, t_obs2, t_pair = transport_to_candidate(enc, batch)
    # mean over samples gives [m, i]; the matrices are indexed [i, m]
    return ScoreChangeMatrices(
        d_t=np.abs(t_pair).mean(axis=1).T,
        d=np.abs(t_obs1).mean(axis=1).T,
        d_tilde=np.abs(t_obs2).mean(axis=1).T,
    )


def normalized(matrix: np.ndarray) -> np.ndarray:
    """Divide by the largest entry (all-zero matrices stay zero)."""
    peak = float(np.max(matrix)) if matrix.size else 0.0
    return matrix / peak if peak > 0 else np.zeros_like(matrix)


def support(matrix: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Entries above ``eps`` after max-normalization."""
    return normalized(matrix) > eps
