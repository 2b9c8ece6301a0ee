"""
Shared fixtures: small synthetic problems with oracle score differences.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import pytest

from score_crl.scm import OBS, QuadraticScm, sample_er_dag, sample_latent, sample_mechanisms, sample_targets
from score_crl.scores import ScoreDiffBatch, oracle_score_diffs
from score_crl.seeding import derive_rng
from score_crl.transform import DecoderGlm, EncoderLinear, sample_decoder, true_encoder


@dataclass
class Problem:
    scm: QuadraticScm
    dec: DecoderGlm
    z: np.ndarray
    batch: ScoreDiffBatch

    @property
    def true_enc(self) -> EncoderLinear:
        return true_encoder(self.dec)


def build_problem(
    n: int = 3,
    d: int = 3,
    n_s: int = 50,
    seed: int = 0,
    density: float = 1.0,
    coupled: bool = True,
    mismatch: Optional[Sequence[int]] = None,
    shuffle: bool = False,
) -> Problem:
    dag = sample_er_dag(n, density, derive_rng(seed, 0))
    scm = sample_mechanisms(dag, derive_rng(seed, 1))
    t1, t2 = sample_targets(n, coupled, derive_rng(seed, 2), shuffle=shuffle, mismatch=mismatch)
    scm = scm.with_targets(t1, t2)
    dec = sample_decoder(n, d, derive_rng(seed, 3))
    z = sample_latent(scm, OBS, n_s, derive_rng(seed, 4))
    return Problem(scm=scm, dec=dec, z=z, batch=oracle_score_diffs(scm, dec, z, seed=seed))


@pytest.fixture
def make_problem() -> Callable[..., Problem]:
    return build_problem
