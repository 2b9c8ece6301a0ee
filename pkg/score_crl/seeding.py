"""
Seed derivation for reproducible experiments.

All randomness goes through counter-based Philox generators built from a
``numpy.random.SeedSequence``. A stream is identified by the master seed plus a
spawn key; the key layout is:

    (graph_index, STREAM_DAG)                  latent DAG
    (graph_index, STREAM_MECHANISMS)           A_i matrices and variances
    (graph_index, STREAM_TARGETS)              intervention target maps
    (graph_index, STREAM_DECODER)              decoder matrix G
    (graph_index, STREAM_LATENTS, env_code)    latent samples, one per environment
    (STREAM_INIT,) under the graph seed        encoder initialization
    (graph_index, STREAM_ESTIMATOR)            estimator noise

The graph seed is a 32-bit word drawn from (graph_index,) and is the seed the
fitting code receives. ``env_code`` is 0 for the observational environment,
1 + m for the first interventional set and 1 + n + m for the second. Streams are
independent, so any environment of any graph can be regenerated alone.
"""

from typing import Union

import numpy as np

STREAM_DAG = 0
STREAM_MECHANISMS = 1
STREAM_TARGETS = 2
STREAM_DECODER = 3
STREAM_LATENTS = 4
STREAM_INIT = 5
STREAM_ESTIMATOR = 6

RngLike = Union[None, int, np.random.Generator]


def derive_rng(master_seed: int, *key: int) -> np.random.Generator:
    """
    Build the generator of one sub-stream.

    Args:
        master_seed: Experiment-wide seed
        key: Spawn key components (see module docstring)

    Returns:
        A Philox-backed generator
    """
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def as_rng(seed: RngLike) -> np.random.Generator:
    """Accept a generator, an integer seed or None and return a generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        return np.random.Generator(np.random.Philox())
    return derive_rng(int(seed))


def env_code(kind: str, m: int, n: int) -> int:
    """Stream code of an environment (see module docstring)."""
    if kind == "obs":
        return 0
    if kind == "env1":
        return 1 + m
    return 1 + n + m


def graph_seed(master_seed: int, graph_index: int) -> int:
    """Seed handed to GSCALE-I for one graph and written to the results table."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(int(graph_index),))
    return int(seq.generate_state(1)[0])
