"""
Tests for latent DAGs, quadratic mechanisms, sampling, densities and scores.
"""

import numpy as np
import pytest

from score_crl.errors import SingularQuadraticForm
from score_crl.scm import (
    OBS,
    Dag,
    QuadraticScm,
    env1,
    env2,
    latent_score,
    latent_score_diff,
    log_density,
    mechanism,
    sample_er_dag,
    sample_latent,
    sample_mechanisms,
    sample_targets,
    score_support,
    true_coupling,
)
from score_crl.seeding import derive_rng


def single_node(var: float = 1.0) -> QuadraticScm:
    return QuadraticScm(
        dag=Dag.from_edges(1, []),
        quad={},
        noise_var=np.array([var]),
        int_var_1=np.array([var + 1.0]),
        int_var_2=np.array([var + 2.0]),
    )


def chain(a: float = 1.0) -> QuadraticScm:
    """0 -> 1 with A_1 = [a] and unit noise variances."""
    return QuadraticScm(
        dag=Dag.from_edges(2, [(0, 1)]),
        quad={1: np.array([[a]])},
        noise_var=np.ones(2),
        int_var_1=np.full(2, 2.0),
        int_var_2=np.full(2, 3.0),
    )


def random_scm(n: int, seed: int, coupled: bool = True) -> QuadraticScm:
    scm = sample_mechanisms(sample_er_dag(n, 0.7, derive_rng(seed, 0)), derive_rng(seed, 1))
    t1, t2 = sample_targets(n, coupled, derive_rng(seed, 2))
    return scm.with_targets(t1, t2)


def away_from_singularities(scm: QuadraticScm, k: int, seed: int) -> np.ndarray:
    """Latent points where every mechanism with parents exceeds 0.1."""
    rng = derive_rng(seed, 99)
    points = []
    while len(points) < k:
        z = rng.normal(0.0, 1.5, size=(1, scm.n))
        if all(mechanism(scm, j, z)[0] > 0.1 for j in range(scm.n) if scm.dag.parents[j]):
            points.append(z[0])
    return np.array(points)


# --- DAGs ---


def test_er_dag_zero_density_is_empty():
    """Zero density leaves every node a root."""
    dag = sample_er_dag(3, 0.0, seed=1)
    assert dag.edges() == []
    assert dag.parents == ((), (), ())


def test_er_dag_unit_density_is_complete():
    """Unit density adds every forward edge."""
    dag = sample_er_dag(3, 1.0, seed=1)
    assert dag.edges() == [(0, 1), (0, 2), (1, 2)]
    assert dag.topo_order == (0, 1, 2)


def test_er_dag_mean_edge_count():
    """Ten forward pairs at density 0.5 give five edges on average."""
    counts = [sample_er_dag(5, 0.5, derive_rng(123, k)).num_edges for k in range(1000)]
    assert abs(np.mean(counts) - 5.0) < 0.3


def test_dag_rejects_cycles_and_self_loops():
    """Edge lists that are not acyclic are refused."""
    with pytest.raises(ValueError):
        Dag.from_edges(3, [(0, 1), (1, 2), (2, 0)])
    with pytest.raises(ValueError):
        Dag(n=2, parents=((0,), ()), topo_order=(0, 1))


def test_dag_relabel_and_adjacency():
    """Relabeling moves edges with the nodes."""
    dag = Dag.from_edges(3, [(0, 2)])
    relabeled = dag.relabel([2, 1, 0])
    assert relabeled.edges() == [(2, 0)]
    assert relabeled.adjacency()[2, 0] == 1
    assert dag.children(0) == (2,)
    assert set(dag.to_networkx().edges()) == {(0, 2)}


# --- Mechanisms and targets ---


def test_mechanisms_without_edges():
    """A graph without edges has no quadratic forms."""
    scm = sample_mechanisms(sample_er_dag(4, 0.0, seed=0), seed=0)
    assert scm.quad == {}
    assert scm.noise_var.shape == (4,)


def test_mechanisms_positive_definite_and_variance_schedule():
    """A_i are symmetric positive definite; interventions add 1 and 2 to the noise variance."""
    for seed in range(20):
        scm = sample_mechanisms(sample_er_dag(5, 1.0, seed=seed), seed=seed)
        for a in scm.quad.values():
            np.testing.assert_allclose(a, a.T)
            assert np.linalg.eigvalsh(a).min() > 0
        assert np.all((scm.noise_var >= 0.5) & (scm.noise_var <= 1.5))
        np.testing.assert_allclose(scm.int_var_1 - scm.noise_var, 1.0, atol=1e-12)
        np.testing.assert_allclose(scm.int_var_2 - scm.noise_var, 2.0, atol=1e-12)


def test_scm_rejects_equal_variances():
    """An intervention that keeps the noise variance is not allowed."""
    with pytest.raises(ValueError):
        QuadraticScm(
            dag=Dag.from_edges(1, []),
            quad={},
            noise_var=np.array([1.0]),
            int_var_1=np.array([1.0]),
            int_var_2=np.array([2.0]),
        )


def test_scm_rejects_indefinite_form():
    """A_i must be positive definite."""
    with pytest.raises(ValueError):
        chain(a=-1.0)


def test_sample_targets_coupled_and_planted_mismatch():
    """Coupled maps coincide; a planted mismatch composes with the first map."""
    t1, t2 = sample_targets(4, coupled=True, seed=0)
    assert t1 == t2 == (0, 1, 2, 3)

    t1, t2 = sample_targets(3, coupled=False, seed=0, mismatch=[1, 2, 0])
    assert t1 == (0, 1, 2)
    assert t2 == (1, 2, 0)
    pi = true_coupling(t1, t2)
    assert all(t2[pi[m]] == t1[m] for m in range(3))


def test_sample_targets_random_mismatch_is_not_identity():
    """Without a planted σ the second map still differs from the first."""
    for seed in range(10):
        t1, t2 = sample_targets(3, coupled=False, seed=seed, shuffle=True)
        assert t1 != t2
        assert sorted(t2) == [0, 1, 2]


# --- Sampling ---


def test_single_root_is_standard_normal():
    """A root with unit variance samples a standard normal."""
    z = sample_latent(single_node(), OBS, 100_000, seed=0)
    assert abs(z.mean()) < 0.05
    assert abs(z.var() - 1.0) < 0.05


def test_hard_intervention_severs_edge():
    """Intervening on the child removes its dependence on the parent."""
    z = sample_latent(chain(), env1(1), 100_000, seed=1)
    assert abs(np.corrcoef(z[:, 0], z[:, 1])[0, 1]) < 0.02


def test_chain_mean_is_half_normal():
    """With A = [1] the child is |Z_0| plus noise."""
    z = sample_latent(chain(), OBS, 100_000, seed=2)
    assert abs(z[:, 1].mean() - np.sqrt(2.0 / np.pi)) < 0.02


def test_sample_latent_is_reproducible():
    """Same seed, same samples."""
    scm = random_scm(4, seed=3)
    a = sample_latent(scm, env2(1), 50, derive_rng(7, 1))
    b = sample_latent(scm, env2(1), 50, derive_rng(7, 1))
    np.testing.assert_array_equal(a, b)


# --- Densities and scores ---


def test_log_density_examples():
    """Hand-evaluated Gaussian terms."""
    assert log_density(single_node(), OBS, np.array([0.0])) == pytest.approx(-0.5 * np.log(2 * np.pi))
    assert log_density(chain(), OBS, np.array([1.0, 2.0])) == pytest.approx(-np.log(2 * np.pi) - 1.0)


def test_log_density_changes_only_through_target():
    """Intervening on node t changes only node t's factor."""
    scm = chain()
    z = np.array([0.7, -0.4])
    obs = log_density(scm, OBS, z)
    intervened = log_density(scm, env1(1), z)
    # node 0 factor is shared
    own_obs = -0.5 * np.log(2 * np.pi) - 0.5 * (z[1] - abs(z[0])) ** 2
    own_int = -0.5 * np.log(2 * np.pi * 2.0) - 0.5 * z[1] ** 2 / 2.0
    assert obs - intervened == pytest.approx(own_obs - own_int)


def test_latent_score_examples():
    """Closed-form scores on the two hand examples."""
    np.testing.assert_allclose(latent_score(single_node(), OBS, np.array([1.5])), [-1.5])
    np.testing.assert_allclose(latent_score(chain(), OBS, np.array([1.0, 2.0])), [0.0, -1.0], atol=1e-12)


def test_latent_score_matches_finite_differences():
    """Scores agree with central differences of the log-density in every environment."""
    step = 1e-5
    for seed in range(10):
        scm = random_scm(4, seed=seed, coupled=False)
        for z in away_from_singularities(scm, 10, seed):
            for env in (OBS, env1(seed % 4), env2((seed + 1) % 4)):
                fd = np.empty(scm.n)
                for i in range(scm.n):
                    bump = np.zeros(scm.n)
                    bump[i] = step
                    fd[i] = (log_density(scm, env, z + bump) - log_density(scm, env, z - bump)) / (2 * step)
                assert np.max(np.abs(latent_score(scm, env, z) - fd)) < 1e-6


def test_latent_score_raises_at_singularity():
    """A child term at the origin of its parent subspace is not differentiable."""
    with pytest.raises(SingularQuadraticForm):
        latent_score(chain(), OBS, np.array([0.0, 1.0]))


def test_latent_score_batch_matches_rows():
    """Batched evaluation equals row-by-row evaluation."""
    scm = random_scm(4, seed=5)
    z = away_from_singularities(scm, 6, 5)
    batch = latent_score(scm, env1(2), z)
    for k in range(len(z)):
        np.testing.assert_allclose(batch[k], latent_score(scm, env1(2), z[k]))


# --- Score-change supports ---


@pytest.mark.parametrize("seed", range(20))
def test_observational_vs_interventional_support(seed):
    """s - s^m moves exactly the intervened node and its parents; 20 SCMs with 2 <= n <= 6."""
    scm = random_scm(2 + seed % 5, seed=seed)
    z = sample_latent(scm, OBS, 10_000, derive_rng(seed, 10))
    for m in range(scm.n):
        magnitude = np.abs(latent_score_diff(scm, OBS, env1(m), z)).mean(axis=0)
        target = scm.targets_1[m]
        expected = {target, *scm.dag.parents[target]}
        assert set(np.nonzero(magnitude > 1e-3)[0]) == expected
        assert np.all(magnitude[[i for i in range(scm.n) if i not in expected]] < 1e-10)
        assert score_support(scm, OBS, env1(m)) == sorted(expected)


@pytest.mark.parametrize("seed", range(20))
def test_coupled_pair_support_is_the_target(seed):
    """With I = Ĩ the two interventional scores differ only at the target."""
    scm = random_scm(2 + seed % 5, seed=seed)
    z = sample_latent(scm, OBS, 10_000, derive_rng(seed, 10))
    for m in range(scm.n):
        magnitude = np.abs(latent_score_diff(scm, env1(m), env2(m), z)).mean(axis=0)
        assert set(np.nonzero(magnitude > 1e-3)[0]) == {scm.targets_1[m]}
        assert score_support(scm, env1(m), env2(m)) == [scm.targets_1[m]]


@pytest.mark.parametrize("seed", range(20))
def test_uncoupled_pair_support_is_both_closures(seed):
    """With I(m) != Ĩ(m) the support covers both targets and their parents."""
    scm = random_scm(2 + seed % 5, seed=seed, coupled=False)
    z = sample_latent(scm, OBS, 10_000, derive_rng(seed, 10))
    for m in range(scm.n):
        a, b = scm.targets_1[m], scm.targets_2[m]
        if a == b:
            continue
        magnitude = np.abs(latent_score_diff(scm, env1(m), env2(m), z)).mean(axis=0)
        expected = {a, b, *scm.dag.parents[a], *scm.dag.parents[b]}
        assert set(np.nonzero(magnitude > 1e-3)[0]) == expected
        assert score_support(scm, env1(m), env2(m)) == sorted(expected)


def test_scores_agree_outside_intervened_closure():
    """Observational and interventional scores coincide off the intervened closure."""
    scm = random_scm(5, seed=8)
    z = sample_latent(scm, OBS, 200, derive_rng(8, 10))
    for m in range(scm.n):
        target = scm.targets_1[m]
        outside = [i for i in range(scm.n) if i != target and i not in scm.dag.parents[target]]
        np.testing.assert_array_equal(
            latent_score(scm, OBS, z)[:, outside], latent_score(scm, env1(m), z)[:, outside]
        )
