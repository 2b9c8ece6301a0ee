"""
Latent structural causal models.

Random Erdős-Rényi DAGs, quadratic additive-noise mechanisms with Gaussian
noise, ancestral sampling under the observational environment and under the
two sets of hard interventions, and the exact log-densities and score
functions of every environment.
"""

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from score_crl.errors import SingularQuadraticForm
from score_crl.seeding import RngLike, as_rng

SINGULAR_TOL = 1e-12
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True, eq=False)
class Dag:
    """Latent causal graph. Nodes are 0..n-1; ``parents[i]`` is sorted."""

    n: int
    parents: Tuple[Tuple[int, ...], ...]
    topo_order: Tuple[int, ...]

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"A DAG needs at least one node, got n={self.n}")
        if len(self.parents) != self.n:
            raise ValueError(f"Expected {self.n} parent sets, got {len(self.parents)}")
        if sorted(self.topo_order) != list(range(self.n)):
            raise ValueError(f"topo_order is not a permutation of range({self.n})")
        position = {node: k for k, node in enumerate(self.topo_order)}
        for i, pa in enumerate(self.parents):
            if i in pa:
                raise ValueError(f"Node {i} lists itself as a parent")
            for j in pa:
                if not 0 <= j < self.n:
                    raise ValueError(f"Parent {j} of node {i} is out of range")
                if position[j] >= position[i]:
                    raise ValueError(f"Edge {j}->{i} contradicts topo_order")

    @classmethod
    def from_edges(
        cls, n: int, edges: Iterable[Tuple[int, int]], topo_order: Optional[Sequence[int]] = None
    ) -> "Dag":
        """
        Build a DAG from an edge list.

        Args:
            n: Number of nodes
            edges: Directed edges (parent, child)
            topo_order: Optional explicit order; the lexicographically smallest
                topological order is used otherwise

        Returns:
            The validated Dag
        """
        graph = nx.DiGraph()
        graph.add_nodes_from(range(n))
        graph.add_edges_from((int(a), int(b)) for a, b in edges)
        if not nx.is_directed_acyclic_graph(graph):
            raise ValueError("Edge list contains a cycle")
        parents = tuple(tuple(sorted(graph.predecessors(i))) for i in range(n))
        if topo_order is None:
            topo_order = list(nx.lexicographical_topological_sort(graph))
        return cls(n=n, parents=parents, topo_order=tuple(int(k) for k in topo_order))

    @property
    def num_edges(self) -> int:
        return sum(len(pa) for pa in self.parents)

    def edges(self) -> List[Tuple[int, int]]:
        """Directed edges (parent, child), sorted."""
        return sorted((j, i) for i, pa in enumerate(self.parents) for j in pa)

    def children(self, i: int) -> Tuple[int, ...]:
        return tuple(j for j in range(self.n) if i in self.parents[j])

    def adjacency(self) -> np.ndarray:
        """Adjacency matrix with ``adj[j, i] = 1`` iff j -> i."""
        adj = np.zeros((self.n, self.n), dtype=int)
        for j, i in self.edges():
            adj[j, i] = 1
        return adj

    def to_networkx(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.n))
        graph.add_edges_from(self.edges())
        return graph

    def relabel(self, perm: Sequence[int]) -> "Dag":
        """
        Rename nodes so that new node i is old node ``perm[i]``.
        """
        inverse = invert_permutation(perm)
        return Dag.from_edges(self.n, [(inverse[j], inverse[i]) for j, i in self.edges()])


@dataclass(frozen=True)
class EnvironmentId:
    """
    An environment: observational (``kind="obs"``) or the m-th member of the
    first (``"env1"``) or second (``"env2"``) interventional set.
    """

    kind: str
    m: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind not in ("obs", "env1", "env2"):
            raise ValueError(f"Unknown environment kind: {self.kind}")
        if self.kind == "obs" and self.m is not None:
            raise ValueError("The observational environment has no index")
        if self.kind != "obs" and (self.m is None or self.m < 0):
            raise ValueError(f"Interventional environment needs an index, got {self.m}")

    def __str__(self) -> str:
        return "obs" if self.kind == "obs" else f"{self.kind}[{self.m}]"


OBS = EnvironmentId("obs")


def env1(m: int) -> EnvironmentId:
    return EnvironmentId("env1", m)


def env2(m: int) -> EnvironmentId:
    return EnvironmentId("env2", m)


@dataclass(frozen=True, eq=False)
class QuadraticScm:
    """
    Quadratic additive-noise SCM over ``dag``.

    ``quad[i]`` is the positive-definite matrix of node i, indexed in the order
    of ``dag.parents[i]``; roots have no entry. ``targets_1[m]`` and
    ``targets_2[m]`` are the nodes intervened in the m-th environment of the
    first and second set (identity when omitted).
    """

    dag: Dag
    quad: Dict[int, np.ndarray]
    noise_var: np.ndarray
    int_var_1: np.ndarray
    int_var_2: np.ndarray
    targets_1: Tuple[int, ...] = field(default=())
    targets_2: Tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        n = self.dag.n
        identity = tuple(range(n))
        object.__setattr__(self, "targets_1", tuple(int(t) for t in self.targets_1) or identity)
        object.__setattr__(self, "targets_2", tuple(int(t) for t in self.targets_2) or identity)
        for name in ("targets_1", "targets_2"):
            if sorted(getattr(self, name)) != list(identity):
                raise ValueError(f"{name} is not a permutation of range({n})")

        for name in ("noise_var", "int_var_1", "int_var_2"):
            values = np.asarray(getattr(self, name), dtype=float)
            if values.shape != (n,) or np.any(values <= 0):
                raise ValueError(f"{name} must hold {n} positive variances")
            object.__setattr__(self, name, values)
        for i in range(n):
            triple = (self.noise_var[i], self.int_var_1[i], self.int_var_2[i])
            if len(set(triple)) < 3:
                raise ValueError(f"Variances of node {i} are not pairwise distinct: {triple}")

        quad: Dict[int, np.ndarray] = {}
        for i, pa in enumerate(self.dag.parents):
            if not pa:
                continue
            if i not in self.quad:
                raise ValueError(f"Node {i} has parents but no quadratic form")
            a = np.asarray(self.quad[i], dtype=float)
            if a.shape != (len(pa), len(pa)):
                raise ValueError(f"A_{i} has shape {a.shape}, expected {(len(pa), len(pa))}")
            if not np.allclose(a, a.T, rtol=0.0, atol=1e-12):
                raise ValueError(f"A_{i} is not symmetric")
            if np.linalg.eigvalsh(a).min() <= 0:
                raise ValueError(f"A_{i} is not positive definite")
            quad[i] = a
        object.__setattr__(self, "quad", quad)

    @property
    def n(self) -> int:
        return self.dag.n

    def target(self, env: EnvironmentId) -> Optional[int]:
        """Node intervened in ``env``, or None for the observational environment."""
        if env.kind == "obs":
            return None
        if env.m >= self.n:
            raise ValueError(f"Environment index {env.m} out of range for n={self.n}")
        return self.targets_1[env.m] if env.kind == "env1" else self.targets_2[env.m]

    def intervention_variance(self, env: EnvironmentId) -> float:
        node = self.target(env)
        if node is None:
            raise ValueError("The observational environment has no intervention variance")
        return float(self.int_var_1[node] if env.kind == "env1" else self.int_var_2[node])

    def with_targets(self, targets_1: Sequence[int], targets_2: Sequence[int]) -> "QuadraticScm":
        return dataclasses.replace(self, targets_1=tuple(targets_1), targets_2=tuple(targets_2))


def invert_permutation(perm: Sequence[int]) -> List[int]:
    inverse = [0] * len(perm)
    for i, p in enumerate(perm):
        inverse[int(p)] = i
    return inverse


# --- Sampling ---


def sample_er_dag(n: int, density: float, seed: RngLike = None) -> Dag:
    """
    Sample an Erdős-Rényi DAG with identity topological order.

    Args:
        n: Number of nodes
        density: Probability of each forward edge i -> j, i < j
        seed: Generator or integer seed

    Returns:
        The sampled Dag
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density must lie in [0, 1], got {density}")
    rng = as_rng(seed)
    draws = rng.random((n, n))
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if draws[i, j] < density]
    return Dag.from_edges(n, edges, topo_order=range(n))


def sample_mechanisms(dag: Dag, seed: RngLike = None) -> QuadraticScm:
    """
    Sample positive-definite quadratic forms and the variance schedule.

    A_i = B_iᵀB_i with B_i entries i.i.d. Unif([0, 1]); σ_i² ~ Unif([0.5, 1.5]);
    the two intervention variances are σ_i² + 1 and σ_i² + 2.
    """
    rng = as_rng(seed)
    quad: Dict[int, np.ndarray] = {}
    for i, pa in enumerate(dag.parents):
        if not pa:
            continue
        while True:
            b = rng.uniform(0.0, 1.0, size=(len(pa), len(pa)))
            a = b.T @ b
            # Singular B_i has probability zero; redraw to keep A_i definite.
            if np.linalg.eigvalsh(a).min() > 1e-10:
                break
        quad[i] = a
    noise_var = rng.uniform(0.5, 1.5, size=dag.n)
    return QuadraticScm(
        dag=dag,
        quad=quad,
        noise_var=noise_var,
        int_var_1=noise_var + 1.0,
        int_var_2=noise_var + 2.0,
    )


def sample_targets(
    n: int,
    coupled: bool,
    seed: RngLike = None,
    shuffle: bool = False,
    mismatch: Optional[Sequence[int]] = None,
) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
    """
    Draw the target maps of the two interventional sets.

    Args:
        n: Number of nodes
        coupled: If True the second set targets the same nodes in the same order
        seed: Generator or integer seed
        shuffle: Draw the first map uniformly instead of using the identity
        mismatch: Explicit σ for the uncoupled case; a random non-identity σ
            is drawn when omitted

    Returns:
        (targets_1, targets_2) with targets_2 = σ ∘ targets_1
    """
    rng = as_rng(seed)
    first = tuple(int(t) for t in rng.permutation(n)) if shuffle else tuple(range(n))
    if coupled:
        return first, first
    if mismatch is not None:
        sigma = [int(s) for s in mismatch]
        if sorted(sigma) != list(range(n)):
            raise ValueError(f"mismatch {mismatch} is not a permutation of range({n})")
    else:
        sigma = list(range(n))
        while n > 1 and sigma == list(range(n)):
            sigma = [int(s) for s in rng.permutation(n)]
    return first, tuple(sigma[t] for t in first)


def true_coupling(targets_1: Sequence[int], targets_2: Sequence[int]) -> Tuple[int, ...]:
    """
    The relabeling π with targets_2[π[m]] == targets_1[m] for every m.
    """
    position = invert_permutation(targets_2)
    return tuple(position[t] for t in targets_1)


def _quad_form(scm: QuadraticScm, j: int, z: np.ndarray) -> np.ndarray:
    pa = list(scm.dag.parents[j])
    zp = z[:, pa]
    return np.einsum("ka,ab,kb->k", zp, scm.quad[j], zp)


def mechanism(scm: QuadraticScm, j: int, z: np.ndarray) -> np.ndarray:
    """f_j(z_Pa(j)) = sqrt(z_Paᵀ A_j z_Pa) for a batch of latents (zero for roots)."""
    z = np.atleast_2d(z)
    if not scm.dag.parents[j]:
        return np.zeros(z.shape[0])
    return np.sqrt(np.maximum(_quad_form(scm, j, z), 0.0))


def sample_latent(scm: QuadraticScm, env: EnvironmentId, n_s: int, seed: RngLike = None) -> np.ndarray:
    """
    Ancestral sampling of ``n_s`` latent vectors under ``env``.

    Returns:
        Array of shape (n_s, n)
    """
    if n_s < 1:
        raise ValueError(f"n_s must be >= 1, got {n_s}")
    rng = as_rng(seed)
    target = scm.target(env)
    noise = rng.standard_normal((n_s, scm.n))
    z = np.zeros((n_s, scm.n))
    for i in scm.dag.topo_order:
        if i == target:
            z[:, i] = np.sqrt(scm.intervention_variance(env)) * noise[:, i]
        else:
            z[:, i] = mechanism(scm, i, z) + np.sqrt(scm.noise_var[i]) * noise[:, i]
    return z


# --- Densities and scores ---


def _residuals(scm: QuadraticScm, env: EnvironmentId, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-node residuals and the variances they are measured against."""
    target = scm.target(env)
    resid = np.empty_like(z)
    var = np.array(scm.noise_var, dtype=float)
    for i in range(scm.n):
        if i == target:
            resid[:, i] = z[:, i]
            var[i] = scm.intervention_variance(env)
        else:
            resid[:, i] = z[:, i] - mechanism(scm, i, z)
    return resid, var


def log_density(scm: QuadraticScm, env: EnvironmentId, z: np.ndarray) -> np.ndarray:
    """
    Log-density of ``z`` under ``env``.

    Args:
        scm: The latent model
        env: Environment
        z: A vector of length n or a batch (k, n)

    Returns:
        A scalar for a single vector, an array of length k for a batch
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    zb = np.atleast_2d(z)
    if not np.all(np.isfinite(zb)):
        raise ValueError("z must be finite")
    resid, var = _residuals(scm, env, zb)
    logp = -0.5 * (LOG_2PI + np.log(var))[None, :] - 0.5 * resid**2 / var[None, :]
    out = logp.sum(axis=1)
    return out[0] if single else out


def latent_score(scm: QuadraticScm, env: EnvironmentId, z: np.ndarray) -> np.ndarray:
    """
    Closed-form score ∇_z log p_env(z).

    [s(z)]_i = r_i(n_i) - Σ_{j ∈ Ch(i)} ∂f_j/∂z_i · r_j(n_j), with
    r(n) = -n / σ² under the environment's variance. The intervened node keeps
    its own term (with n = z) but passes nothing back to its parents.

    Raises:
        SingularQuadraticForm: If some f_j needed for a child term vanishes
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    zb = np.atleast_2d(z)
    target = scm.target(env)
    resid, var = _residuals(scm, env, zb)
    r = -resid / var[None, :]

    score = r.copy()
    for j in range(scm.n):
        pa = list(scm.dag.parents[j])
        if not pa or j == target:
            continue
        f = mechanism(scm, j, zb)
        if np.any(f < SINGULAR_TOL):
            raise SingularQuadraticForm(f"f_{j} vanishes at the origin of its parent subspace")
        # A_j symmetric, so ∂f_j/∂z_Pa = A_j z_Pa / f_j.
        grad_f = (zb[:, pa] @ scm.quad[j]) / f[:, None]
        for idx, p in enumerate(pa):
            score[:, p] -= grad_f[:, idx] * r[:, j]
    return score[0] if single else score


def latent_score_diff(
    scm: QuadraticScm, env_a: EnvironmentId, env_b: EnvironmentId, z: np.ndarray
) -> np.ndarray:
    """s_{env_a}(z) - s_{env_b}(z)."""
    return latent_score(scm, env_a, z) - latent_score(scm, env_b, z)


def score_support(scm: QuadraticScm, env_a: EnvironmentId, env_b: EnvironmentId) -> List[int]:
    """
    Coordinates where the scores of two environments differ in theory:
    every intervened node together with its parents.
    """
    nodes = set()
    for env in (env_a, env_b):
        node = scm.target(env)
        if node is not None:
            nodes.add(node)
            nodes.update(scm.dag.parents[node])
    if scm.target(env_a) == scm.target(env_b):
        # Same node intervened in both: only the variance of its own term changes.
        node = scm.target(env_a)
        return [] if node is None else [node]
    return sorted(nodes)


def all_environments(n: int) -> List[EnvironmentId]:
    return [OBS] + [env1(m) for m in range(n)] + [env2(m) for m in range(n)]
