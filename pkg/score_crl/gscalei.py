"""
GSCALE-I: encoder recovery from score variations and latent DAG recovery.

The encoder family is ẑ = H arctanh(x). Step 2 minimizes the relaxed objective

    ‖D_t(h)‖₁,₁ + λ₁ E‖h⁻¹(h(X)) - X‖² + λ₂ E‖h(X)‖²

with full-batch RMSprop on an analytic gradient, then permutes the rows of H
so that D_t is as diagonal as possible. In the uncoupled setting every
relabeling of the second interventional set is tried until one yields a
feasible solution of the constrained problem.
"""

import asyncio
import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy.optimize import linear_sum_assignment

from score_crl.config import GscaleConfig
from score_crl.errors import BudgetExceeded, NoPerfectMatching, RankCollapse, RankDeficientEncoder
from score_crl.scm import Dag
from score_crl.scores import ScoreChangeMatrices, ScoreDiffBatch, normalized, score_change_matrices
from score_crl.seeding import STREAM_INIT, RngLike, as_rng, derive_rng
from score_crl.styling import status_message
from score_crl.transform import ENCODER_RANK_TOL, EncoderLinear, encode, encoder_inverse

INIT_RANK_TOL = 1e-6
MISSING_ENTRY_MASS = 1.0


@dataclass
class FeasibilityReport:
    """Outcome of the thresholded constraint checks of the uncoupled problem."""

    feasible: bool
    violations: List[str] = field(default_factory=list)
    violation_mass: float = 0.0


@dataclass
class FitResult:
    """Output of GSCALE-I."""

    h_star: EncoderLinear
    perm: Tuple[int, ...]
    d_matrices: ScoreChangeMatrices
    loss_trace: List[float]
    graph: Dag
    z_hat: Optional[np.ndarray] = None
    coupling: Optional[Tuple[int, ...]] = None
    coupling_uncertain: bool = False
    feasibility: Optional[FeasibilityReport] = None


# --- Objective and gradient ---


def _right_inverse(h: np.ndarray) -> np.ndarray:
    """H† = Hᵀ(HHᵀ)⁻¹ for full-row-rank H."""
    if h.shape[0] > h.shape[1] or np.linalg.svd(h, compute_uv=False).min() < ENCODER_RANK_TOL:
        raise RankDeficientEncoder("Encoder is not of full row rank")
    return np.linalg.solve(h @ h.T, h).T


def _objective_and_gradient(
    h: np.ndarray, a: np.ndarray, x: np.ndarray, d_pair: np.ndarray, lambda1: float, lambda2: float
) -> Tuple[float, np.ndarray]:
    """
    Objective value and its gradient with respect to H.

    Args:
        h: Encoder matrix (n, d)
        a: arctanh of the samples (n_s, d)
        x: Samples (n_s, d)
        d_pair: Observed first-vs-second differences (n, n_s, d)
        lambda1: Reconstruction weight
        lambda2: Latent norm weight
    """
    n_s = a.shape[0]
    p = _right_inverse(h)
    z_hat = a @ h.T
    x_hat = np.tanh(z_hat @ p.T)
    w = 1.0 - x_hat**2
    v = w[None] * d_pair
    t = v @ p
    resid = x_hat - x
    value = (
        np.abs(t).sum() / n_s
        + lambda1 * np.sum(resid**2) / n_s
        + lambda2 * np.sum(z_hat**2) / n_s
    )

    # np.sign(0) == 0 is the subgradient choice at the kink
    sgn = np.sign(t)
    grad_p = np.einsum("mkj,mki->ji", v, sgn) / n_s
    grad_w = np.einsum("mkj,mkj->kj", d_pair, sgn @ p.T) / n_s
    grad_x_hat = 2.0 * lambda1 * resid / n_s - 2.0 * x_hat * grad_w
    grad_u = grad_x_hat * w
    grad_p += grad_u.T @ z_hat
    grad_z = grad_u @ p + 2.0 * lambda2 * z_hat / n_s
    grad_h = grad_z.T @ a
    # dP = -P dH P + (I - PH) dHᵀ PᵀP for full row rank H
    proj = np.eye(h.shape[1]) - p @ h
    grad_h += -p.T @ grad_p @ p.T + (p.T @ p) @ grad_p.T @ proj
    return float(value), grad_h


def objective(enc: EncoderLinear, batch: ScoreDiffBatch, cfg: GscaleConfig) -> float:
    """
    ‖D_t(h)‖₁,₁ + λ₁ E‖h⁻¹(h(X)) - X‖² + λ₂ E‖h(X)‖² over the batch samples.
    """
    mats = score_change_matrices(enc, batch)
    z_hat = encode(enc, batch.x_samples)
    recon = encoder_inverse(enc, z_hat) - batch.x_samples
    return float(
        mats.d_t.sum()
        + cfg.lambda1 * np.mean(np.sum(recon**2, axis=1))
        + cfg.lambda2 * np.mean(np.sum(z_hat**2, axis=1))
    )


def objective_gradient(enc: EncoderLinear, batch: ScoreDiffBatch, cfg: GscaleConfig) -> np.ndarray:
    """Exact gradient of ``objective`` with respect to H, shape (n, d)."""
    a = np.arctanh(batch.x_samples)
    _, grad = _objective_and_gradient(enc.H, a, batch.x_samples, batch.d_pair, cfg.lambda1, cfg.lambda2)
    return grad


def gradient_check(
    enc: EncoderLinear, batch: ScoreDiffBatch, cfg: GscaleConfig, step: float = 1e-6
) -> float:
    """
    Relative error ‖g - g_fd‖ / ‖g_fd‖ between the analytic gradient and
    central finite differences of ``objective``.
    """
    grad = objective_gradient(enc, batch, cfg)
    fd = np.zeros_like(grad)
    for idx in np.ndindex(*grad.shape):
        bump = np.zeros_like(enc.H)
        bump[idx] = step
        up = objective(EncoderLinear(enc.H + bump), batch, cfg)
        down = objective(EncoderLinear(enc.H - bump), batch, cfg)
        fd[idx] = (up - down) / (2.0 * step)
    scale = max(np.linalg.norm(fd), 1e-12)
    return float(np.linalg.norm(grad - fd) / scale)


# --- Encoder optimization ---


def initial_encoder(n: int, d: int, seed: RngLike = None) -> EncoderLinear:
    """H with i.i.d. Normal(0, 1/d) entries, redrawn until it has full row rank."""
    rng = as_rng(seed)
    while True:
        h = rng.normal(0.0, 1.0 / np.sqrt(d), size=(n, d))
        if np.linalg.svd(h, compute_uv=False).min() >= INIT_RANK_TOL:
            return EncoderLinear(h)


def data_subspace(x: np.ndarray, n: int) -> np.ndarray:
    """
    Orthonormal basis (d, n) of the span of arctanh(x).

    Every sample satisfies arctanh(x) = G z, so the top n right singular
    vectors span col(G). Encoder rows outside this span see no data.
    """
    _, _, vt = np.linalg.svd(np.arctanh(x), full_matrices=False)
    return vt[:n].T


def fit_encoder(
    batch: ScoreDiffBatch,
    cfg: GscaleConfig,
    init: Optional[EncoderLinear] = None,
    loss_trace: Optional[List[float]] = None,
    verbose: bool = False,
) -> EncoderLinear:
    """
    Minimize the relaxed objective with full-batch RMSprop.

    With d > n and ``cfg.restrict_to_data`` the encoder is written as
    H = W Vᵀ, V = ``data_subspace``, and RMSprop runs on W. Rows of H outside
    col(G) would otherwise shrink ẑ toward zero at no reconstruction cost.

    Args:
        batch: Score differences at the observational samples
        cfg: Hyperparameters; ``cfg.seed`` drives the default initialization
        init: Starting encoder
        loss_trace: If given, receives the objective before every step and
            after the last one
        verbose: Print progress every ``cfg.log_every`` steps

    Returns:
        The final encoder

    Raises:
        RankCollapse: If H loses row rank during optimization
    """
    if init is None:
        init = initial_encoder(batch.n, batch.d, derive_rng(cfg.seed, STREAM_INIT))
    a = np.arctanh(batch.x_samples)
    x = batch.x_samples
    basis = data_subspace(x, batch.n) if cfg.restrict_to_data and batch.d > batch.n else None
    h = init.H.copy() if basis is None else init.H @ basis @ basis.T

    if cfg.grad_check:
        rel = gradient_check(EncoderLinear(h), batch, cfg)
        kind = "info" if rel < 1e-4 else "warning"
        print(status_message(f"Gradient check at initialization: relative error {rel:.2e}", kind))

    w = h if basis is None else h @ basis
    square_avg = np.zeros_like(w)
    for step in range(cfg.steps):
        h = w if basis is None else w @ basis.T
        try:
            value, grad = _objective_and_gradient(h, a, x, batch.d_pair, cfg.lambda1, cfg.lambda2)
        except RankDeficientEncoder as e:
            raise RankCollapse(f"Encoder lost row rank at step {step}") from e
        if loss_trace is not None:
            loss_trace.append(value)
        if verbose and cfg.log_every and step % cfg.log_every == 0:
            print(status_message(f"step {step:>6}/{cfg.steps}: objective {value:.6f}", "processing"))
        if basis is not None:
            grad = grad @ basis
        square_avg = cfg.rmsprop_decay * square_avg + (1.0 - cfg.rmsprop_decay) * grad**2
        w = w - cfg.lr * grad / (np.sqrt(square_avg) + cfg.rmsprop_eps)

    h = w if basis is None else w @ basis.T
    if loss_trace is not None and cfg.steps > 0:
        try:
            value, _ = _objective_and_gradient(h, a, x, batch.d_pair, cfg.lambda1, cfg.lambda2)
        except RankDeficientEncoder as e:
            raise RankCollapse("Encoder lost row rank at the last step") from e
        loss_trace.append(value)
    return EncoderLinear(h)


# --- Permutations ---


def _lexicographic_assignment(score: np.ndarray, tol: float = 1e-12) -> Tuple[Tuple[int, ...], float]:
    """
    Permutation maximizing Σ_i score[perm[i], i], the lexicographically
    smallest one among ties.
    """
    n = score.shape[0]
    rows, cols = linear_sum_assignment(score.T, maximize=True)
    best = float(score.T[rows, cols].sum())
    slack = tol * (1.0 + abs(best))

    perm: List[int] = []
    used: List[int] = []
    gained = 0.0
    for i in range(n):
        for r in range(n):
            if r in used:
                continue
            rest_rows = [k for k in range(n) if k not in used and k != r]
            rest_cols = list(range(i + 1, n))
            rest = 0.0
            if rest_cols:
                sub = score[np.ix_(rest_rows, rest_cols)].T
                sr, sc = linear_sum_assignment(sub, maximize=True)
                rest = float(sub[sr, sc].sum())
            if gained + score[r, i] + rest >= best - slack:
                perm.append(r)
                used.append(r)
                gained += float(score[r, i])
                break
    return tuple(perm), best


def align_permutation(mats: ScoreChangeMatrices) -> Tuple[int, ...]:
    """
    Row permutation of the encoder that puts the most D_t mass on the diagonal:
    row i of the aligned encoder is row ``perm[i]`` of the fitted one.
    """
    perm, _ = _lexicographic_assignment(np.asarray(mats.d_t, dtype=float))
    return perm


def permutation_for_nonzero_diagonal(a: np.ndarray) -> Tuple[int, ...]:
    """
    A permutation π with a[π[i], i] != 0 for every i.

    Raises:
        NoPerfectMatching: If no such permutation exists (``a`` is singular)
    """
    a = np.asarray(a, dtype=float)
    pattern = (np.abs(a) > 0).astype(float)
    perm, best = _lexicographic_assignment(pattern)
    if best < a.shape[0] - 0.5:
        raise NoPerfectMatching("No permutation places nonzero entries on the whole diagonal")
    return perm


# --- Graph recovery and feasibility ---


def recover_graph(
    mats: ScoreChangeMatrices, perm: Sequence[int], cfg: GscaleConfig, mode: Optional[str] = None
) -> Dag:
    """
    Threshold D(h*) into a DAG.

    ``perm`` relabels rows and columns of D (new index i is old ``perm[i]``)
    before thresholding at ``cfg.lambda_g`` after max-normalization. In
    ``triangular`` mode only j < i can be a parent of i; in ``full`` mode any
    j != i can, two-way pairs keep the heavier direction and any remaining
    cycle loses its lightest edge.
    """
    mode = mode or cfg.graph_mode
    perm = list(perm)
    n = mats.n
    weights = normalized(np.asarray(mats.d, dtype=float)[np.ix_(perm, perm)])
    edges: Dict[Tuple[int, int], float] = {}
    for i in range(n):
        for j in range(n):
            if j == i or weights[j, i] < cfg.lambda_g:
                continue
            if mode == "triangular" and j > i:
                continue
            edges[(j, i)] = float(weights[j, i])

    if mode == "full":
        for (j, i) in list(edges):
            if (j, i) in edges and (i, j) in edges:
                keep_forward = edges[(j, i)] > edges[(i, j)] or (edges[(j, i)] == edges[(i, j)] and j < i)
                edges.pop((i, j) if keep_forward else (j, i))
        graph = nx.DiGraph()
        graph.add_nodes_from(range(n))
        graph.add_weighted_edges_from((j, i, w) for (j, i), w in edges.items())
        while not nx.is_directed_acyclic_graph(graph):
            cycle = nx.find_cycle(graph)
            lightest = min(cycle, key=lambda e: (graph.edges[e[0], e[1]]["weight"], e[0], e[1]))
            graph.remove_edge(lightest[0], lightest[1])
        return Dag.from_edges(n, graph.edges())
    return Dag.from_edges(n, edges)


def feasibility_check(mats: ScoreChangeMatrices, cfg: GscaleConfig) -> FeasibilityReport:
    """
    Thresholded checks of the uncoupled problem's constraints: D_t diagonal
    with a full diagonal, 1{D} = 1{D̃}, and 1{D} ⊙ 1{Dᵀ} = I.
    """
    eps = cfg.eps_support
    d_t = normalized(np.asarray(mats.d_t, dtype=float))
    d = normalized(np.asarray(mats.d, dtype=float))
    d_tilde = normalized(np.asarray(mats.d_tilde, dtype=float))
    n = mats.n
    violations: List[str] = []
    mass = 0.0

    for i in range(n):
        for m in range(n):
            if i == m and d_t[i, m] <= eps:
                violations.append(f"D_t[{i},{m}] missing from the diagonal")
                mass += MISSING_ENTRY_MASS
            elif i != m and d_t[i, m] > eps:
                violations.append(f"D_t[{i},{m}] off-diagonal")
                mass += d_t[i, m]

    mismatch = (d > eps) != (d_tilde > eps)
    for i, m in zip(*np.nonzero(mismatch)):
        violations.append(f"1{{D}} != 1{{D~}} at [{i},{m}]")
        mass += abs(d[i, m] - d_tilde[i, m])

    for i in range(n):
        if d[i, i] <= eps:
            violations.append(f"D[{i},{i}] missing from the diagonal")
            mass += MISSING_ENTRY_MASS
        for j in range(i + 1, n):
            if d[i, j] > eps and d[j, i] > eps:
                violations.append(f"2-cycle between {i} and {j}")
                mass += min(d[i, j], d[j, i])

    return FeasibilityReport(feasible=not violations, violations=violations, violation_mass=float(mass))


# --- Orchestration ---


def _fit_and_align(batch: ScoreDiffBatch, cfg: GscaleConfig, verbose: bool = False) -> FitResult:
    trace: List[float] = []
    h_raw = fit_encoder(batch, cfg, loss_trace=trace, verbose=verbose)
    perm = align_permutation(score_change_matrices(h_raw, batch))
    h_star = h_raw.permuted(perm)
    mats = score_change_matrices(h_star, batch)
    graph = recover_graph(mats, range(batch.n), cfg)
    return FitResult(h_star=h_star, perm=perm, d_matrices=mats, loss_trace=trace, graph=graph)


def _try_coupling(batch: ScoreDiffBatch, cfg: GscaleConfig, pi: Tuple[int, ...]) -> FitResult:
    fit = _fit_and_align(batch.relabel_second(pi), cfg)
    fit.coupling = pi
    fit.feasibility = feasibility_check(fit.d_matrices, cfg)
    return fit


async def _search_window(
    batch: ScoreDiffBatch, cfg: GscaleConfig, window: List[Tuple[int, ...]]
) -> List[FitResult]:
    semaphore = asyncio.Semaphore(cfg.max_concurrent_permutations)

    async def _one(pi: Tuple[int, ...]) -> FitResult:
        async with semaphore:
            return await asyncio.to_thread(_try_coupling, batch, cfg, pi)

    return list(await asyncio.gather(*[_one(pi) for pi in window]))


def uncoupled_search(batch: ScoreDiffBatch, cfg: GscaleConfig) -> Tuple[Tuple[int, ...], FitResult]:
    """
    Search the coupling of the two interventional sets.

    Relabelings π are tried in lexicographic order; the first whose fitted
    encoder passes ``feasibility_check`` is returned. Without a feasible π the
    one with the least violation mass is returned, flagged ``coupling_uncertain``.

    Raises:
        BudgetExceeded: If n exceeds ``cfg.max_search_nodes`` without override
    """
    n = batch.n
    if n > cfg.max_search_nodes and not cfg.allow_large_search:
        raise BudgetExceeded(f"Searching {n}! couplings exceeds the guard n <= {cfg.max_search_nodes}")

    best: Optional[FitResult] = None
    candidates = list(itertools.permutations(range(n)))
    width = cfg.max_concurrent_permutations
    for start in range(0, len(candidates), width):
        window = candidates[start : start + width]
        if width == 1:
            results = [_try_coupling(batch, cfg, window[0])]
        else:
            results = asyncio.run(_search_window(batch, cfg, window))
        for fit in results:
            if fit.feasibility.feasible:
                return fit.coupling, fit
            if best is None or fit.feasibility.violation_mass < best.feasibility.violation_mass:
                best = fit

    best.coupling_uncertain = True
    return best.coupling, best


def gscale_i(batch: ScoreDiffBatch, cfg: GscaleConfig, coupled: bool, verbose: bool = False) -> FitResult:
    """
    Run GSCALE-I on a score-difference batch.

    Step 2 is a single fit in the coupled setting and the coupling search
    otherwise; step 3 encodes the observational samples with the aligned
    encoder; step 4 thresholds D(h*) into the latent DAG.
    """
    cfg.validate()
    batch = batch.without_latents()
    if coupled:
        fit = _fit_and_align(batch, cfg, verbose=verbose)
    else:
        _, fit = uncoupled_search(batch, cfg)
    fit.z_hat = encode(fit.h_star, batch.x_samples)
    return fit
