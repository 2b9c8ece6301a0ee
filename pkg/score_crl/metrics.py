"""
Evaluation of recovered latents and graphs against the ground truth.
"""

from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from score_crl.scm import Dag


@dataclass
class EvalReport:
    l2_loss: float
    shd: int
    perm_used: Tuple[int, ...]
    scale_used: Tuple[float, ...]
    coupling_correct: Optional[bool] = None
    feasible: Optional[bool] = None

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["perm_used"] = list(self.perm_used)
        data["scale_used"] = list(self.scale_used)
        return data


def normalized_l2(z: np.ndarray, z_hat: np.ndarray, perm: Sequence[int]) -> Tuple[float, np.ndarray]:
    """
    ‖Z - Ẑ diag(c)‖_F / ‖Z‖_F after matching columns and fitting a per-column scale.

    Args:
        z: True latents (n_s, n)
        z_hat: Estimated latents (n_s, n)
        perm: Column ``perm[i]`` of ``z_hat`` is compared with column i of ``z``

    Returns:
        (loss, scales)
    """
    z = np.asarray(z, dtype=float)
    z_hat = np.asarray(z_hat, dtype=float)
    if z.shape != z_hat.shape:
        raise ValueError(f"Shape mismatch: {z.shape} vs {z_hat.shape}")
    matched = z_hat[:, list(perm)]
    energy = np.sum(matched**2, axis=0)
    cross = np.sum(z * matched, axis=0)
    scale = np.divide(cross, energy, out=np.zeros_like(cross), where=energy > 0)
    norm = np.linalg.norm(z)
    if norm == 0:
        raise ValueError("True latents are identically zero")
    return float(np.linalg.norm(z - matched * scale) / norm), scale


def shd(truth: Dag, estimate: Dag, perm: Sequence[int]) -> int:
    """
    Structural Hamming distance with a reversed edge counted once.

    The estimate is relabeled first: its node ``perm[i]`` becomes node i.
    """
    if truth.n != estimate.n:
        raise ValueError(f"Node count mismatch: {truth.n} vs {estimate.n}")
    a = truth.adjacency()
    b = estimate.relabel(perm).adjacency()
    distance = 0
    for i in range(truth.n):
        for j in range(i + 1, truth.n):
            if (a[i, j], a[j, i]) != (b[i, j], b[j, i]):
                distance += 1
    return distance


def evaluate(
    z: np.ndarray,
    z_hat: np.ndarray,
    truth: Dag,
    estimate: Dag,
    perm: Sequence[int],
    coupling: Optional[Sequence[int]] = None,
    true_coupling: Optional[Sequence[int]] = None,
    feasible: Optional[bool] = None,
) -> EvalReport:
    """Both metrics under one matching, plus the coupling verdict when searched."""
    loss, scale = normalized_l2(z, z_hat, perm)
    coupling_correct = None
    if coupling is not None and true_coupling is not None:
        coupling_correct = tuple(coupling) == tuple(true_coupling)
    return EvalReport(
        l2_loss=loss,
        shd=shd(truth, estimate, perm),
        perm_used=tuple(int(p) for p in perm),
        scale_used=tuple(float(c) for c in scale),
        coupling_correct=coupling_correct,
        feasible=feasible,
    )
