"""
Core functionality for running synthetic GSCALE-I experiments.
"""

import asyncio
import dataclasses
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from score_crl.config import ExperimentConfig, GscaleConfig
from score_crl.errors import ScoreCrlError
from score_crl.gscalei import FitResult, gscale_i
from score_crl.loader import (
    save_batch,
    save_decoder,
    save_fit,
    save_report,
    save_scm,
    write_aggregate,
    write_results_csv,
)
from score_crl.metrics import EvalReport, evaluate
from score_crl.scm import (
    OBS,
    EnvironmentId,
    QuadraticScm,
    invert_permutation,
    sample_er_dag,
    sample_latent,
    sample_mechanisms,
    sample_targets,
    true_coupling,
)
from score_crl.scores import (
    NoisedEstimator,
    OracleEstimator,
    ScoreDiffBatch,
    ScoreDiffEstimator,
    build_score_batch,
)
from score_crl.seeding import (
    STREAM_DAG,
    STREAM_DECODER,
    STREAM_ESTIMATOR,
    STREAM_LATENTS,
    STREAM_MECHANISMS,
    STREAM_TARGETS,
    derive_rng,
    env_code,
    graph_seed,
)
from score_crl.styling import generate_summary_report, status_message
from score_crl.transform import DecoderGlm, decode, sample_decoder

# (n, d, n_s) cells of the benchmark grid
GRID_CELLS = [(5, 5, 100), (5, 25, 100), (5, 100, 100), (8, 8, 300), (8, 25, 300), (8, 100, 300)]
FULL_N_GRAPHS = 100


@dataclass
class GraphInstance:
    """Everything sampled for one replicate, before any score is computed."""

    index: int
    seed: int
    scm: QuadraticScm
    decoder: DecoderGlm
    z_obs: np.ndarray
    x_obs: np.ndarray


def generate_instance(cfg: ExperimentConfig, graph_index: int) -> GraphInstance:
    """Sample the DAG, mechanisms, target maps, decoder and observational data of one graph."""
    seed = cfg.master_seed
    dag = sample_er_dag(cfg.n, cfg.density, derive_rng(seed, graph_index, STREAM_DAG))
    scm = sample_mechanisms(dag, derive_rng(seed, graph_index, STREAM_MECHANISMS))
    targets_1, targets_2 = sample_targets(
        cfg.n,
        cfg.coupled,
        derive_rng(seed, graph_index, STREAM_TARGETS),
        shuffle=cfg.shuffle_targets,
        mismatch=cfg.uncoupled_mismatch,
    )
    scm = scm.with_targets(targets_1, targets_2)
    dec = sample_decoder(cfg.n, cfg.d, derive_rng(seed, graph_index, STREAM_DECODER))
    z_obs = sample_environment(cfg, graph_index, scm, OBS)
    return GraphInstance(
        index=graph_index,
        seed=graph_seed(seed, graph_index),
        scm=scm,
        decoder=dec,
        z_obs=z_obs,
        x_obs=decode(dec, z_obs),
    )


def sample_environment(
    cfg: ExperimentConfig, graph_index: int, scm: QuadraticScm, env: EnvironmentId
) -> np.ndarray:
    """Latent samples of one environment from its own stream."""
    code = env_code(env.kind, env.m or 0, cfg.n)
    rng = derive_rng(cfg.master_seed, graph_index, STREAM_LATENTS, code)
    return sample_latent(scm, env, cfg.n_s, rng)


def build_estimator(cfg: ExperimentConfig, instance: GraphInstance) -> ScoreDiffEstimator:
    oracle = OracleEstimator(instance.scm, instance.decoder, instance.z_obs)
    if cfg.estimator == "oracle":
        return oracle
    rng = derive_rng(cfg.master_seed, instance.index, STREAM_ESTIMATOR)
    return NoisedEstimator(oracle, cfg.tau, rng)


def build_batch(cfg: ExperimentConfig, instance: GraphInstance) -> ScoreDiffBatch:
    return build_score_batch(
        build_estimator(cfg, instance), instance.x_obs, cfg.n, z_samples=instance.z_obs, seed=instance.seed
    )


def gscale_config_for(cfg: ExperimentConfig, instance: GraphInstance) -> GscaleConfig:
    return dataclasses.replace(
        cfg.gscale,
        seed=instance.seed,
        allow_large_search=cfg.allow_large_search or cfg.gscale.allow_large_search,
    )


def evaluate_fit(instance: GraphInstance, fit: FitResult) -> EvalReport:
    """
    Compare a fit with the ground truth. Aligned coordinate m tracks the node
    intervened in the m-th environment of the first set.
    """
    scm = instance.scm
    coupling_truth = None
    if fit.coupling is not None:
        coupling_truth = true_coupling(scm.targets_1, scm.targets_2)
    return evaluate(
        instance.z_obs,
        fit.z_hat,
        scm.dag,
        fit.graph,
        invert_permutation(scm.targets_1),
        coupling=fit.coupling,
        true_coupling=coupling_truth,
        feasible=None if fit.feasibility is None else fit.feasibility.feasible,
    )


def run_graph(cfg: ExperimentConfig, graph_index: int) -> Tuple[Dict[str, Any], Optional[EvalReport]]:
    """
    Run one replicate end to end.

    Returns:
        (results row, report); the report is None when the graph failed
    """
    start = time.perf_counter()
    row: Dict[str, Any] = {
        "graph_index": graph_index,
        "n": cfg.n,
        "d": cfg.d,
        "graph_seed": graph_seed(cfg.master_seed, graph_index),
    }
    graph_dir = Path(cfg.output_dir) / f"graph_{graph_index:03d}"
    try:
        instance = generate_instance(cfg, graph_index)
        batch = build_batch(cfg, instance)
        fit = gscale_i(batch, gscale_config_for(cfg, instance), coupled=cfg.coupled)
        report = evaluate_fit(instance, fit)
        if cfg.save_artifacts:
            os.makedirs(graph_dir, exist_ok=True)
            save_scm(graph_dir / "scm.json", instance.scm)
            save_decoder(graph_dir / "decoder.csv", instance.decoder)
            save_batch(graph_dir / "batch", batch)
            save_fit(graph_dir / "fit", fit)
            save_report(graph_dir / "report.json", report)
    except ScoreCrlError as e:
        row.update(status="failed", error_code=e.code)
        report = None
    except Exception:
        row.update(status="failed", error_code="internal_error")
        report = None
    else:
        row.update(status="ok", l2_loss=report.l2_loss, shd=report.shd)
    elapsed = time.perf_counter() - start
    row["_elapsed"] = elapsed
    if cfg.record_runtime:
        row["runtime_s"] = elapsed
    return row, report


def _describe(values: List[float]) -> Dict[str, Optional[float]]:
    if not values:
        return {"mean": None, "median": None, "std": None}
    arr = np.asarray(values, dtype=float)
    return {"mean": float(arr.mean()), "median": float(np.median(arr)), "std": float(arr.std())}


def _or_nan(value: Optional[float]) -> float:
    return float("nan") if value is None else value


def aggregate_rows(rows: List[Dict[str, Any]]) -> Dict[str, Any]:
    ok = [r for r in rows if r["status"] == "ok"]
    return {
        "graphs_run": len(rows),
        "graphs_ok": len(ok),
        "n_failed": len(rows) - len(ok),
        "failures": [
            {"graph_index": r["graph_index"], "error_code": r["error_code"]}
            for r in rows
            if r["status"] != "ok"
        ],
        "l2_loss": _describe([r["l2_loss"] for r in ok]),
        "shd": _describe([float(r["shd"]) for r in ok]),
    }


async def run_experiment(cfg: ExperimentConfig, verbose: bool = True) -> Dict[str, Any]:
    """
    Run ``cfg.n_graphs`` replicates and write ``results.csv`` and ``aggregate.json``.

    Replicates run concurrently up to ``cfg.max_concurrent_graphs``; failures
    are isolated and recorded with their error code.

    Args:
        cfg: Experiment configuration
        verbose: Print progress and the final report

    Returns:
        The aggregate document
    """
    cfg.validate()
    start_time = time.time()
    output_path = Path(cfg.output_dir)
    os.makedirs(output_path, exist_ok=True)

    if verbose:
        print(
            status_message(
                f"Running {cfg.n_graphs} graphs with n={cfg.n}, d={cfg.d}, n_s={cfg.n_s} "
                f"({'coupled' if cfg.coupled else 'uncoupled'}, {cfg.estimator} scores)...",
                "processing",
            )
        )

    semaphore = asyncio.Semaphore(cfg.max_concurrent_graphs)

    async def _run_one(graph_index: int) -> Tuple[Dict[str, Any], Optional[EvalReport]]:
        async with semaphore:
            row, report = await asyncio.to_thread(run_graph, cfg, graph_index)
        if verbose:
            if report is None:
                print(status_message(f"Graph {graph_index}: failed ({row['error_code']})", "error"))
            else:
                print(
                    status_message(
                        f"Graph {graph_index}: l2 loss {report.l2_loss:.4f}, SHD {report.shd}", "success"
                    )
                )
        return row, report

    results = await asyncio.gather(*[_run_one(g) for g in range(cfg.n_graphs)])
    rows = sorted((row for row, _ in results), key=lambda r: r["graph_index"])

    write_results_csv(output_path / "results.csv", rows)
    aggregate = aggregate_rows(rows)
    aggregate["total_runtime_s"] = time.time() - start_time
    aggregate["graph_runtime_s"] = _describe([r["_elapsed"] for r in rows])
    write_aggregate(output_path / "aggregate.json", aggregate, cfg.to_dict())

    if verbose:
        kind = "success" if aggregate["n_failed"] == 0 else "warning"
        print("\n" + status_message("Experiment completed!", kind))
        print(
            generate_summary_report(
                {
                    "graphs_run": aggregate["graphs_run"],
                    "l2_loss_mean": _or_nan(aggregate["l2_loss"]["mean"]),
                    "shd_mean": _or_nan(aggregate["shd"]["mean"]),
                    "total_time": aggregate["total_runtime_s"],
                    "output_path": str(output_path),
                    "failed_graphs": [(f["graph_index"], f["error_code"]) for f in aggregate["failures"]],
                }
            )
        )
    return aggregate


async def run_grid(cfg: ExperimentConfig, verbose: bool = True) -> List[Dict[str, Any]]:
    """
    Run every (n, d) cell of the benchmark grid under ``cfg.output_dir/n{n}_d{d}``,
    with the per-n GSCALE-I defaults.
    """
    aggregates = []
    for n, d, n_s in GRID_CELLS:
        defaults = GscaleConfig.for_nodes(n)
        cell = dataclasses.replace(
            cfg,
            n=n,
            d=d,
            n_s=n_s,
            output_dir=str(Path(cfg.output_dir) / f"n{n}_d{d}"),
            gscale=dataclasses.replace(cfg.gscale, steps=defaults.steps, lambda_g=defaults.lambda_g),
        )
        aggregate = await run_experiment(cell, verbose=verbose)
        aggregates.append({"n": n, "d": d, **aggregate})
    write_aggregate(Path(cfg.output_dir) / "grid.json", {"cells": aggregates})
    return aggregates
