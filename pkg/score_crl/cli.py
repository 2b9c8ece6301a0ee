"""
Command-line interface for score_crl.
"""

import argparse
import asyncio
import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from score_crl.config import ESTIMATORS, GRAPH_MODES, ExperimentConfig, GscaleConfig, load_config
from score_crl.errors import GradientMismatch, ScoreCrlError
from score_crl.gscalei import gradient_check, gscale_i, initial_encoder
from score_crl.loader import (
    load_batch,
    load_decoder,
    load_fit,
    load_samples,
    load_scm,
    save_batch,
    save_decoder,
    save_fit,
    save_report,
    save_samples,
    save_scm,
)
from score_crl.main import (
    FULL_N_GRAPHS,
    GraphInstance,
    build_batch,
    evaluate_fit,
    generate_instance,
    run_experiment,
    run_grid,
    sample_environment,
)
from score_crl.scm import all_environments
from score_crl.seeding import STREAM_INIT, derive_rng, graph_seed
from score_crl.styling import color_text, status_message
from score_crl.transform import decode

GRADCHECK_TOL = 1e-4


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="Master seed (default: from config, else 0)")
    parser.add_argument("--config", default=None, help="Path to a JSON config document")
    parser.add_argument("--out", default=None, help="Output directory")


def _add_model_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n", type=int, default=None, help="Number of latent nodes")
    parser.add_argument("--d", type=int, default=None, help="Observed dimension")
    parser.add_argument("--n-s", type=int, default=None, help="Samples per environment")
    parser.add_argument("--density", type=float, default=None, help="Edge probability of the ER graph")
    parser.add_argument(
        "--uncoupled",
        action="store_true",
        help="Intervene in the second set with an unknown relabeling of the first",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="score-crl",
        description="Score-based causal representation learning with GSCALE-I",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    generate = sub.add_parser("generate", help="Sample an SCM, a decoder and samples of every environment")
    _add_common(generate)
    _add_model_overrides(generate)
    generate.add_argument("--graph-index", type=int, default=0, help="Replicate index (default: 0)")

    scores = sub.add_parser("scores", help="Compute and persist a score-difference batch")
    _add_common(scores)
    scores.add_argument("--in", dest="input", required=True, help="Directory written by 'generate'")
    scores.add_argument("--estimator", choices=ESTIMATORS, default=None, help="Score-difference estimator")
    scores.add_argument("--tau", type=float, default=None, help="Noise level of the noised estimator")

    fit = sub.add_parser("fit", help="Run GSCALE-I on a persisted batch")
    _add_common(fit)
    fit.add_argument("--in", dest="input", required=True, help="Directory written by 'scores'")
    fit.add_argument("--uncoupled", action="store_true", help="Search the coupling of the two sets")
    fit.add_argument("--steps", type=int, default=None, help="RMSprop steps")
    fit.add_argument("--graph-mode", choices=GRAPH_MODES, default=None, help="Graph recovery mode")
    fit.add_argument("--verbose", action="store_true", help="Print the objective during optimization")

    evaluate = sub.add_parser("eval", help="Score a persisted fit against the ground truth")
    _add_common(evaluate)
    evaluate.add_argument("--in", dest="input", required=True, help="Directory written by 'fit'")
    evaluate.add_argument("--truth", required=True, help="Directory written by 'generate'")

    experiment = sub.add_parser("experiment", help="Run the end-to-end benchmark")
    _add_common(experiment)
    _add_model_overrides(experiment)
    experiment.add_argument(
        "--full", action="store_true", help=f"Use {FULL_N_GRAPHS} graphs per cell instead of the config value"
    )
    experiment.add_argument("--grid", action="store_true", help="Run every (n, d) cell of the benchmark grid")
    experiment.add_argument(
        "--max-concurrent-graphs",
        type=int,
        default=None,
        help="Maximum number of graphs processed concurrently",
    )

    gradcheck = sub.add_parser("gradcheck", help="Compare the analytic gradient with finite differences")
    _add_common(gradcheck)
    gradcheck.add_argument("--instances", type=int, default=5, help="Random instances to audit (default: 5)")

    return parser


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments."""
    return build_parser().parse_args(argv)


def show_splash() -> None:
    """Display the splash screen."""
    print(color_text("score-crl: GSCALE-I for quadratic latent causal models", "green"))


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file (or defaults) with the command-line overrides applied."""
    overrides: Dict[str, Any] = {}
    for flag, key in (("n", "n"), ("d", "d"), ("n_s", "n_s"), ("density", "density")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "uncoupled", False):
        overrides["coupled"] = False
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.config:
        cfg = load_config(args.config, overrides)
    else:
        cfg = ExperimentConfig(**overrides)
        cfg.gscale = GscaleConfig.for_nodes(cfg.n)
    cfg.validate()
    return cfg


def _load_generated(directory: Path) -> GraphInstance:
    manifest = json.loads((directory / "generate.json").read_text())
    dec = load_decoder(directory / "decoder.csv")
    z_obs = load_samples(directory / "z_obs.csv")
    return GraphInstance(
        index=manifest["graph_index"],
        seed=manifest["graph_seed"],
        scm=load_scm(directory / "scm.json"),
        decoder=dec,
        z_obs=z_obs,
        x_obs=decode(dec, z_obs),
    )


def _generated_config(directory: Path, args: argparse.Namespace) -> ExperimentConfig:
    doc = json.loads((directory / "config.json").read_text())
    cfg = ExperimentConfig.from_dict(doc)
    return resolve_config(args) if args.config else cfg


# --- Subcommands ---


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = Path(args.out or "generated")
    os.makedirs(out, exist_ok=True)
    instance = generate_instance(cfg, args.graph_index)
    save_scm(out / "scm.json", instance.scm)
    save_decoder(out / "decoder.csv", instance.decoder)
    for env in all_environments(cfg.n):
        name = "obs" if env.kind == "obs" else f"{env.kind}_m{env.m}"
        if env.kind == "obs":
            z = instance.z_obs
        else:
            z = sample_environment(cfg, args.graph_index, instance.scm, env)
        save_samples(out / f"z_{name}.csv", z, "z")
        save_samples(out / f"x_{name}.csv", decode(instance.decoder, z), "x")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    manifest = {"graph_index": args.graph_index, "graph_seed": instance.seed}
    (out / "generate.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(status_message(f"Wrote SCM, decoder and {2 * cfg.n + 1} environments to {out}", "success"))
    return 0


def cmd_scores(args: argparse.Namespace) -> int:
    source = Path(args.input)
    cfg = _generated_config(source, args)
    if args.estimator is not None:
        cfg = dataclasses.replace(cfg, estimator=args.estimator)
    if args.tau is not None:
        cfg = dataclasses.replace(cfg, tau=args.tau)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, master_seed=args.seed)
    cfg.validate()
    instance = _load_generated(source)
    out = save_batch(Path(args.out or "batch"), build_batch(cfg, instance))
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    print(status_message(f"Wrote {cfg.estimator} score differences to {out}", "success"))
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    batch = load_batch(args.input)
    batch_config = Path(args.input) / "config.json"
    if args.config:
        gscale = load_config(args.config).gscale
    elif batch_config.exists():
        gscale = ExperimentConfig.from_dict(json.loads(batch_config.read_text())).gscale
    else:
        gscale = GscaleConfig.for_nodes(batch.n)
    overrides: Dict[str, Any] = {"seed": args.seed if args.seed is not None else (batch.seed or 0)}
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.graph_mode is not None:
        overrides["graph_mode"] = args.graph_mode
    if args.verbose and not gscale.log_every:
        overrides["log_every"] = 1000
    gscale = dataclasses.replace(gscale, **overrides)
    print(status_message(f"Fitting a {batch.n}x{batch.d} encoder on {batch.n_s} samples...", "processing"))
    fit = gscale_i(batch, gscale, coupled=not args.uncoupled, verbose=args.verbose)
    if fit.coupling_uncertain:
        print(status_message("No coupling passed the feasibility checks; kept the closest one", "warning"))
    out = save_fit(Path(args.out or "fit"), fit)
    print(status_message(f"Recovered {fit.graph.num_edges} edges; wrote the fit to {out}", "success"))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    truth_dir = Path(args.truth)
    instance = _load_generated(truth_dir)
    report = evaluate_fit(instance, load_fit(args.input))
    out = Path(args.out or args.input)
    os.makedirs(out, exist_ok=True)
    save_report(out / "report.json", report)
    print(json.dumps(report.to_dict()))
    return 0


def cmd_experiment(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if args.full:
        cfg = dataclasses.replace(cfg, n_graphs=FULL_N_GRAPHS)
    if args.max_concurrent_graphs is not None:
        cfg = dataclasses.replace(cfg, max_concurrent_graphs=args.max_concurrent_graphs)
    cfg.validate()
    if args.grid:
        aggregates = asyncio.run(run_grid(cfg))
        return 1 if any(a["n_failed"] for a in aggregates) else 0
    aggregate = asyncio.run(run_experiment(cfg))
    return 1 if aggregate["n_failed"] else 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    gscale = load_config(args.config).gscale if args.config else GscaleConfig(lambda1=1.0, lambda2=0.5)
    if args.instances < 1:
        raise ValueError(f"--instances must be >= 1, got {args.instances}")
    cfg = ExperimentConfig(n=3, d=5, n_s=20, master_seed=seed, gscale=gscale)
    errors = []
    for g in range(args.instances):
        batch = build_batch(cfg, generate_instance(cfg, g)).without_latents()
        enc = initial_encoder(cfg.n, cfg.d, derive_rng(graph_seed(seed, g), STREAM_INIT))
        errors.append(gradient_check(enc, batch, cfg.gscale))
    rel = max(errors)
    if rel >= GRADCHECK_TOL:
        raise GradientMismatch(f"Max relative gradient error {rel:.3e} exceeds {GRADCHECK_TOL:g}")
    message = f"Gradient check passed on {args.instances} instances: max error {rel:.3e}"
    print(status_message(message, "success"))
    print(json.dumps({"relative_error": rel, "instances": args.instances}))
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "scores": cmd_scores,
    "fit": cmd_fit,
    "eval": cmd_eval,
    "experiment": cmd_experiment,
    "gradcheck": cmd_gradcheck,
}


def _fail(code: str, message: str) -> None:
    print(status_message(message, "error"), file=sys.stderr)
    print(json.dumps({"error": code, "message": message}), file=sys.stderr)
    sys.exit(1)


def main(argv: Optional[List[str]] = None) -> None:
    """Main entry point for the CLI."""
    args = parse_args(argv)

    # Show splash screen
    show_splash()

    try:
        status = COMMANDS[args.command](args)
    except KeyboardInterrupt:
        print(color_text("\nOperation cancelled by user.", "yellow"))
        sys.exit(1)
    except ScoreCrlError as e:
        _fail(e.code, str(e))
    except (OSError, ValueError) as e:
        _fail("io_error" if isinstance(e, OSError) else "invalid_input", str(e))
    except Exception as e:
        _fail("internal_error", str(e))
    else:
        sys.exit(status)


if __name__ == "__main__":
    main()
