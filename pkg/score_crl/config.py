"""
Configuration dataclasses and the versioned JSON config document.

A config file looks like::

    {
      "schema_version": 1,
      "experiment": {"n": 5, "d": 25, "n_graphs": 10, ...},
      "gscale": {"lambda1": 0.0001, "steps": 30000, ...}
    }

Both sections are optional; missing keys take the defaults below and the
GSCALE-I section falls back to ``GscaleConfig.for_nodes(n)``.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from score_crl.errors import ConfigError

SCHEMA_VERSION = 1
ESTIMATORS = ("oracle", "noised")
GRAPH_MODES = ("triangular", "full")
DEFAULT_SEARCH_GUARD = 6


@dataclass
class GscaleConfig:
    """Hyperparameters of GSCALE-I."""

    lambda1: float = 1e-4
    lambda2: float = 1.0
    lr: float = 1e-3
    steps: int = 30_000
    lambda_g: float = 0.1
    eps_support: float = 1e-3
    rmsprop_decay: float = 0.9
    rmsprop_eps: float = 1e-8
    restrict_to_data: bool = True
    grad_check: bool = False
    seed: int = 0
    graph_mode: str = "triangular"
    max_search_nodes: int = DEFAULT_SEARCH_GUARD
    allow_large_search: bool = False
    max_concurrent_permutations: int = 1
    log_every: int = 0

    @classmethod
    def for_nodes(cls, n: int, **overrides: Any) -> "GscaleConfig":
        """Benchmark defaults: larger graphs train longer and threshold higher."""
        base = {"steps": 30_000, "lambda_g": 0.1} if n <= 5 else {"steps": 40_000, "lambda_g": 0.2}
        base.update(overrides)
        return cls(**base)

    def validate(self) -> None:
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be >= 0")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.lambda_g < 0 or self.eps_support < 0:
            raise ConfigError("lambda_g and eps_support must be >= 0")
        if not 0.0 <= self.rmsprop_decay < 1.0:
            raise ConfigError(f"rmsprop_decay must lie in [0, 1), got {self.rmsprop_decay}")
        if self.rmsprop_eps <= 0:
            raise ConfigError("rmsprop_eps must be > 0")
        if self.graph_mode not in GRAPH_MODES:
            raise ConfigError(f"graph_mode must be one of {GRAPH_MODES}, got {self.graph_mode!r}")
        if self.max_concurrent_permutations < 1:
            raise ConfigError("max_concurrent_permutations must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any], n: Optional[int] = None) -> "GscaleConfig":
        _reject_unknown(cls, data, "gscale")
        cfg = cls.for_nodes(n, **data) if n is not None else cls(**data)
        cfg.validate()
        return cfg


@dataclass
class ExperimentConfig:
    """One (n, d) cell of the synthetic benchmark."""

    n: int = 5
    d: int = 25
    n_graphs: int = 10
    n_s: int = 100
    density: float = 0.5
    coupled: bool = True
    uncoupled_mismatch: Optional[List[int]] = None
    shuffle_targets: bool = False
    estimator: str = "oracle"
    tau: float = 0.0
    gscale: GscaleConfig = field(default_factory=GscaleConfig)
    output_dir: str = "runs"
    master_seed: int = 0
    allow_large_search: bool = False
    max_concurrent_graphs: int = 1
    record_runtime: bool = False
    save_artifacts: bool = True

    def validate(self) -> None:
        if self.n < 1 or self.n > self.d:
            raise ConfigError(f"Need 1 <= n <= d, got n={self.n}, d={self.d}")
        if self.n_graphs < 1:
            raise ConfigError(f"n_graphs must be >= 1, got {self.n_graphs}")
        if self.n_s < 1:
            raise ConfigError(f"n_s must be >= 1, got {self.n_s}")
        if not 0.0 <= self.density <= 1.0:
            raise ConfigError(f"density must lie in [0, 1], got {self.density}")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.tau < 0:
            raise ConfigError(f"tau must be >= 0, got {self.tau}")
        if not self.coupled and self.n > self.gscale.max_search_nodes and not self.allow_large_search:
            raise ConfigError(
                f"Uncoupled search over {self.n}! couplings exceeds the guard "
                f"(n <= {self.gscale.max_search_nodes}); set allow_large_search to override"
            )
        if self.uncoupled_mismatch is not None and sorted(self.uncoupled_mismatch) != list(range(self.n)):
            raise ConfigError(f"uncoupled_mismatch {self.uncoupled_mismatch} is not a permutation")
        if self.max_concurrent_graphs < 1:
            raise ConfigError("max_concurrent_graphs must be >= 1")
        if self.shuffle_targets and self.gscale.graph_mode == "triangular":
            raise ConfigError(
                "shuffle_targets needs graph_mode 'full'; the triangular read assumes causal order"
            )
        self.gscale.validate()

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        data.pop("gscale")
        return {"schema_version": SCHEMA_VERSION, "experiment": data, "gscale": self.gscale.to_dict()}

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "ExperimentConfig":
        """
        Build a config from a parsed JSON document.

        Raises:
            ConfigError: On a schema mismatch, unknown keys or invalid values
        """
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"Unsupported schema_version {version!r}, expected {SCHEMA_VERSION}")
        unknown = set(doc) - {"schema_version", "experiment", "gscale"}
        if unknown:
            raise ConfigError(f"Unknown top-level keys: {sorted(unknown)}")
        experiment = dict(doc.get("experiment", {}))
        _reject_unknown(cls, experiment, "experiment")
        experiment.pop("gscale", None)
        n = int(experiment.get("n", cls.n))
        gscale = GscaleConfig.from_dict(dict(doc.get("gscale", {})), n=n)
        try:
            cfg = cls(gscale=gscale, **experiment)
        except TypeError as e:
            raise ConfigError(str(e)) from e
        cfg.validate()
        return cfg


def _reject_unknown(cls: type, data: Dict[str, Any], section: str) -> None:
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"Unknown keys in '{section}': {sorted(unknown)}")


def load_config(path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """
    Read and validate a JSON config document.

    ``overrides`` replace keys of the experiment section before the GSCALE-I
    section is resolved, so a new n still picks its per-n defaults for every
    key the file leaves out.
    """
    try:
        with open(path, "r") as f:
            doc = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"Config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
    if overrides:
        if not isinstance(doc.get("experiment", {}), dict):
            raise ConfigError(f"Config file {path}: 'experiment' must be an object")
        doc["experiment"] = {**doc.get("experiment", {}), **overrides}
    return ExperimentConfig.from_dict(doc)
