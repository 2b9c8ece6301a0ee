"""
Reading and writing experiment artifacts.

Matrices are CSV files with a ``# rows cols`` header line; sample files carry
a column header (``z_1..z_n`` or ``x_1..x_d``). Every number is written with
17 significant digits so a round trip is lossless.
"""

import csv
import json
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from score_crl.gscalei import FeasibilityReport, FitResult
from score_crl.metrics import EvalReport
from score_crl.scm import Dag, QuadraticScm
from score_crl.scores import FAMILIES, ScoreChangeMatrices, ScoreDiffBatch
from score_crl.transform import DecoderGlm, EncoderLinear

PathLike = Union[str, Path]
FLOAT_FORMAT = "%.17g"
RESULT_COLUMNS = [
    "graph_index",
    "n",
    "d",
    "graph_seed",
    "l2_loss",
    "shd",
    "runtime_s",
    "status",
    "error_code",
]


# --- Matrices and samples ---


def save_matrix(path: PathLike, matrix: np.ndarray) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    rows, cols = matrix.shape
    np.savetxt(path, matrix, fmt=FLOAT_FORMAT, delimiter=",", header=f"{rows} {cols}", comments="# ")


def load_matrix(path: PathLike) -> np.ndarray:
    with open(path, "r") as f:
        header = f.readline()
    if not header.startswith("#"):
        raise ValueError(f"{path} has no '# rows cols' header")
    rows, cols = (int(v) for v in header.lstrip("#").split())
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return data.reshape(rows, cols)


def save_samples(path: PathLike, samples: np.ndarray, prefix: str) -> None:
    """Write a (k, dim) sample array with a ``{prefix}_1..{prefix}_dim`` header."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    header = ",".join(f"{prefix}_{i + 1}" for i in range(samples.shape[1]))
    np.savetxt(path, samples, fmt=FLOAT_FORMAT, delimiter=",", header=header, comments="")


def load_samples(path: PathLike) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def _write_json(path: PathLike, payload: Dict[str, Any]) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def _read_json(path: PathLike) -> Dict[str, Any]:
    with open(path, "r") as f:
        return json.load(f)


# --- Models ---


def dag_to_dict(dag: Dag) -> Dict[str, Any]:
    return {"n": dag.n, "edges": [list(e) for e in dag.edges()], "topo_order": list(dag.topo_order)}


def dag_from_dict(data: Dict[str, Any]) -> Dag:
    return Dag.from_edges(data["n"], [tuple(e) for e in data["edges"]], data.get("topo_order"))


def save_scm(path: PathLike, scm: QuadraticScm) -> None:
    """
    Write the latent model as JSON: graph, quadratic forms (row-major, in
    parent order), the three variance vectors and both target maps.
    """
    payload = {
        "schema_version": 1,
        **dag_to_dict(scm.dag),
        "quad": {
            str(i): {"parents": list(scm.dag.parents[i]), "A": [float(v) for v in a.ravel()]}
            for i, a in sorted(scm.quad.items())
        },
        "noise_var": [float(v) for v in scm.noise_var],
        "int_var_1": [float(v) for v in scm.int_var_1],
        "int_var_2": [float(v) for v in scm.int_var_2],
        "targets_1": list(scm.targets_1),
        "targets_2": list(scm.targets_2),
    }
    _write_json(path, payload)


def load_scm(path: PathLike) -> QuadraticScm:
    data = _read_json(path)
    dag = dag_from_dict(data)
    quad = {}
    for key, entry in data["quad"].items():
        k = len(entry["parents"])
        quad[int(key)] = np.array(entry["A"], dtype=float).reshape(k, k)
    return QuadraticScm(
        dag=dag,
        quad=quad,
        noise_var=np.array(data["noise_var"]),
        int_var_1=np.array(data["int_var_1"]),
        int_var_2=np.array(data["int_var_2"]),
        targets_1=tuple(data["targets_1"]),
        targets_2=tuple(data["targets_2"]),
    )


def save_decoder(path: PathLike, dec: DecoderGlm) -> None:
    save_matrix(path, dec.G)


def load_decoder(path: PathLike) -> DecoderGlm:
    return DecoderGlm(load_matrix(path))


# --- Score batches ---


def save_batch(directory: PathLike, batch: ScoreDiffBatch) -> Path:
    """
    Persist a batch as ``x_samples.csv``, one ``{family}_m{m}.csv`` per family
    and environment pair, and a ``manifest.json``. Latents are never written.
    """
    path = Path(directory)
    os.makedirs(path, exist_ok=True)
    save_samples(path / "x_samples.csv", batch.x_samples, "x")
    for name in FAMILIES:
        family = batch.family(name)
        for m in range(batch.n):
            save_matrix(path / f"{name}_m{m}.csv", family[m])
    _write_json(
        path / "manifest.json",
        {"schema_version": 1, "n": batch.n, "n_s": batch.n_s, "d": batch.d, "seed": batch.seed},
    )
    return path


def load_batch(directory: PathLike) -> ScoreDiffBatch:
    path = Path(directory)
    manifest = _read_json(path / "manifest.json")
    n = manifest["n"]
    families = {
        name: np.stack([load_matrix(path / f"{name}_m{m}.csv") for m in range(n)]) for name in FAMILIES
    }
    x_samples = load_samples(path / "x_samples.csv")
    return ScoreDiffBatch(x_samples=x_samples, seed=manifest.get("seed"), **families)


# --- Fit results ---


def save_fit(directory: PathLike, fit: FitResult) -> Path:
    path = Path(directory)
    os.makedirs(path, exist_ok=True)
    save_matrix(path / "h_star.csv", fit.h_star.H)
    save_matrix(path / "d_t.csv", fit.d_matrices.d_t)
    save_matrix(path / "d.csv", fit.d_matrices.d)
    save_matrix(path / "d_tilde.csv", fit.d_matrices.d_tilde)
    _write_json(path / "graph.json", dag_to_dict(fit.graph))
    meta: Dict[str, Any] = {
        "perm": list(fit.perm),
        "coupling": None if fit.coupling is None else list(fit.coupling),
        "coupling_uncertain": fit.coupling_uncertain,
    }
    if fit.feasibility is not None:
        meta["feasibility"] = {
            "feasible": fit.feasibility.feasible,
            "violations": fit.feasibility.violations,
            "violation_mass": fit.feasibility.violation_mass,
        }
    _write_json(path / "perm.json", meta)
    with open(path / "loss_trace.csv", "w") as f:
        f.write("step,objective\n")
        for step, value in enumerate(fit.loss_trace):
            f.write(f"{step},{value!r}\n")
    if fit.z_hat is not None:
        save_samples(path / "z_hat.csv", fit.z_hat, "z")
    return path


def load_fit(directory: PathLike) -> FitResult:
    path = Path(directory)
    meta = _read_json(path / "perm.json")
    with open(path / "loss_trace.csv", "r") as f:
        trace = [float(row["objective"]) for row in csv.DictReader(f)]
    feasibility = None
    if "feasibility" in meta:
        entry = meta["feasibility"]
        feasibility = FeasibilityReport(
            entry["feasible"], list(entry["violations"]), float(entry["violation_mass"])
        )
    z_hat_path = path / "z_hat.csv"
    return FitResult(
        h_star=EncoderLinear(load_matrix(path / "h_star.csv")),
        perm=tuple(meta["perm"]),
        d_matrices=ScoreChangeMatrices(
            d_t=load_matrix(path / "d_t.csv"),
            d=load_matrix(path / "d.csv"),
            d_tilde=load_matrix(path / "d_tilde.csv"),
        ),
        loss_trace=trace,
        graph=dag_from_dict(_read_json(path / "graph.json")),
        z_hat=load_samples(z_hat_path) if z_hat_path.exists() else None,
        coupling=None if meta["coupling"] is None else tuple(meta["coupling"]),
        coupling_uncertain=meta["coupling_uncertain"],
        feasibility=feasibility,
    )


# --- Reports ---


def save_report(path: PathLike, report: EvalReport) -> None:
    _write_json(path, report.to_dict())


def load_report(path: PathLike) -> EvalReport:
    data = _read_json(path)
    data["perm_used"] = tuple(data["perm_used"])
    data["scale_used"] = tuple(data["scale_used"])
    return EvalReport(**data)


def _format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return FLOAT_FORMAT % value
    return str(value)


def write_results_csv(path: PathLike, rows: Sequence[Dict[str, Any]]) -> None:
    """Write result rows in the fixed column order, sorted by graph index."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for row in sorted(rows, key=lambda r: r["graph_index"]):
            writer.writerow([_format_cell(row.get(col)) for col in RESULT_COLUMNS])


def read_results_csv(path: PathLike) -> List[Dict[str, str]]:
    with open(path, "r", newline="") as f:
        return list(csv.DictReader(f))


def write_aggregate(
    path: PathLike, aggregate: Dict[str, Any], config: Optional[Dict[str, Any]] = None
) -> None:
    payload = {"schema_version": 1, **aggregate}
    if config is not None:
        payload["config"] = config
    _write_json(path, payload)
