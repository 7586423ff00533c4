"""Flat-file exchange format for problems: dense CSVs plus a JSON manifest.

Matrices are written one row per line, comma-separated, no header, with
17 significant digits so float64 values round-trip bit-exactly.  The
manifest names the dimensions, the group sizes and the data files; ground
truth and generator provenance are optional blocks.  All indices in the
format are zero-based.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .exceptions import ManifestError
from .model import GroupStructure, LmmProblem
from .simulate import RNG_ALGORITHM, GeneratedInstance

SCHEMA = "lmmselect/problem-v1"
FLOAT_FMT = "%.17g"


def _write_csv(path: Path, array: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(array.T).T, fmt=FLOAT_FMT, delimiter=",")


def _read_csv(path: Path, what: str) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ManifestError(f"cannot read {what} from {path}: {exc}") from exc


def save_problem(
    out_dir, problem: LmmProblem, instance: GeneratedInstance | None = None
) -> Path:
    """Write x.csv / y.csv / z.csv and manifest.json into out_dir.

    When a generated instance is supplied, its ground truth (true beta, u,
    support and the covariance used for sampling) and the generator
    provenance are recorded so downstream scoring can rerun figures.

    Returns the manifest path.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "x.csv", problem.x)
    _write_csv(out / "y.csv", problem.y.reshape(-1, 1))
    files = {"x": "x.csv", "y": "y.csv"}
    if problem.q:
        _write_csv(out / "z.csv", problem.z)
        files["z"] = "z.csv"
    doc = {
        "schema": SCHEMA,
        "n": problem.n,
        "p": problem.p,
        "q": problem.q,
        "group_sizes": list(problem.groups.sizes),
        "files": files,
    }
    if instance is not None:
        _write_csv(out / "true_beta.csv", instance.true_beta.reshape(-1, 1))
        _write_csv(out / "true_u.csv", instance.true_u.reshape(-1, 1))
        _write_csv(out / "d_matrix.csv", instance.d_matrix)
        doc["truth"] = {
            "true_beta": "true_beta.csv",
            "true_u": "true_u.csv",
            "d_matrix": "d_matrix.csv",
            "support": list(instance.true_support),
            "d_adjusted": instance.d_adjusted,
        }
        doc["generator"] = {
            "rng": RNG_ALGORITHM,
            "replicate": instance.replicate,
            "scenario": asdict(instance.spec),
        }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return manifest_path


def load_manifest(manifest_path) -> dict:
    """Parse and schema-check a manifest, raising ManifestError on defects."""
    path = Path(manifest_path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ManifestError("manifest root must be a JSON object")
    if doc.get("schema") != SCHEMA:
        raise ManifestError(f"field 'schema' must equal {SCHEMA!r}")
    for field in ("n", "p", "q"):
        if not isinstance(doc.get(field), int) or doc[field] < 0:
            raise ManifestError(f"field {field!r} must be a nonnegative integer")
    sizes = doc.get("group_sizes")
    if not isinstance(sizes, list) or any(
        not isinstance(s, int) or s <= 0 for s in sizes
    ):
        raise ManifestError("field 'group_sizes' must be a list of positive integers")
    if sum(sizes) != doc["q"]:
        raise ManifestError("field 'group_sizes' must sum to q")
    files = doc.get("files")
    if not isinstance(files, dict) or "x" not in files or "y" not in files:
        raise ManifestError("field 'files' must map at least 'x' and 'y' to paths")
    if doc["q"] > 0 and "z" not in files:
        raise ManifestError("field 'files.z' is required when q > 0")
    return doc


def load_problem(manifest_path) -> tuple[LmmProblem, dict]:
    """Load a problem back from its manifest; inverse of save_problem."""
    path = Path(manifest_path)
    doc = load_manifest(path)
    base = path.parent
    x = _read_csv(base / doc["files"]["x"], "x")
    y = _read_csv(base / doc["files"]["y"], "y").ravel()
    if doc["q"] > 0:
        z = _read_csv(base / doc["files"]["z"], "z")
    else:
        z = np.zeros((y.shape[0], 0))
    if x.shape != (doc["n"], doc["p"]):
        raise ManifestError(
            f"file 'x' has shape {x.shape}, manifest says ({doc['n']}, {doc['p']})"
        )
    if y.shape[0] != doc["n"]:
        raise ManifestError(f"file 'y' has {y.shape[0]} rows, manifest says {doc['n']}")
    if doc["q"] > 0 and z.shape != (doc["n"], doc["q"]):
        raise ManifestError(
            f"file 'z' has shape {z.shape}, manifest says ({doc['n']}, {doc['q']})"
        )
    problem = LmmProblem(y=y, x=x, z=z, groups=GroupStructure(doc["group_sizes"]))
    return problem, doc
