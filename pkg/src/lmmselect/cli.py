"""Command-line surface: scenario generation, fitting, path sweeps,
diagnostics, reduction and experiment batches.

All outputs are machine-readable (JSON / CSV / JSONL).  Exit codes:
0 success, 2 validation error, 3 numerical error (including a returned
but unconverged fit), 4 I/O error.  The environment variable
LMM_SELECT_SEED overrides the master seed of generate / experiment /
consistency-curve runs.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import manifest as manifest_io
from .diagnostics import assemble_blocks, irrepresentable_value, sign_consistency_curve
from .exceptions import (
    DegenerateProjection,
    DimensionMismatch,
    GroupSumMismatch,
    LmmSelectError,
    ManifestError,
    NonPsdWeight,
    NotPositiveDefinite,
    SingularPsi,
    SingularRidge,
    UnknownScenario,
    ZeroVarianceColumn,
)
from .experiment import (
    METHODS,
    GridConfig,
    config_from_dict,
    fit_method_path,
    run_experiment,
    write_report,
)
from .model import SolverConfig, WeightSpec
from .reduction import pca_reduce
from .simulate import SCENARIO_NAMES, generate, scenario
from .solver import kkt_residual, solve
from .transforms import project_out, rotate_to_isotropic
from .weights import correlation_summary, correlation_weights, weights_from_covariance

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

_VALIDATION_ERRORS = (
    DimensionMismatch,
    GroupSumMismatch,
    NonPsdWeight,
    ManifestError,
    UnknownScenario,
    ValueError,
)
_NUMERICAL_ERRORS = (
    SingularRidge,
    SingularPsi,
    DegenerateProjection,
    NotPositiveDefinite,
    ZeroVarianceColumn,
)


def _master_seed(args) -> int:
    env = os.environ.get("LMM_SELECT_SEED")
    if env is not None:
        return int(env)
    return args.seed


def _sparse_beta(beta: np.ndarray) -> dict[str, float]:
    return {str(int(j)): float(beta[j]) for j in np.flatnonzero(beta)}


def _emit(doc, out: str | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def cmd_generate(args) -> int:
    spec = scenario(
        args.scenario,
        s0=args.s0,
        master_seed=_master_seed(args),
        **{
            k: v
            for k, v in dict(
                n=args.n, p=args.p, noise_variance=args.noise_variance
            ).items()
            if v is not None
        },
    )
    instance = generate(spec, replicate=args.replicate)
    path = manifest_io.save_problem(args.out, instance.problem, instance)
    print(str(path))
    return EXIT_OK


def _load_weight_spec(args, problem) -> WeightSpec:
    if getattr(args, "weights_matrix", None):
        d = np.loadtxt(args.weights_matrix, delimiter=",", ndmin=2)
        if getattr(args, "matrix_is_covariance", False):
            return weights_from_covariance(d)
        return WeightSpec.full_matrix(d)
    if getattr(args, "per_group_weights", None):
        values = [float(v) for v in args.per_group_weights.split(",")]
        return WeightSpec.per_group_weights(values)
    if getattr(args, "auto_weights", False):
        return correlation_weights(problem)
    return WeightSpec.identity()


def cmd_fit(args) -> int:
    problem, _ = manifest_io.load_problem(args.manifest)
    method = args.method
    lam = args.lam
    lam_u = args.capital_lambda
    config = SolverConfig()

    if method in ("lasso", "hdlmm_naive", "lmm_lasso_rotation"):
        from .experiment import _plain_problem

        extra = {}
        if method == "lasso":
            target = _plain_problem(problem.y, problem.x)
        elif method == "hdlmm_naive":
            projected = project_out(problem)
            target = _plain_problem(projected.y_tilde, projected.x_tilde)
        else:
            rotated = rotate_to_isotropic(problem)
            target = _plain_problem(rotated.y_tilde, rotated.x_tilde)
            extra = dict(
                gamma_hat=rotated.gamma_hat,
                sigma2_hat=rotated.sigma2_hat,
                gamma_at_boundary=rotated.gamma_at_boundary,
            )
        fit = solve(target, WeightSpec.identity(), lam, 1.0, config)
        doc = _fit_doc(fit)
        doc.update(extra)
    else:
        if method == "lmm_convex_1":
            weights = WeightSpec.identity()
        elif method == "lmm_convex_3":
            weights = correlation_weights(problem)
        elif method in ("lmm_convex_2", "lmm_convex_W", "custom"):
            weights = _load_weight_spec(args, problem)
        else:
            raise ValueError(f"method {args.method!r} is not fittable at a point")
        if method == "lmm_convex_2" and weights.kind != "per_group_params":
            weights = WeightSpec.per_group_params(
                weights.values
                if weights.values
                else [1.0] * problem.groups.count
            )
        fit = solve(problem, weights, lam, lam_u, config)
        doc = _fit_doc(fit)
    _emit(doc, args.out)
    return EXIT_OK if fit.converged else EXIT_NUMERICAL


def _fit_doc(fit) -> dict:
    return {
        "beta": _sparse_beta(fit.beta),
        "u": [float(v) for v in fit.u],
        "support": [int(j) for j in fit.support],
        "objective": fit.objective,
        "kkt_residual": fit.kkt_residual,
        "iterations": fit.iterations,
        "lambda": fit.lam,
        "capital_lambda": fit.lam_u,
        "converged": fit.converged,
    }


def cmd_path(args) -> int:
    problem, doc = manifest_io.load_problem(args.manifest)
    truth = doc.get("truth", {})
    instance = _ManifestInstance(problem, truth, Path(args.manifest).parent)
    grids = GridConfig(
        n_lambda=args.n_lambda,
        lambda_min_ratio=args.lambda_min_ratio,
        n_capital_lambda=args.n_capital_lambda,
    )
    path = fit_method_path(args.method, instance, grids)
    rows = [
        (
            lam,
            lam_u,
            len(fit.support),
            fit.objective,
            fit.kkt_residual,
            " ".join(str(j) for j in fit.support),
        )
        for (lam, lam_u), fit in zip(path.grid, path.fits)
    ]
    out = args.out or "-"
    fh = sys.stdout if out == "-" else open(out, "w", newline="")
    try:
        writer = csv.writer(fh)
        writer.writerow(
            ["lambda", "capital_lambda", "support_size", "objective", "kkt_residual", "support"]
        )
        writer.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    if any(not fit.converged for fit in path.fits):
        return EXIT_NUMERICAL
    return EXIT_OK


class _ManifestInstance:
    """Adapter giving fit_method_path the fields it reads from instances."""

    def __init__(self, problem, truth: dict, base_dir: Path):
        self.problem = problem
        self.d_matrix = None
        if truth.get("d_matrix"):
            self.d_matrix = np.loadtxt(
                base_dir / truth["d_matrix"], delimiter=",", ndmin=2
            )


def cmd_weights(args) -> int:
    problem, _ = manifest_io.load_problem(args.manifest)
    summary = correlation_summary(problem)
    spec = correlation_weights(problem)
    _emit(
        {
            "theta_per_group": list(summary.theta_per_group),
            "weights": list(spec.values),
            "group_sizes": list(problem.groups.sizes),
        },
        args.out,
    )
    return EXIT_OK


def cmd_diagnose(args) -> int:
    problem, doc = manifest_io.load_problem(args.manifest)
    if args.check == "ircon":
        if args.support:
            support = [int(v) for v in args.support.split(",")]
        else:
            support = doc.get("truth", {}).get("support")
            if not support:
                raise ValueError("no --support given and manifest has no truth block")
        blocks = assemble_blocks(problem, support, args.capital_lambda)
        value = irrepresentable_value(blocks)
        _emit(
            {
                "irrepresentable_value": value,
                "margin": 1.0 - value,
                "holds": value < 1.0,
                "psi_condition": blocks.psi_condition,
            },
            args.out,
        )
        return EXIT_OK
    # kkt: score a fit JSON against the manifest's problem
    fit_doc = json.loads(Path(args.fit_json).read_text())
    beta = np.zeros(problem.p)
    for idx, value in fit_doc["beta"].items():
        beta[int(idx)] = value
    u = np.asarray(fit_doc["u"], dtype=np.float64)
    weights = _load_weight_spec(args, problem)
    residual = kkt_residual(
        problem, weights, fit_doc["lambda"], fit_doc["capital_lambda"], beta, u
    )
    _emit({"kkt_residual": residual}, args.out)
    return EXIT_OK


def cmd_reduce(args) -> int:
    problem, _ = manifest_io.load_problem(args.manifest)
    reduced_problem, design = pca_reduce(problem, args.threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "z_reduced.csv", design.z_reduced, fmt="%.17g", delimiter=",")
    for i, (loading, mu) in enumerate(zip(design.loadings, design.column_means)):
        np.savetxt(out / f"loadings_group{i}.csv", loading, fmt="%.17g", delimiter=",")
        np.savetxt(
            out / f"column_means_group{i}.csv",
            mu.reshape(1, -1),
            fmt="%.17g",
            delimiter=",",
        )
    _emit(
        {
            "new_group_sizes": list(design.new_group_sizes),
            "explained": list(design.explained),
            "q_reduced": design.q_reduced,
        },
        str(out / "reduction.json"),
    )
    print(str(out / "reduction.json"))
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.config:
        doc = json.loads(Path(args.config).read_text())
    else:
        doc = {}
    for key, value in (
        ("scenario", args.scenario),
        ("replicates", args.replicates),
        ("master_seed", args.seed),
        ("jobs", args.jobs),
    ):
        if value is not None:
            doc[key] = value
    if args.methods:
        doc["methods"] = args.methods.split(",")
    if args.s0_min is not None:
        doc["s0_min"] = args.s0_min
    if args.s0_max is not None:
        doc["s0_max"] = args.s0_max
    env = os.environ.get("LMM_SELECT_SEED")
    if env is not None:
        doc["master_seed"] = int(env)
    config = config_from_dict(doc)
    report = run_experiment(config)
    paths = write_report(report, args.out)
    (Path(args.out) / "config.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n"
    )
    print(str(paths["summary"]))
    if any(rec.get("error") or not rec.get("all_converged", True) for rec in report.records):
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_consistency_curve(args) -> int:
    spec = scenario(args.scenario, s0=args.s0, master_seed=_master_seed(args))
    points = sign_consistency_curve(
        spec,
        [int(v) for v in args.n_list.split(",")],
        replicates=args.replicates,
        n_lambda=args.n_lambda,
        jobs=args.jobs,
    )
    out = args.out or "-"
    fh = sys.stdout if out == "-" else open(out, "w", newline="")
    try:
        writer = csv.writer(fh)
        writer.writerow(["n", "replicates", "successes", "rate"])
        for pt in points:
            writer.writerow([pt.n, pt.replicates, pt.successes, pt.rate])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lmmselect",
        description="Fixed-effect variable selection in high-dimensional "
        "linear mixed models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a scenario instance to disk")
    g.add_argument("--scenario", required=True, choices=SCENARIO_NAMES)
    g.add_argument("--s0", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--replicate", type=int, default=0)
    g.add_argument("--n", type=int)
    g.add_argument("--p", type=int)
    g.add_argument("--noise-variance", type=float, dest="noise_variance")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="solve at one penalty point")
    f.add_argument("manifest")
    f.add_argument("--method", default="lmm_convex_1", choices=list(METHODS) + ["custom"])
    f.add_argument("--lambda", dest="lam", type=float, required=True)
    f.add_argument("--capital-lambda", dest="capital_lambda", type=float, default=1.0)
    f.add_argument("--per-group-weights")
    f.add_argument("--weights-matrix")
    f.add_argument("--matrix-is-covariance", action="store_true")
    f.add_argument("--auto-weights", action="store_true")
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    p = sub.add_parser("path", help="sweep a penalty grid, emit CSV")
    p.add_argument("manifest")
    p.add_argument("--method", default="lmm_convex_1", choices=METHODS)
    p.add_argument("--n-lambda", type=int, default=50)
    p.add_argument("--lambda-min-ratio", type=float, default=1e-3)
    p.add_argument("--n-capital-lambda", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_path)

    w = sub.add_parser("weights", help="correlation-based per-group weights")
    w.add_argument("manifest")
    w.add_argument("--out")
    w.set_defaults(func=cmd_weights)

    d = sub.add_parser("diagnose", help="irrepresentable condition / KKT check")
    d.add_argument("check", choices=["ircon", "kkt"])
    d.add_argument("manifest")
    d.add_argument("--support")
    d.add_argument("--capital-lambda", dest="capital_lambda", type=float, default=1.0)
    d.add_argument("--fit-json")
    d.add_argument("--per-group-weights")
    d.add_argument("--weights-matrix")
    d.add_argument("--matrix-is-covariance", action="store_true")
    d.add_argument("--auto-weights", action="store_true")
    d.add_argument("--out")
    d.set_defaults(func=cmd_diagnose)

    r = sub.add_parser("reduce", help="per-component PCA reduction of z")
    r.add_argument("manifest")
    r.add_argument("--threshold", type=float, default=0.95)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reduce)

    e = sub.add_parser("experiment", help="replicated scenario benchmark")
    e.add_argument("--config", help="JSON config; flags override its fields")
    e.add_argument("--scenario", choices=SCENARIO_NAMES)
    e.add_argument("--methods", help="comma-separated method names")
    e.add_argument("--s0-min", type=int, dest="s0_min")
    e.add_argument("--s0-max", type=int, dest="s0_max")
    e.add_argument("--replicates", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--jobs", type=int)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_experiment)

    c = sub.add_parser("consistency-curve", help="empirical sign-recovery curve")
    c.add_argument("--scenario", required=True, choices=SCENARIO_NAMES)
    c.add_argument("--s0", type=int, required=True)
    c.add_argument("--n-list", required=True)
    c.add_argument("--replicates", type=int, default=30)
    c.add_argument("--n-lambda", type=int, default=50)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--out")
    c.set_defaults(func=cmd_consistency_curve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _NUMERICAL_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except LmmSelectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
