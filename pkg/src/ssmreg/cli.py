"""Command-line interface: build-ssm, register, simulate, report.

Exit codes: 0 success, 1 usage/config error, 2 runtime/numerical error.
All randomness flows from --seed; outputs are deterministic for a fixed
seed regardless of --workers.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .confidence import DEFAULT_LADDER, ConfidenceTier, chi2_inv
from .mesh import MeshError, load_mesh
from .noise import KentNoise, NoiseError, PositionNoise
from .registration import (RegistrationConfig, RegistrationError,
                           RegistrationResult, register)
from .simharness import (CSV_COLUMNS, HarnessError, SyntheticCorpusSpec,
                         TrialSpec, aggregate_reports, read_trial_csv,
                         run_experiment, spec_from_dict, write_aggregate_json,
                         write_timings_csv, write_trial_csv)
from .ssm import ShapeCorpus, SsmError, build_ssm, load_ssm, save_ssm
from .transform import SimilarityTransform, rotation_to_quaternion


class ConfigError(ValueError):
    """Bad configuration file or flag combination."""


def _load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def _parse_ladder(text: str) -> tuple[float, ...]:
    try:
        ladder = tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad ladder {text!r}") from exc
    if not all(0 < p < 1 for p in ladder) or list(ladder) != sorted(set(ladder)):
        raise ConfigError("ladder must be strictly increasing probabilities in (0, 1)")
    return ladder


def _parse_modes(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad mode list {text!r}") from exc


def cmd_build_ssm(args) -> int:
    config = _load_config(args.config)
    mesh_paths = config.get("meshes")
    if not mesh_paths or len(mesh_paths) < 2:
        raise ConfigError("config must list at least 2 mesh paths under 'meshes'")
    shapes = []
    for path in mesh_paths:
        try:
            shapes.append(load_mesh(path))
        except (MeshError, OSError) as exc:
            raise ConfigError(f"cannot load mesh {path}: {exc}") from exc
    try:
        corpus = ShapeCorpus(tuple(shapes))
    except SsmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    model = build_ssm(corpus)

    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_path = out_dir / config.get("model_filename", "model.json")
    save_ssm(model, model_path)

    total = float(model.eigenvalues.sum())
    print(f"shape model: {corpus.n_shapes} shapes, {model.n_vertices} vertices, "
          f"{model.n_modes} retained modes -> {model_path}")
    if model.n_modes == 0:
        print("warning: zero shape variance; all eigenvalues are 0", file=sys.stderr)
    print(f"{'mode':>4} {'eigenvalue':>14} {'% var':>8} {'cum %':>8}")
    cum = 0.0
    for j, lam in enumerate(model.eigenvalues):
        frac = lam / total if total > 0 else 0.0
        cum += frac
        print(f"{j:>4} {lam:>14.6g} {100 * frac:>8.2f} {100 * cum:>8.2f}")
    return 0


def _read_point_csv(path) -> np.ndarray:
    expected = ["x", "y", "z", "nx", "ny", "nz"]
    rows = []
    try:
        with open(path, "r", encoding="ascii", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != expected:
                raise ConfigError(
                    f"{path}: point cloud header must be {','.join(expected)}")
            for row in reader:
                if not row:
                    continue
                rows.append([float(v) for v in row])
    except OSError as exc:
        raise ConfigError(f"cannot read point cloud {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{path}: bad point row: {exc}") from exc
    if not rows:
        raise ConfigError(f"{path}: empty point cloud")
    return np.array(rows)


def _registration_config(config: dict, ladder: tuple[float, ...]
                         ) -> RegistrationConfig:
    noise = config.get("noise", {})
    try:
        pos = PositionNoise.from_sds(noise.get("position_sd_mm", [1.0, 1.0, 2.0]))
        kent = KentNoise.from_sd(noise.get("orientation_sd_deg", 30.0),
                                 noise.get("eccentricity", 0.5))
        return RegistrationConfig(
            n_m=int(config.get("n_m", 0)),
            position_noise=pos,
            kent=kent,
            scale_bounds=tuple(config.get("scale_bounds", (0.9, 1.1))),
            s_bound=float(config.get("s_bound", 3.0)),
            p_outlier=float(config.get("p_outlier", 0.95)),
            max_iterations=int(config.get("max_iterations", 100)),
            min_points=int(config.get("min_points", 10)),
            ladder=ladder,
        )
    except (NoiseError, ValueError) as exc:
        raise ConfigError(f"bad registration config: {exc}") from exc


def _result_payload(result: RegistrationResult) -> dict:
    t = result.transform
    return {
        "transform": {
            "scale": t.a,
            "rotation_row_major": t.r.reshape(-1).tolist(),
            "quaternion_wxyz": rotation_to_quaternion(t.r).tolist(),
            "translation_mm": t.t.tolist(),
        },
        "shape_parameters": result.s.tolist(),
        "iterations": result.iterations,
        "converged": result.converged,
        "n_inliers": result.n_inliers,
        "E_p": result.e_p,
        "E_o": result.e_o,
        "tier": str(result.tier),
        "p_passed": result.p_passed,
        "sigma_circ_rad": result.sigma_circ,
    }


def cmd_register(args) -> int:
    config = _load_config(args.config)
    for key in ("model", "data"):
        if key not in config:
            raise ConfigError(f"register config needs '{key}'")
    ladder = _parse_ladder(args.p_ladder)
    try:
        model = load_ssm(config["model"])
    except (OSError, SsmError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot load shape model {config['model']}: {exc}") from exc
    points = _read_point_csv(config["data"])
    reg_config = _registration_config(config, ladder)

    result = register(points, model, reg_config)

    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "result.json", "w", encoding="ascii") as fh:
        json.dump(_result_payload(result), fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(out_dir / "trace.csv", "w", encoding="ascii", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(result.trace[0].keys()),
                                lineterminator="\n")
        writer.writeheader()
        for row in result.trace:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v)
                             for k, v in row.items()})

    n = result.n_inliers
    print(f"registered {len(points)} points: {result.iterations} iterations, "
          f"{n} inliers, converged={result.converged}")
    for p in ladder:
        thr_p = chi2_inv(p, 3 * n)
        thr_o = chi2_inv(p, 2 * n)
        mark_p = "<" if result.e_p < thr_p else ">="
        mark_o = "<" if result.e_o < thr_o else ">="
        print(f"  p={p}: E_p {result.e_p:.1f} {mark_p} {thr_p:.1f} | "
              f"E_o {result.e_o:.1f} {mark_o} {thr_o:.1f}")
    print(f"confidence: {result.tier}")
    return 0


def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    if args.seed is None:
        raise ConfigError("simulate requires --seed")
    try:
        corpus_spec = spec_from_dict(SyntheticCorpusSpec, config.get("corpus", {}))
        trial_kwargs = dict(config.get("trial", {}))
        if args.modes is not None:
            trial_kwargs["modes"] = _parse_modes(args.modes)
        trial_kwargs.setdefault("ladder", _parse_ladder(args.p_ladder))
        trial_spec = spec_from_dict(TrialSpec, trial_kwargs)
    except (HarnessError, TypeError) as exc:
        raise ConfigError(f"bad simulate spec: {exc}") from exc

    reports = run_experiment(corpus_spec, trial_spec, args.seed,
                             workers=args.workers)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trial_csv(reports, out_dir / "trials.csv")
    write_timings_csv(reports, out_dir / "timings.csv")
    aggregate = aggregate_reports(reports, trial_spec.ladder)
    write_aggregate_json(aggregate, out_dir / "aggregate.json")
    _print_tier_table(aggregate)
    return 0


def _print_tier_table(aggregate: dict) -> None:
    print(f"{'tier':<20} {'trials':>7} {'mean tRE':>10} {'sd tRE':>8}")
    for tier in ConfidenceTier:
        row = aggregate["by_tier"][str(tier)]
        mean = f"{row['mean_tre_mm']:.3f}" if row["mean_tre_mm"] is not None else "-"
        sd = f"{row['sd_tre_mm']:.3f}" if row["sd_tre_mm"] is not None else "-"
        print(f"{str(tier):<20} {row['count']:>7} {mean:>10} {sd:>8}")
    if aggregate["mean_shape_error_mm"] is not None:
        print(f"mean shape estimation error: {aggregate['mean_shape_error_mm']:.3f} mm")
    print(f"successful trials: {aggregate['n_successful']}/{aggregate['n_trials']}")


def cmd_report(args) -> int:
    reports = []
    for path in args.trials:
        try:
            reports.extend(read_trial_csv(path))
        except (OSError, HarnessError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read trial CSV {path}: {exc}") from exc
    if not reports:
        raise ConfigError("no trial rows found")
    ladder = _parse_ladder(args.p_ladder)
    aggregate = aggregate_reports(reports, ladder)

    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_aggregate_json(aggregate, out_dir / "summary.json")
    with open(out_dir / "long.csv", "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("shape", "offset", "modes", "metric", "value"))
        for r in reports:
            key = (r.shape_index, r.offset_index, r.n_modes)
            for metric, value in (("tRE_mm", repr(r.tre_mm)),
                                  ("shape_err_mm", repr(r.shape_error_mm)),
                                  ("E_p", repr(r.e_p)), ("E_o", repr(r.e_o)),
                                  ("tier", str(r.tier)),
                                  ("success", "true" if r.success else "false"),
                                  ("iterations", str(r.iterations))):
                writer.writerow([*key, metric, value])

    _print_tier_table(aggregate)
    print(f"{'p':<12} {'tp':>5} {'fp':>5} {'fn':>5} {'tn':>5} {'precision':>10}")
    for p, row in aggregate["confusion"].items():
        prec = f"{row['precision']:.3f}" if row["precision"] is not None else "-"
        print(f"{p:<12} {row['tp']:>5} {row['fp']:>5} {row['fn']:>5} "
              f"{row['tn']:>5} {prec:>10}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssmreg",
        description="Statistical-shape-model registration toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", default=".", help="output directory")
    common.add_argument("--p-ladder", default=",".join(repr(p) for p in DEFAULT_LADDER),
                        help="comma-separated confidence ladder probabilities")

    p_build = sub.add_parser("build-ssm", parents=[common],
                             help="build a shape model from corresponding PLY meshes")
    p_build.add_argument("--config", required=True)
    p_build.set_defaults(func=cmd_build_ssm)

    p_reg = sub.add_parser("register", parents=[common],
                           help="register an oriented point cloud to a shape model")
    p_reg.add_argument("--config", required=True)
    p_reg.set_defaults(func=cmd_register)

    p_sim = sub.add_parser("simulate", parents=[common],
                           help="run the synthetic leave-one-out experiment")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--seed", type=int, default=None, help="master seed (required)")
    p_sim.add_argument("--workers", type=int, default=1)
    p_sim.add_argument("--modes", default=None,
                       help="comma-separated mode counts overriding the config")
    p_sim.set_defaults(func=cmd_simulate)

    p_rep = sub.add_parser("report", parents=[common],
                           help="aggregate trial CSVs into summary tables")
    p_rep.add_argument("trials", nargs="+", help="trial CSV files")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except (ConfigError, HarnessError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RegistrationError, SsmError, MeshError, NoiseError,
            np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
