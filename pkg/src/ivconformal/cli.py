"""Command-line front end.

Three subcommands:

``run``      execute a replication study from a JSON config, write
             results.csv (aggregates) and records.csv (per replication)
``surface``  write interval endpoints over an (x, z) grid (surface.csv)
             for a single replication, for plotting
``ingest``   validate a raw CSV and emit the normalized y,x*,z* layout

Exit codes: 0 success, 2 configuration or input validation error, 3 runtime
failure.  Outputs are deterministic for a fixed config: rerunning a command
produces byte-identical files.
"""

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .data import DataSet
from .dgp import DESIGN_IDS
from .errors import ConfigError
from .evalharness import (
    MethodSpec,
    RunConfig,
    XPipelineConfig,
    run_replications,
    surface_grid,
)
from .npiv import SieveSpec
from .shifts import ShiftScenario

_EXACT_FAMILIES = ("linear", "bins", "rkhs")
_X_MODELS = ("linear", "bins", "rkhs", "mlp")


def _fmt(v) -> str:
    if isinstance(v, float):
        return "%.10g" % v
    return str(v)


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(path, message)


def _as_int(raw, path: str, lo: Optional[int] = None) -> int:
    _require(isinstance(raw, int) and not isinstance(raw, bool), path, "expected an integer")
    if lo is not None:
        _require(raw >= lo, path, f"must be >= {lo}")
    return raw


def _as_float(raw, path: str, lo: Optional[float] = None, strict_lo: bool = False) -> float:
    _require(
        isinstance(raw, (int, float)) and not isinstance(raw, bool),
        path,
        "expected a number",
    )
    val = float(raw)
    _require(math.isfinite(val), path, "must be finite")
    if lo is not None:
        if strict_lo:
            _require(val > lo, path, f"must be > {lo}")
        else:
            _require(val >= lo, path, f"must be >= {lo}")
    return val


def _parse_method(raw, path: str) -> MethodSpec:
    _require(isinstance(raw, dict), path, "expected an object")
    rc = raw.get("radius_class")
    _require(rc in ("xz", "z", "x"), f"{path}.radius_class", "must be one of 'xz', 'z', 'x'")
    name_keys = [k for k in ("family", "model", "name") if k in raw]
    _require(len(name_keys) == 1, path, "give exactly one of 'family', 'model', 'name'")
    name = raw[name_keys[0]]
    allowed = _X_MODELS if rc == "x" else _EXACT_FAMILIES
    _require(
        name in allowed,
        f"{path}.{name_keys[0]}",
        f"must be one of {', '.join(repr(a) for a in allowed)} for radius_class '{rc}'",
    )
    known = {"radius_class", name_keys[0], "n_bins", "n_landmarks", "gamma"}
    extra = sorted(set(raw) - known)
    _require(not extra, path, f"unknown keys: {', '.join(extra)}")
    return MethodSpec(
        radius_class=rc,
        name=name,
        n_bins=_as_int(raw.get("n_bins", 4), f"{path}.n_bins", lo=2),
        n_landmarks=_as_int(raw.get("n_landmarks", 4), f"{path}.n_landmarks", lo=1),
        gamma=_as_float(raw.get("gamma", 0.2), f"{path}.gamma", lo=0.0, strict_lo=True),
    )


def _parse_sieve(raw) -> SieveSpec:
    d = RunConfig().sieve
    if raw is None:
        return d
    _require(isinstance(raw, dict), "sieve", "expected an object")
    known = {"degree_x", "degree_z", "interactions", "ridge"}
    extra = sorted(set(raw) - known)
    _require(not extra, "sieve", f"unknown keys: {', '.join(extra)}")
    interactions = raw.get("interactions", d.interactions)
    _require(isinstance(interactions, bool), "sieve.interactions", "expected true/false")
    return SieveSpec(
        degree_x=_as_int(raw.get("degree_x", d.degree_x), "sieve.degree_x", lo=1),
        degree_z=_as_int(raw.get("degree_z", d.degree_z), "sieve.degree_z", lo=1),
        interactions=interactions,
        ridge=_as_float(raw.get("ridge", d.ridge), "sieve.ridge", lo=0.0),
    )


def _parse_hidden(raw, path: str) -> Tuple[int, ...]:
    _require(isinstance(raw, list) and len(raw) >= 1, path, "expected a nonempty list of layer widths")
    return tuple(_as_int(v, f"{path}[{i}]", lo=1) for i, v in enumerate(raw))


def _parse_x_pipeline(raw) -> XPipelineConfig:
    if raw is None:
        return XPipelineConfig()
    _require(isinstance(raw, dict), "x_pipeline", "expected an object")
    known = {
        "lambda", "kappa", "ratio_hidden", "ratio_steps", "ratio_lr",
        "radius_steps", "radius_lr", "mlp_lr", "radius_hidden",
        "n_bins", "n_landmarks", "gamma", "bound_safety",
    }
    extra = sorted(set(raw) - known)
    _require(not extra, "x_pipeline", f"unknown keys: {', '.join(extra)}")
    d = XPipelineConfig()
    return XPipelineConfig(
        lam=_as_float(raw.get("lambda", d.lam), "x_pipeline.lambda", lo=0.0),
        kappa=_as_float(raw.get("kappa", d.kappa), "x_pipeline.kappa", lo=0.0, strict_lo=True),
        ratio_hidden=_parse_hidden(raw["ratio_hidden"], "x_pipeline.ratio_hidden")
        if "ratio_hidden" in raw
        else d.ratio_hidden,
        ratio_steps=_as_int(raw.get("ratio_steps", d.ratio_steps), "x_pipeline.ratio_steps", lo=1),
        ratio_lr=_as_float(raw.get("ratio_lr", d.ratio_lr), "x_pipeline.ratio_lr", lo=0.0, strict_lo=True),
        radius_steps=_as_int(raw.get("radius_steps", d.radius_steps), "x_pipeline.radius_steps", lo=1),
        radius_lr=_as_float(raw.get("radius_lr", d.radius_lr), "x_pipeline.radius_lr", lo=0.0, strict_lo=True),
        mlp_lr=_as_float(raw.get("mlp_lr", d.mlp_lr), "x_pipeline.mlp_lr", lo=0.0, strict_lo=True),
        radius_hidden=_parse_hidden(raw["radius_hidden"], "x_pipeline.radius_hidden")
        if "radius_hidden" in raw
        else d.radius_hidden,
        n_bins=_as_int(raw.get("n_bins", d.n_bins), "x_pipeline.n_bins", lo=2),
        n_landmarks=_as_int(raw.get("n_landmarks", d.n_landmarks), "x_pipeline.n_landmarks", lo=1),
        gamma=_as_float(raw.get("gamma", d.gamma), "x_pipeline.gamma", lo=0.0, strict_lo=True),
        bound_safety=_as_float(raw.get("bound_safety", d.bound_safety), "x_pipeline.bound_safety", lo=1.0),
    )


def parse_run_config(raw: dict) -> RunConfig:
    """Validate a decoded JSON object and build a RunConfig.

    Raises ConfigError with a dotted path into the document on any problem.
    """
    _require(isinstance(raw, dict), "", "top-level config must be an object")
    known = {
        "design", "csv", "alpha", "n_train", "n_cal", "n_test", "n_reps",
        "seed", "scenarios", "methods", "sieve", "x_pipeline",
        "search_cap_multiplier",
    }
    extra = sorted(set(raw) - known)
    _require(not extra, "", f"unknown keys: {', '.join(extra)}")

    design = raw.get("design")
    csv_path = raw.get("csv")
    _require(
        (design is None) != (csv_path is None),
        "design",
        "give exactly one of 'design' (synthetic) or 'csv' (fixed dataset)",
    )
    if design is not None:
        design = _as_int(design, "design")
        _require(design in DESIGN_IDS, "design", f"must be one of {list(DESIGN_IDS)}")
    else:
        _require(isinstance(csv_path, str) and csv_path, "csv", "expected a file path")

    alpha = _as_float(raw.get("alpha", 0.1), "alpha", lo=0.0, strict_lo=True)
    _require(alpha < 1.0, "alpha", "must be < 1")

    scen_raw = raw.get("scenarios", list(ShiftScenario.KINDS))
    _require(isinstance(scen_raw, list) and scen_raw, "scenarios", "expected a nonempty list")
    for i, s in enumerate(scen_raw):
        _require(s in ShiftScenario.KINDS, f"scenarios[{i}]", f"unknown scenario {s!r}")
    _require(len(set(scen_raw)) == len(scen_raw), "scenarios", "duplicate entries")

    methods_raw = raw.get("methods")
    _require(
        isinstance(methods_raw, list) and methods_raw,
        "methods",
        "expected a nonempty list of method objects",
    )
    methods = tuple(_parse_method(m, f"methods[{i}]") for i, m in enumerate(methods_raw))
    labels = [m.label for m in methods]
    _require(len(set(labels)) == len(labels), "methods", "duplicate method entries")

    n_cal = _as_int(raw.get("n_cal", 200), "n_cal", lo=2)
    if any(m.radius_class == "x" for m in methods):
        _require(n_cal >= 4, "n_cal", "the 'x' radius class needs at least 4 calibration rows")

    return RunConfig(
        design=design,
        csv_path=csv_path,
        alpha=alpha,
        n_train=_as_int(raw.get("n_train", 1000), "n_train", lo=1),
        n_cal=n_cal,
        n_test=_as_int(raw.get("n_test", 1000), "n_test", lo=1),
        n_reps=_as_int(raw.get("n_reps", 100), "n_reps", lo=1),
        seed=_as_int(raw.get("seed", 7), "seed", lo=0),
        scenarios=tuple(scen_raw),
        methods=methods,
        sieve=_parse_sieve(raw.get("sieve")),
        x_pipeline=_parse_x_pipeline(raw.get("x_pipeline")),
        search_cap_multiplier=_as_float(
            raw.get("search_cap_multiplier", 10.0), "search_cap_multiplier", lo=1.0, strict_lo=True
        ),
    )


def load_config_file(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("", f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON in {path}: {exc}")
    return parse_run_config(raw)


def load_normalized_csv(path: str) -> DataSet:
    """Read a dataset in the normalized layout (y, x1..xd, z1..zm)."""
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise ConfigError("csv", f"file not found: {path}")
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError("csv", f"{path} is empty")
        x_cols = [c for c in header if c.startswith("x")]
        z_cols = [c for c in header if c.startswith("z")]
        expected = ["y"] + [f"x{i + 1}" for i in range(len(x_cols))] + [
            f"z{i + 1}" for i in range(len(z_cols))
        ]
        if header != expected or not x_cols or not z_cols:
            raise ConfigError(
                "csv",
                f"{path} must have header y,x1..,z1.. (got {','.join(header)})",
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ConfigError("csv", f"{path} line {lineno}: expected {len(header)} fields")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ConfigError("csv", f"{path} line {lineno}: non-numeric value")
    arr = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ConfigError("csv", f"{path} contains non-finite values")
    d = len(x_cols)
    return DataSet(y=arr[:, 0], x=arr[:, 1 : 1 + d], z=arr[:, 1 + d :])


def _write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _cmd_run(args) -> int:
    config = load_config_file(args.config)
    if args.reps is not None:
        if args.reps < 1:
            raise ConfigError("n_reps", "must be >= 1")
        config = dataclasses.replace(config, n_reps=args.reps)
    fixed = load_normalized_csv(config.csv_path) if config.csv_path else None
    if fixed is not None:
        total = config.n_train + config.n_cal + config.n_test
        _require(
            fixed.n >= total,
            "csv",
            f"dataset has {fixed.n} rows but splits need {total}",
        )

    def progress(done, total):
        if args.quiet:
            return
        sys.stderr.write(f"\rreplication {done}/{total}")
        sys.stderr.flush()
        if done == total:
            sys.stderr.write("\n")

    records, aggregates, failures = run_replications(config, fixed, progress)
    for rep, msg in failures:
        sys.stderr.write(f"warning: replication {rep} failed: {msg}\n")

    os.makedirs(args.out, exist_ok=True)
    _write_csv(
        os.path.join(args.out, "records.csv"),
        (
            "rep_seed", "radius_class", "family_or_model",
            "scenario", "coverage", "mean_length", "n_unbounded",
        ),
        [
            (
                r.rep_seed, r.radius_class, r.family_or_model,
                r.scenario, r.coverage, r.mean_length, r.n_unbounded,
            )
            for r in records
        ],
    )
    _write_csv(
        os.path.join(args.out, "results.csv"),
        (
            "radius_class", "family_or_model", "scenario",
            "cov_mean", "cov_sd", "len_mean", "len_sd", "n_unbounded_reps",
        ),
        [
            (
                a.radius_class, a.family_or_model, a.scenario,
                a.cov_mean, a.cov_sd, a.len_mean, a.len_sd, a.n_unbounded_reps,
            )
            for a in aggregates
        ],
    )
    if not args.quiet:
        for a in aggregates:
            print(
                f"{a.radius_class}:{a.family_or_model} {a.scenario}: "
                f"coverage {a.cov_mean:.3f} (sd {a.cov_sd:.3f}), "
                f"length {_fmt(a.len_mean)} (sd {_fmt(a.len_sd)}), "
                f"unbounded reps {a.n_unbounded_reps}/{a.n_reps}"
            )
    return 0


def _cmd_surface(args) -> int:
    config = load_config_file(args.config)
    if args.steps < 2:
        raise ConfigError("--steps", "need at least 2 grid steps per axis")
    if not (args.x_min < args.x_max):
        raise ConfigError("--x-min", "grid bounds must satisfy x_min < x_max")
    if not (args.z_min < args.z_max):
        raise ConfigError("--z-min", "grid bounds must satisfy z_min < z_max")
    fixed = load_normalized_csv(config.csv_path) if config.csv_path else None
    try:
        rows = surface_grid(
            config,
            args.x_min,
            args.x_max,
            args.z_min,
            args.z_max,
            args.steps,
            rep_index=args.rep,
            fixed_data=fixed,
        )
    except ValueError as exc:
        if "scalar x and z" in str(exc):
            raise ConfigError("design", str(exc))
        raise
    os.makedirs(args.out, exist_ok=True)
    _write_csv(
        os.path.join(args.out, "surface.csv"),
        ("method", "x", "z", "lower", "upper"),
        rows,
    )
    if not args.quiet:
        print(f"wrote {len(rows)} rows to {os.path.join(args.out, 'surface.csv')}")
    return 0


def _split_cols(raw: str, flag: str) -> List[str]:
    cols = [c.strip() for c in raw.split(",") if c.strip()]
    if not cols:
        raise ConfigError(flag, "expected a comma-separated column list")
    return cols


def _cmd_ingest(args) -> int:
    x_cols = _split_cols(args.x_cols, "--x-cols")
    z_cols = _split_cols(args.z_cols, "--z-cols")
    wanted = [args.y_col] + x_cols + z_cols
    if len(set(wanted)) != len(wanted):
        raise ConfigError("--x-cols", "column selections overlap")
    try:
        fh = open(args.input, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise ConfigError("--input", f"file not found: {args.input}")
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in wanted if c not in header]
        if missing:
            raise ConfigError("--input", f"missing columns: {', '.join(missing)}")
        extra = [c for c in header if c not in wanted]
        if extra:
            sys.stderr.write(
                f"warning: ignoring extra columns: {', '.join(extra)}\n"
            )
        out_rows = []
        for lineno, row in enumerate(reader, start=2):
            values = []
            for col in wanted:
                cell = (row.get(col) or "").strip()
                if not cell:
                    raise ConfigError(
                        "--input", f"line {lineno}, column {col!r}: missing value"
                    )
                try:
                    val = float(cell)
                except ValueError:
                    raise ConfigError(
                        "--input",
                        f"line {lineno}, column {col!r}: could not parse {cell!r} as a number",
                    )
                if not math.isfinite(val):
                    raise ConfigError(
                        "--input", f"line {lineno}, column {col!r}: non-finite value"
                    )
                values.append(val)
            out_rows.append(values)
    if not out_rows:
        raise ConfigError("--input", "no data rows")
    out_header = ["y"] + [f"x{i + 1}" for i in range(len(x_cols))] + [
        f"z{i + 1}" for i in range(len(z_cols))
    ]
    _write_csv(args.output, out_header, out_rows)
    if not args.quiet:
        print(f"wrote {len(out_rows)} rows to {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ivconformal",
        description="Calibrated prediction intervals for instrumental-variable regression.",
    )
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a replication study")
    p_run.add_argument("--config", required=True, help="path to JSON config")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--reps", type=int, default=None, help="override n_reps")
    p_run.set_defaults(func=_cmd_run)

    p_surf = sub.add_parser(
        "surface", help="write interval endpoints on an (x, z) grid for one replication"
    )
    p_surf.add_argument("--config", required=True, help="path to JSON config")
    p_surf.add_argument("--out", required=True, help="output directory")
    p_surf.add_argument("--x-min", type=float, default=-2.0, help="grid lower bound in x")
    p_surf.add_argument("--x-max", type=float, default=2.0, help="grid upper bound in x")
    p_surf.add_argument("--z-min", type=float, default=-1.0, help="grid lower bound in z")
    p_surf.add_argument("--z-max", type=float, default=1.0, help="grid upper bound in z")
    p_surf.add_argument("--steps", type=int, default=41, help="grid points per axis")
    p_surf.add_argument("--rep", type=int, default=0, help="replication index to draw")
    p_surf.set_defaults(func=_cmd_surface)

    p_ing = sub.add_parser("ingest", help="validate a raw CSV and normalize columns")
    p_ing.add_argument("--input", required=True, help="raw CSV path")
    p_ing.add_argument("--output", required=True, help="normalized CSV path")
    p_ing.add_argument("--y-col", required=True, help="outcome column name")
    p_ing.add_argument("--x-cols", required=True, help="comma-separated regressor columns")
    p_ing.add_argument("--z-cols", required=True, help="comma-separated instrument columns")
    p_ing.set_defaults(func=_cmd_ingest)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
