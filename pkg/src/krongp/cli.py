"""The ``krongp`` command: fit, predict, benchmark, map, synth.

One executable with subcommands so model I/O and configuration are
shared.  Every command is deterministic given its flags; all randomness
derives from ``--seed`` (default 0).  Exit codes are stable: 0 success,
2 configuration, 3 data validation, 4 numerical failure, 5 I/O.

A JSON config file may supply any flag's value by its long-name
(underscored) key; explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .cube import load_cube, ndvi_mask, write_float_map, write_gray_map
from .data import (WATER_BANDS, SpectraTable, load_spectra_table,
                   remove_wavelength_ranges, resample, save_spectra_table,
                   TargetStandardizer)
from .errors import (ConfigError, DataError, FitError, KronGPError,
                     NumericalError, ParameterError, ShapeError)
from .experiment import (ExperimentPlan, build_config, parse_method,
                         rank_assignments, run_experiment, select_tasks)
from .model import ObservationSet, fit, predict_mean, predict_variance
from .optimize import OptimizerSettings
from .report import render_map_figure, write_benchmark_outputs
from .serialize import ModelMetadata, load_model, save_model
from .synthetic import transfer_table


def _parse_ranges(text):
    """'1350:1460,1790:1960' -> ((1350.0, 1460.0), (1790.0, 1960.0))"""
    if not text.strip():
        return ()
    out = []
    for part in text.split(","):
        lo, sep, hi = part.partition(":")
        if not sep:
            raise ConfigError(f"bad wavelength range {part!r}; expected lo:hi")
        try:
            out.append((float(lo), float(hi)))
        except ValueError:
            raise ConfigError(f"bad wavelength range {part!r}; expected lo:hi")
    return tuple(out)


def _parse_ints(text):
    try:
        return tuple(int(v) for v in str(text).split(",") if v.strip() != "")
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}")


def _parse_names(text):
    return tuple(n.strip() for n in str(text).split(",") if n.strip())


def _optimizer_from(args) -> OptimizerSettings:
    return OptimizerSettings(num_restarts=args.restarts,
                             max_iterations=args.max_iter,
                             gradient_tolerance=args.grad_tol,
                             step_tolerance=args.step_tol,
                             seed=args.seed)


def _load_table(args) -> SpectraTable:
    table = load_spectra_table(args.data)
    ranges = _parse_ranges(args.water_bands) if args.water_bands else WATER_BANDS
    if not args.no_band_removal and ranges:
        table = remove_wavelength_ranges(table, ranges)
    return table


def _add_optimizer_flags(p):
    p.add_argument("--restarts", type=int, default=5,
                   help="random restarts per fit (default 5)")
    p.add_argument("--max-iter", type=int, default=200,
                   help="iteration cap per restart (default 200)")
    p.add_argument("--grad-tol", type=float, default=1e-5,
                   help="gradient infinity-norm stop tolerance")
    p.add_argument("--step-tol", type=float, default=1e-9,
                   help="step-size stop tolerance")


def _add_preprocess_flags(p):
    p.add_argument("--water-bands", default=None, metavar="LO:HI,LO:HI",
                   help="wavelength exclusion ranges in nm "
                        "(default 1350:1460,1790:1960)")
    p.add_argument("--no-band-removal", action="store_true",
                   help="keep all bands, skip water-band removal")


def _add_common_flags(p):
    p.add_argument("--config", default=None,
                   help="JSON file supplying defaults for this command's flags")
    p.add_argument("--seed", type=int, default=0,
                   help="random seed (default 0; every command is "
                        "deterministic given its flags)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="krongp",
        description="Multitask Gaussian process regression for spectra-to-"
                    "chemistry transfer, with benchmarking and prediction maps.")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {}

    p = sub.add_parser("synth", help="generate a synthetic transfer dataset")
    p.add_argument("--out", required=True, help="output spectra CSV path")
    p.add_argument("--rows", type=int, default=100)
    p.add_argument("--primary-labels", type=int, default=10,
                   help="rows carrying a primary-task label (default 10)")
    p.add_argument("--tasks", type=int, default=2)
    p.add_argument("--bands", type=int, default=8)
    p.add_argument("--correlation", type=float, default=0.9,
                   help="inter-task coupling of the SE component (default 0.9)")
    p.add_argument("--correlation2", type=float, default=None,
                   help="coupling of the NN component (default: same as "
                        "--correlation; 0 = task-independent)")
    p.add_argument("--nn-weight", type=float, default=1.0,
                   help="NN component weight scale (large = sharp variation)")
    p.add_argument("--noise-std", type=float, default=0.1)
    _add_common_flags(p)
    commands["synth"] = p

    p = sub.add_parser("fit", help="fit one model on a labelled spectra table")
    p.add_argument("--data", required=True, help="spectra CSV")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--method", default="mtgp-comp-se-nn",
                   help="gp-K, mtgp-sc-K, mtgp-sn-K, or mtgp-comp-K1-K2 with "
                        "K in {se, nn, sum} (default mtgp-comp-se-nn)")
    p.add_argument("--primary", required=True, help="primary task column name")
    p.add_argument("--secondary", default=None,
                   help="comma-separated secondary task names (default: all others)")
    p.add_argument("--ranks", default="1",
                   help="task-matrix rank per searched matrix, e.g. '1' or '1,2'")
    _add_preprocess_flags(p)
    _add_optimizer_flags(p)
    _add_common_flags(p)
    commands["fit"] = p

    p = sub.add_parser("predict", help="predict a task from spectra with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="spectra CSV (labels optional)")
    p.add_argument("--task", default=None, help="task name (default: the primary)")
    p.add_argument("--out", default="-", help="output CSV, '-' for stdout")
    p.add_argument("--include-noise", action="store_true",
                   help="report observation std (latent + noise) instead of latent")
    _add_preprocess_flags(p)
    _add_common_flags(p)
    commands["predict"] = p

    p = sub.add_parser("benchmark", help="run the repeated-trial method comparison")
    p.add_argument("--data", default=None, help="spectra CSV (or use --synthetic)")
    p.add_argument("--synthetic", action="store_true",
                   help="generate data from the composite prior instead of reading a file")
    p.add_argument("--rows", type=int, default=100)
    p.add_argument("--primary-labels", type=int, default=10)
    p.add_argument("--tasks", type=int, default=2)
    p.add_argument("--bands", type=int, default=8)
    p.add_argument("--correlation", type=float, default=0.9)
    p.add_argument("--correlation2", type=float, default=None)
    p.add_argument("--nn-weight", type=float, default=1.0)
    p.add_argument("--noise-std", type=float, default=0.1)
    p.add_argument("--methods", default="gp-se,mtgp-sc-se,mtgp-sn-se,mtgp-comp-se-nn")
    p.add_argument("--primary", default=None,
                   help="primary task (default: first task; synthetic: 'primary')")
    p.add_argument("--secondary", default=None)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--ranks", default="0,1", help="candidate ranks, e.g. '0,1,2'")
    p.add_argument("--refit-full", action="store_true",
                   help="refit on the full training set after rank selection")
    p.add_argument("--allow-partial", action="store_true",
                   help="keep going when individual trials fail")
    p.add_argument("--jobs", type=int, default=1,
                   help="concurrent trials (results identical for any value)")
    p.add_argument("--out-dir", default=None,
                   help="directory for summary.txt/.csv/.png and trials.jsonl")
    p.add_argument("--dry-run", action="store_true",
                   help="print the resolved plan and exit without fitting")
    _add_preprocess_flags(p)
    _add_optimizer_flags(p)
    _add_common_flags(p)
    commands["benchmark"] = p

    p = sub.add_parser("map", help="render per-pixel prediction maps from a cube")
    p.add_argument("--cube", required=True, help="raw cube file (sidecar: <cube>.json)")
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--tasks", default=None,
                   help="comma-separated task names to map (default: the primary)")
    p.add_argument("--ndvi-red", type=float, default=670.0)
    p.add_argument("--ndvi-nir", type=float, default=800.0)
    p.add_argument("--ndvi-threshold", type=float, default=0.3)
    p.add_argument("--no-ndvi", action="store_true", help="predict every pixel")
    p.add_argument("--jobs", type=int, default=1,
                   help="concurrent raster rows (results identical for any value)")
    _add_preprocess_flags(p)
    _add_common_flags(p)
    commands["map"] = p

    return parser, commands


def _apply_config_file(parser, commands, args, argv):
    if not getattr(args, "config", None):
        return args
    with open(args.config, "r") as fh:
        try:
            overrides = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: not valid JSON ({exc})")
    if not isinstance(overrides, dict):
        raise ConfigError(f"{args.config}: top level must be an object")
    sub = commands[args.command]
    valid = {a.dest for a in sub._actions}
    unknown = sorted(set(overrides) - valid)
    if unknown:
        raise ConfigError(f"{args.config}: unknown key(s) {unknown}; "
                          f"valid keys are {sorted(valid - {'help'})}")
    sub.set_defaults(**overrides)
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    table = transfer_table(num_rows=args.rows, num_primary=args.primary_labels,
                           num_tasks=args.tasks, num_bands=args.bands,
                           correlation=args.correlation,
                           correlation2=args.correlation2,
                           noise_std=args.noise_std, nn_weight=args.nn_weight,
                           seed=args.seed)
    save_spectra_table(table, args.out)
    observed = int(table.observed_mask().sum())
    print(f"wrote {args.out}: {table.num_samples} rows, {table.num_tasks} tasks, "
          f"{table.wavelengths.size} bands, {observed} labels")
    return 0


def cmd_fit(args) -> int:
    method = parse_method(args.method)
    table = _load_table(args)
    secondary = _parse_names(args.secondary) if args.secondary else None
    sub = select_tasks(table, args.primary, secondary)
    if method.single_task:
        sub = SpectraTable(sub.wavelengths, sub.reflectance,
                           sub.targets[:, :1], sub.task_names[:1])
    ranks = _parse_ints(args.ranks)
    slots = method.num_rank_slots
    if slots == 0:
        ranks = ()
    elif len(ranks) == 1 and slots > 1:
        ranks = ranks * slots
    elif len(ranks) != slots:
        raise ConfigError(f"{method.name} needs {slots} rank value(s), "
                          f"got {args.ranks!r}")
    config = build_config(method, sub.num_tasks, ranks)

    std = TargetStandardizer.fit(sub.targets)
    obs = ObservationSet.from_grid(sub.reflectance, std.transform(sub.targets))
    model = fit(config, obs, _optimizer_from(args))

    info = model.fit_info
    for r in info.restarts:
        print(f"restart {r.index}: nlml {r.f_init:.4f} -> {r.f_final:.4f} "
              f"({r.reason}, {r.iterations} iterations)")
    for idx, exc in info.errors:
        print(f"restart {idx}: failed ({exc})")
    print(f"best restart: {info.best_index}, final nlml {info.best.f:.6f}")
    if args.verbose:
        for name, value in zip(model.config.param_names(), model.config.pack()):
            print(f"  {name} = {value!r}")

    save_model(model, args.out,
               ModelMetadata(method=method.name, seed=args.seed,
                             task_names=sub.task_names,
                             wavelengths=sub.wavelengths, standardizer=std))
    print(f"wrote {args.out} ({model.config.label}, "
          f"{obs.n_obs} training observations)")
    return 0


def cmd_predict(args) -> int:
    model, meta = load_model(args.model)
    if meta.wavelengths is None or meta.standardizer is None or meta.task_names is None:
        raise ConfigError(f"{args.model} lacks wavelength/standardizer metadata; "
                          "was it written by 'krongp fit'?")
    table = _load_table(args)
    task_name = args.task or meta.task_names[0]
    if task_name not in meta.task_names:
        raise ConfigError(f"task {task_name!r} not in model; "
                          f"model tasks are {list(meta.task_names)}")
    task = meta.task_names.index(task_name)
    X = resample(table.wavelengths, table.reflectance, meta.wavelengths)
    mean = meta.standardizer.inverse_task(predict_mean(model, X, task), task)
    var = predict_variance(model, X, task, include_noise=args.include_noise)
    std_dev = np.sqrt(var) * meta.standardizer.std[task]

    lines = ["row,mean,std"]
    lines += [f"{i},{float(mean[i])!r},{float(std_dev[i])!r}"
              for i in range(X.shape[0])]
    text = "\n".join(lines) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"wrote {args.out} ({X.shape[0]} predictions, task {task_name!r})")
    return 0


def _benchmark_table(args) -> SpectraTable:
    if args.synthetic:
        if args.data:
            raise ConfigError("give either --data or --synthetic, not both")
        return transfer_table(num_rows=args.rows, num_primary=args.primary_labels,
                              num_tasks=args.tasks, num_bands=args.bands,
                              correlation=args.correlation,
                              correlation2=args.correlation2,
                              noise_std=args.noise_std, nn_weight=args.nn_weight,
                              seed=args.seed)
    if not args.data:
        raise ConfigError("benchmark needs --data FILE or --synthetic")
    return _load_table(args)


def cmd_benchmark(args) -> int:
    table = _benchmark_table(args)
    primary = args.primary or ("primary" if args.synthetic else table.task_names[0])
    plan = ExperimentPlan(table=table,
                          methods=_parse_names(args.methods),
                          primary_task=primary,
                          secondary_tasks=(_parse_names(args.secondary)
                                           if args.secondary else None),
                          num_trials=args.trials,
                          candidate_ranks=_parse_ints(args.ranks),
                          optimizer=_optimizer_from(args),
                          base_seed=args.seed,
                          refit_full=args.refit_full)

    if args.dry_run:
        resolved = plan.resolved_table()
        print(f"data: {resolved.num_samples} rows, {resolved.num_tasks} tasks "
              f"({', '.join(resolved.task_names)}), "
              f"{resolved.wavelengths.size} bands")
        print(f"trials: {plan.num_trials}  base seed: {plan.base_seed}  "
              f"candidate ranks: {list(plan.candidate_ranks)}  "
              f"refit on full train: {plan.refit_full}")
        for m in plan.methods:
            spec = parse_method(m)
            n_tasks = 1 if spec.single_task else resolved.num_tasks
            grid = rank_assignments(spec, n_tasks, plan.candidate_ranks)
            print(f"  {m}: {len(grid)} rank candidate(s) {grid}")
        return 0

    if not args.out_dir:
        raise ConfigError("benchmark needs --out-dir (or --dry-run)")

    def progress(method, ti, outcome):
        if not args.verbose:
            return
        if isinstance(outcome, Exception):
            print(f"[{method}] trial {ti}: FAILED ({outcome})", file=sys.stderr)
        else:
            print(f"[{method}] trial {ti}: test r2 {outcome.test_r2:.4f} "
                  f"ranks {list(outcome.selected_ranks)} "
                  f"({outcome.wall_time:.1f}s)", file=sys.stderr)

    summary = run_experiment(plan, jobs=args.jobs,
                             allow_partial=args.allow_partial, progress=progress)
    paths = write_benchmark_outputs(summary, args.out_dir)
    sys.stdout.write(summary.to_text())
    print(f"wrote {paths['text']}, {paths['csv']}, {paths['trials']}, "
          f"{paths['figure']}")
    return 0


def _safe_name(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


def cmd_map(args) -> int:
    model, meta = load_model(args.model)
    if meta.wavelengths is None or meta.standardizer is None or meta.task_names is None:
        raise ConfigError(f"{args.model} lacks wavelength/standardizer metadata; "
                          "was it written by 'krongp fit'?")
    cube = load_cube(args.cube)
    # the vegetation index uses bands inside the water windows never, so
    # compute it before any band removal
    if args.no_ndvi:
        mask = np.ones((cube.height, cube.width), dtype=bool)
    else:
        mask = ndvi_mask(cube, red_nm=args.ndvi_red, nir_nm=args.ndvi_nir,
                         threshold=args.ndvi_threshold)
    ranges = _parse_ranges(args.water_bands) if args.water_bands else WATER_BANDS
    if not args.no_band_removal and ranges:
        cube = remove_wavelength_ranges(cube, ranges)
    lo, hi = float(cube.wavelengths.min()), float(cube.wavelengths.max())
    need_lo, need_hi = float(meta.wavelengths.min()), float(meta.wavelengths.max())
    if need_lo < lo or need_hi > hi:
        raise DataError(f"cube covers {lo:g}..{hi:g} nm after band removal but the "
                        f"model needs {need_lo:g}..{need_hi:g} nm")

    task_names = _parse_names(args.tasks) if args.tasks else (meta.task_names[0],)
    for name in task_names:
        if name not in meta.task_names:
            raise ConfigError(f"task {name!r} not in model; model tasks are "
                              f"{list(meta.task_names)}")

    os.makedirs(args.out_dir, exist_ok=True)
    spectra = cube.pixel_spectra().reshape(cube.height, cube.width, -1)

    def predict_row(r, task):
        cols = np.nonzero(mask[r])[0]
        if cols.size == 0:
            return r, cols, np.empty(0)
        X = resample(cube.wavelengths, spectra[r, cols], meta.wavelengths)
        return r, cols, predict_mean(model, X, task)

    written = []
    mask_path = os.path.join(args.out_dir, "mask.csv")
    write_float_map(mask.astype(float), mask_path)
    write_gray_map(mask.astype(float), os.path.join(args.out_dir, "mask.png"))
    written.append(mask_path)

    for name in task_names:
        task = meta.task_names.index(name)
        values = np.full((cube.height, cube.width), np.nan)
        # one unit of work per raster row, independent of --jobs, so the
        # arithmetic (and the output bytes) never depend on concurrency
        rows = range(cube.height)
        if args.jobs > 1:
            with ThreadPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(lambda r: predict_row(r, task), rows))
        else:
            results = [predict_row(r, task) for r in rows]
        for r, cols, pred in results:
            if cols.size:
                values[r, cols] = meta.standardizer.inverse_task(pred, task)
        stem = os.path.join(args.out_dir, f"map_{_safe_name(name)}")
        write_float_map(values, stem + ".csv")
        if np.isfinite(values).any():
            vmin, vmax = write_gray_map(values, stem + ".png")
            render_map_figure(values, stem + "_figure.png",
                              title=f"predicted {name}", units=name)
            if args.verbose:
                print(f"{name}: {int(np.isfinite(values).sum())} pixels, "
                      f"range {vmin:g}..{vmax:g}", file=sys.stderr)
        written.append(stem + ".csv")
    print(f"wrote {len(written)} rasters to {args.out_dir} "
          f"({int(mask.sum())}/{mask.size} pixels unmasked)")
    return 0


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser, commands = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config_file(parser, commands, args, argv)
        handler = {"synth": cmd_synth, "fit": cmd_fit, "predict": cmd_predict,
                   "benchmark": cmd_benchmark, "map": cmd_map}[args.command]
        return handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ShapeError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, FitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except KronGPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
