"""Repeated-trial transfer evaluation: split, select rank on an inner
validation set, score r-squared on the held-out primary observations.

A method is named by a string such as ``gp-se``, ``mtgp-sc-sum``,
``mtgp-sn-nn`` or ``mtgp-comp-se-nn``.  The single-task ``gp-*`` methods
see only the primary task's observations; the multitask methods
additionally train on every secondary observation, which is the transfer
setting under study.
"""

from __future__ import annotations

import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import SpectraTable, TargetStandardizer, split_trial
from .errors import ConfigError, DataError, FitError, NumericalError
from .kernels import KINDS, KernelSpec
from .model import (ObservationSet, fit, gp_config, mtgp_comp_config,
                    mtgp_sc_config, mtgp_sn_config, predict_mean)
from .optimize import OptimizerSettings

PRESETS = ("gp", "mtgp-sc", "mtgp-sn", "mtgp-comp")
MAX_RANK_COMBINATIONS = 16


def r_squared(y_true, y_pred) -> float:
    """Coefficient of determination 1 - SSE/SST."""
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    if y_true.shape != y_pred.shape:
        raise DataError(f"length mismatch: {y_true.shape[0]} vs {y_pred.shape[0]}")
    if y_true.shape[0] < 2:
        raise DataError("r^2 needs at least 2 values")
    sst = float(np.sum((y_true - y_true.mean()) ** 2))
    if sst == 0.0:
        raise DataError("r^2 undefined: y_true is constant")
    sse = float(np.sum((y_true - y_pred) ** 2))
    return 1.0 - sse / sst


@dataclass(frozen=True)
class MethodSpec:
    """Parsed method string: preset plus one kernel kind per term."""

    preset: str
    kernels: tuple

    @property
    def name(self) -> str:
        return "-".join((self.preset,) + self.kernels)

    @property
    def single_task(self) -> bool:
        return self.preset == "gp"

    @property
    def num_rank_slots(self) -> int:
        # matrices whose rank is searched: none for gp, the one term for
        # sc, term+noise for sn, both terms for comp
        return {"gp": 0, "mtgp-sc": 1, "mtgp-sn": 2, "mtgp-comp": 2}[self.preset]


def parse_method(name: str) -> MethodSpec:
    text = name.strip().lower()
    for preset in sorted(PRESETS, key=len, reverse=True):
        if text == preset or text.startswith(preset + "-"):
            rest = text[len(preset):].lstrip("-")
            kernels = tuple(k for k in rest.split("-") if k)
            break
    else:
        raise ConfigError(f"unknown method {name!r}; presets are {PRESETS}")
    expected = 2 if preset == "mtgp-comp" else 1
    if len(kernels) != expected:
        raise ConfigError(f"{preset} takes {expected} kernel(s), got {kernels or 'none'} "
                          f"in {name!r}")
    bad = [k for k in kernels if k not in KINDS]
    if bad:
        raise ConfigError(f"unknown kernel {bad[0]!r} in {name!r}; choices are {KINDS}")
    return MethodSpec(preset, kernels)


def build_config(method: MethodSpec, num_tasks: int, ranks: tuple):
    """ModelConfig for a method at a specific rank assignment."""
    if len(ranks) != method.num_rank_slots:
        raise ConfigError(f"{method.name} expects {method.num_rank_slots} rank(s), "
                          f"got {ranks}")
    specs = [KernelSpec.of_kind(k) for k in method.kernels]
    if method.preset == "gp":
        return gp_config(specs[0])
    if method.preset == "mtgp-sc":
        return mtgp_sc_config(num_tasks, specs[0], rank=ranks[0])
    if method.preset == "mtgp-sn":
        return mtgp_sn_config(num_tasks, specs[0], rank=ranks[0], noise_rank=ranks[1])
    return mtgp_comp_config(num_tasks, specs[0], specs[1],
                            rank1=ranks[0], rank2=ranks[1])


def rank_assignments(method: MethodSpec, num_tasks: int, candidate_ranks) -> list:
    """Joint rank grid, pruned to equal ranks when it would exceed the cap.

    Sorted by total rank then lexicographically, so a first-strict-
    improvement scan realizes the smallest-rank tie-break.
    """
    ranks = sorted(set(int(r) for r in candidate_ranks))
    if not ranks:
        raise ConfigError("candidate_ranks must be non-empty")
    if ranks[0] < 0 or ranks[-1] > num_tasks:
        raise ConfigError(f"candidate ranks must lie in [0, {num_tasks}], got {ranks}")
    slots = method.num_rank_slots
    if slots == 0:
        return [()]
    grid = [tuple(c) for c in itertools.product(ranks, repeat=slots)]
    if len(grid) > MAX_RANK_COMBINATIONS:
        grid = [(r,) * slots for r in ranks]
    return sorted(grid, key=lambda c: (sum(c), c))


def select_tasks(table: SpectraTable, primary_task: str,
                 secondary_tasks=None) -> SpectraTable:
    """Reorder columns to put the primary task first.

    ``secondary_tasks`` restricts (and orders) the remaining columns;
    None keeps every other task in table order.
    """
    available = table.task_names
    if primary_task not in available:
        raise ConfigError(f"primary task {primary_task!r} not in data; "
                          f"tasks are {list(available)}")
    if secondary_tasks is None:
        secondary_tasks = tuple(n for n in available if n != primary_task)
    for n in secondary_tasks:
        if n not in available:
            raise ConfigError(f"secondary task {n!r} not in data; "
                              f"tasks are {list(available)}")
    names = (primary_task,) + tuple(secondary_tasks)
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate task selection in {names}")
    idx = [available.index(n) for n in names]
    return SpectraTable(table.wavelengths, table.reflectance,
                        table.targets[:, idx], names)


@dataclass(frozen=True)
class ExperimentPlan:
    table: SpectraTable
    methods: tuple
    primary_task: str
    secondary_tasks: tuple = None
    num_trials: int = 50
    candidate_ranks: tuple = (0, 1)
    optimizer: OptimizerSettings = OptimizerSettings()
    base_seed: int = 0
    refit_full: bool = False

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.methods:
            raise ConfigError("plan needs at least one method")
        for m in self.methods:
            parse_method(m)
        if self.num_trials < 1:
            raise ConfigError(f"num_trials must be >= 1, got {self.num_trials}")
        if self.secondary_tasks is not None:
            object.__setattr__(self, "secondary_tasks", tuple(self.secondary_tasks))
        table = self.resolved_table()
        ranks = tuple(int(r) for r in self.candidate_ranks)
        if not ranks:
            raise ConfigError("candidate_ranks must be non-empty")
        if min(ranks) < 0 or max(ranks) > table.num_tasks:
            raise ConfigError(f"candidate ranks must lie in [0, {table.num_tasks}], "
                              f"got {sorted(ranks)}")
        object.__setattr__(self, "candidate_ranks", ranks)

    def resolved_table(self) -> SpectraTable:
        """Columns reordered to primary first, then the secondary tasks."""
        return select_tasks(self.table, self.primary_task, self.secondary_tasks)


@dataclass
class TrialReport:
    method: str
    label: str
    trial_index: int
    seed: int
    selected_ranks: tuple
    params: np.ndarray
    inner_r2: float
    test_r2: float
    wall_time: float
    candidates: list = field(default_factory=list)

    def to_record(self) -> dict:
        # wall_time stays in memory only: written artifacts must be
        # byte-identical for any --jobs setting
        return {"method": self.method, "label": self.label,
                "trial_index": self.trial_index, "seed": self.seed,
                "selected_ranks": list(self.selected_ranks),
                "params": [float(v) for v in self.params],
                "inner_r2": self.inner_r2, "test_r2": self.test_r2,
                "candidates": self.candidates}


def _standardizer_from(train: ObservationSet) -> TargetStandardizer:
    grid = np.full((train.X.shape[0], train.num_tasks), np.nan)
    grid[train.input_idx, train.task_idx] = train.y
    return TargetStandardizer.fit(grid)


def _standardize(obs: ObservationSet, std: TargetStandardizer) -> ObservationSet:
    return obs.with_targets((obs.y - std.mean[obs.task_idx]) / std.std[obs.task_idx])


def _primary_only(obs: ObservationSet) -> ObservationSet:
    sel = obs.task_idx == 0
    return ObservationSet(obs.X, 1, obs.input_idx[sel],
                          np.zeros(int(sel.sum()), dtype=int), obs.y[sel])


def _safe_r2(y_true, y_pred) -> float:
    try:
        return r_squared(y_true, y_pred)
    except DataError:
        return float("nan")


def trial_seeds(base_seed: int, trial_index: int):
    """Derived (split_seed, optimizer_seed); stable across trial ordering."""
    state = np.random.SeedSequence((base_seed, trial_index)).generate_state(2)
    return int(state[0]), int(state[1])


def run_trial(plan: ExperimentPlan, method_name: str, trial_index: int) -> TrialReport:
    """One train/select/test cycle; deterministic in (base_seed, trial_index)."""
    t_start = time.perf_counter()
    method = parse_method(method_name)
    table = plan.resolved_table()
    split_seed, opt_seed = trial_seeds(plan.base_seed, trial_index)
    train, test, inner_train, inner_val = split_trial(table, 0, split_seed)

    std = _standardizer_from(train)
    train_s = _standardize(train, std)
    inner_train_s = _standardize(inner_train, std)
    inner_val_s = _standardize(inner_val, std)
    num_tasks = table.num_tasks
    if method.single_task:
        train_s = _primary_only(train_s)
        inner_train_s = _primary_only(inner_train_s)
        inner_val_s = _primary_only(inner_val_s)
        num_tasks = 1

    opt = replace(plan.optimizer, seed=opt_seed)
    val_sel = inner_val_s.task_idx == 0
    X_val = inner_val_s.X[inner_val_s.input_idx[val_sel]]
    y_val = inner_val_s.y[val_sel]

    best = None
    candidates = []
    failures = []
    for ranks in rank_assignments(method, num_tasks, plan.candidate_ranks):
        config = build_config(method, num_tasks, ranks)
        try:
            fitted = fit(config, inner_train_s, opt)
        except (FitError, NumericalError) as exc:
            failures.append(f"ranks {ranks}: {exc}")
            continue
        pred_val = predict_mean(fitted, X_val, 0)
        # -SSE orders candidates exactly like r^2 (same validation set),
        # and stays defined when the validation set is too small for r^2
        score = -float(np.sum((y_val - pred_val) ** 2))
        val_r2 = _safe_r2(y_val, pred_val)
        candidates.append({"ranks": list(ranks), "score": score, "inner_r2": val_r2})
        if best is None or score > best[1]:
            best = (ranks, score, val_r2, fitted)
    if best is None:
        raise FitError(f"trial {trial_index} ({method_name}): every rank candidate "
                       f"failed to fit", failures)
    sel_ranks, _, sel_r2, model = best
    if plan.refit_full:
        model = fit(build_config(method, num_tasks, sel_ranks), train_s, opt)

    X_test = test.X[test.input_idx]
    pred_test = std.inverse_task(predict_mean(model, X_test, 0), 0)
    test_r2 = _safe_r2(test.y, pred_test)
    return TrialReport(method=method.name, label=model.config.label,
                       trial_index=trial_index, seed=split_seed,
                       selected_ranks=tuple(sel_ranks),
                       params=model.config.pack(),
                       inner_r2=sel_r2, test_r2=test_r2,
                       wall_time=time.perf_counter() - t_start,
                       candidates=candidates)


@dataclass
class MethodSummary:
    method: str
    label: str
    mean_r2: float
    std_r2: float
    num_trials: int
    num_failed: int


@dataclass
class ExperimentSummary:
    methods: list
    reports: list
    failures: list = field(default_factory=list)

    def to_text(self) -> str:
        """Aligned mean/std comparison table, one row per method."""
        rows = [("method", "label", "mean r2", "std", "trials")]
        for s in self.methods:
            rows.append((s.method, s.label, f"{s.mean_r2:.4f}", f"{s.std_r2:.4f}",
                         str(s.num_trials) + (f" ({s.num_failed} failed)"
                                              if s.num_failed else "")))
        widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
                 for row in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = ["method,label,mean_r2,std_r2,num_trials,num_failed"]
        for s in self.methods:
            lines.append(f"{s.method},\"{s.label}\",{s.mean_r2!r},{s.std_r2!r},"
                         f"{s.num_trials},{s.num_failed}")
        return "\n".join(lines) + "\n"

    def write_reports_jsonl(self, path):
        with open(path, "w") as fh:
            for rep in self.reports:
                fh.write(json.dumps(rep.to_record()) + "\n")


def run_experiment(plan: ExperimentPlan, jobs: int = 1, allow_partial: bool = False,
                   progress=None) -> ExperimentSummary:
    """All (method, trial) combinations, optionally across processes.

    Results are keyed by (method index, trial index) and reduced in that
    order, so the summary is identical for any ``jobs``.  With
    ``allow_partial`` failed trials are recorded and skipped instead of
    aborting the run.
    """
    keys = [(mi, ti) for mi in range(len(plan.methods))
            for ti in range(plan.num_trials)]
    outcomes = {}
    if jobs <= 1:
        for mi, ti in keys:
            outcomes[(mi, ti)] = _guarded_trial(plan, plan.methods[mi], ti)
            if progress:
                progress(plan.methods[mi], ti, outcomes[(mi, ti)])
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {(mi, ti): pool.submit(run_trial, plan, plan.methods[mi], ti)
                       for mi, ti in keys}
            for (mi, ti), fut in futures.items():
                try:
                    outcomes[(mi, ti)] = fut.result()
                except (FitError, NumericalError, DataError) as exc:
                    outcomes[(mi, ti)] = exc
                if progress:
                    progress(plan.methods[mi], ti, outcomes[(mi, ti)])

    first_error = next((outcomes[k] for k in keys
                        if isinstance(outcomes[k], Exception)), None)
    if first_error is not None and not allow_partial:
        raise first_error

    summaries, reports, failures = [], [], []
    for mi, method in enumerate(plan.methods):
        r2s, label, failed = [], method, 0
        for ti in range(plan.num_trials):
            out = outcomes[(mi, ti)]
            if isinstance(out, Exception):
                failures.append({"method": method, "trial_index": ti,
                                 "error": str(out)})
                failed += 1
                continue
            reports.append(out)
            label = out.label
            if np.isfinite(out.test_r2):
                r2s.append(out.test_r2)
        mean = float(np.mean(r2s)) if r2s else float("nan")
        # population std: a single trial reports spread 0, not undefined
        std = float(np.std(r2s)) if r2s else float("nan")
        summaries.append(MethodSummary(method=method, label=label, mean_r2=mean,
                                       std_r2=std, num_trials=plan.num_trials,
                                       num_failed=failed))
    return ExperimentSummary(methods=summaries, reports=reports, failures=failures)


def _guarded_trial(plan, method, ti):
    try:
        return run_trial(plan, method, ti)
    except (FitError, NumericalError, DataError) as exc:
        return exc
