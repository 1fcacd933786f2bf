"""Spectral data handling: CSV tables, band filtering, resampling,
per-task target standardization.

The on-disk format is a plain comma-separated table.  Header cells that
parse as numbers are reflectance wavelengths (nm, strictly increasing);
the remaining cells name target tasks.  Every row needs a finite value in
each wavelength column; target cells may be empty, which marks that
(sample, task) pair as unobserved.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError

# strong liquid-water absorption windows, in nm; reflectance there is
# dominated by atmospheric/sensor artefacts in field spectra
WATER_BANDS = ((1350.0, 1460.0), (1790.0, 1960.0))


def _parse_float(cell: str):
    try:
        return float(cell)
    except ValueError:
        return None


@dataclass(frozen=True)
class SpectraTable:
    """N reflectance spectra on a shared wavelength grid plus M task targets.

    ``targets`` is N x M with NaN for unobserved entries.
    """

    wavelengths: np.ndarray
    reflectance: np.ndarray
    targets: np.ndarray
    task_names: tuple

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=float).ravel()
        refl = np.asarray(self.reflectance, dtype=float)
        targ = np.asarray(self.targets, dtype=float)
        names = tuple(str(t) for t in self.task_names)
        if refl.ndim != 2 or refl.shape[1] != wl.shape[0]:
            raise ShapeError(f"reflectance shape {refl.shape} does not match "
                             f"{wl.shape[0]} wavelengths")
        if targ.ndim != 2 or targ.shape != (refl.shape[0], len(names)):
            raise ShapeError(f"targets shape {targ.shape} does not match "
                             f"({refl.shape[0]}, {len(names)})")
        if wl.size > 1 and np.any(np.diff(wl) <= 0):
            raise DataError("wavelengths must be strictly increasing")
        if not np.all(np.isfinite(refl)):
            raise DataError("non-finite reflectance values")
        if refl.size and (refl.min() < -0.05 or refl.max() > 1.5):
            # nominal range is [0, 1]; tolerate mild sensor artefacts only
            raise DataError(f"reflectance outside [-0.05, 1.5] "
                            f"(saw {refl.min():g}..{refl.max():g})")
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "reflectance", refl)
        object.__setattr__(self, "targets", targ)
        object.__setattr__(self, "task_names", names)

    @property
    def num_samples(self) -> int:
        return self.reflectance.shape[0]

    @property
    def num_tasks(self) -> int:
        return len(self.task_names)

    def task_index(self, name: str) -> int:
        try:
            return self.task_names.index(name)
        except ValueError:
            raise DataError(f"unknown task {name!r}; table has {list(self.task_names)}")

    def observed_mask(self) -> np.ndarray:
        return np.isfinite(self.targets)


def load_spectra_table(path) -> SpectraTable:
    """Read a spectra CSV.  Errors cite 1-based line numbers."""
    with open(path, "r", newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [cell.strip() for cell in rows[0]]
    wl_cols, task_cols, wl, names = [], [], [], []
    for j, cell in enumerate(header):
        value = _parse_float(cell)
        if value is not None:
            wl_cols.append(j)
            wl.append(value)
        else:
            if not cell:
                raise DataError(f"{path}: line 1: empty header cell in column {j + 1}")
            task_cols.append(j)
            names.append(cell)
    if not wl_cols:
        raise DataError(f"{path}: line 1: no numeric wavelength columns")
    if not task_cols:
        raise DataError(f"{path}: line 1: no task columns")

    refl = np.empty((len(rows) - 1, len(wl_cols)))
    targ = np.full((len(rows) - 1, len(task_cols)), np.nan)
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != len(header):
            raise DataError(f"{path}: line {line}: expected {len(header)} cells, "
                            f"got {len(row)}")
        for k, j in enumerate(wl_cols):
            value = _parse_float(row[j].strip())
            if value is None or not np.isfinite(value):
                raise DataError(f"{path}: line {line}: bad reflectance value "
                                f"{row[j]!r} in column {j + 1}")
            refl[i, k] = value
        for k, j in enumerate(task_cols):
            cell = row[j].strip()
            if not cell:
                continue
            value = _parse_float(cell)
            if value is None or not np.isfinite(value):
                raise DataError(f"{path}: line {line}: bad target value "
                                f"{cell!r} in column {j + 1}")
            targ[i, k] = value
    try:
        return SpectraTable(np.array(wl), refl, targ, tuple(names))
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def save_spectra_table(table: SpectraTable, path):
    """Write the CSV form read back verbatim by ``load_spectra_table``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([repr(float(w)) for w in table.wavelengths]
                        + list(table.task_names))
        for i in range(table.num_samples):
            row = [repr(float(v)) for v in table.reflectance[i]]
            for t in table.targets[i]:
                row.append("" if not np.isfinite(t) else repr(float(t)))
            writer.writerow(row)


def band_keep_mask(wavelengths, ranges) -> np.ndarray:
    """False for every band inside any closed [lo, hi] exclusion range."""
    wl = np.asarray(wavelengths, dtype=float).ravel()
    keep = np.ones(wl.shape[0], dtype=bool)
    for lo, hi in ranges:
        if hi < lo:
            raise DataError(f"invalid wavelength range [{lo}, {hi}]")
        keep &= ~((wl >= lo) & (wl <= hi))
    return keep


def remove_wavelength_ranges(obj, ranges=WATER_BANDS):
    """Drop bands inside the given ranges from a SpectraTable or a cube.

    Anything with a ``select_bands`` method (hyperspectral cubes) is
    handled through it; order of surviving bands is preserved.
    """
    keep = band_keep_mask(obj.wavelengths, ranges)
    if not keep.any():
        raise DataError("wavelength filtering removed every band")
    if isinstance(obj, SpectraTable):
        return SpectraTable(obj.wavelengths[keep], obj.reflectance[:, keep],
                            obj.targets, obj.task_names)
    return obj.select_bands(keep)


def resample(wavelengths, values, target_wavelengths) -> np.ndarray:
    """Linear interpolation onto a new grid.  Refuses to extrapolate."""
    wl = np.asarray(wavelengths, dtype=float).ravel()
    dst = np.asarray(target_wavelengths, dtype=float).ravel()
    vals = np.asarray(values, dtype=float)
    if wl.size > 1 and np.any(np.diff(wl) <= 0):
        raise DataError("source wavelengths must be strictly increasing")
    if dst.size and (dst.min() < wl.min() or dst.max() > wl.max()):
        raise DataError(f"target wavelengths [{dst.min():g}, {dst.max():g}] exceed "
                        f"source range [{wl.min():g}, {wl.max():g}]")
    if vals.ndim == 1:
        if vals.shape[0] != wl.shape[0]:
            raise ShapeError("values length does not match wavelengths")
        return np.interp(dst, wl, vals)
    if vals.ndim != 2 or vals.shape[1] != wl.shape[0]:
        raise ShapeError("values must be (n, num_wavelengths)")
    return np.vstack([np.interp(dst, wl, row) for row in vals])


@dataclass(frozen=True)
class TargetStandardizer:
    """Per-task affine map to zero mean, unit variance, fit on training rows.

    NaN entries are ignored when fitting and passed through by the maps.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, targets) -> "TargetStandardizer":
        targets = np.asarray(targets, dtype=float)
        if targets.ndim != 2:
            raise ShapeError(f"targets must be 2-d, got shape {targets.shape}")
        mean = np.empty(targets.shape[1])
        std = np.empty(targets.shape[1])
        for l in range(targets.shape[1]):
            col = targets[:, l]
            col = col[np.isfinite(col)]
            if col.size == 0:
                raise DataError(f"task {l} has no observed training targets")
            mean[l] = col.mean()
            std[l] = col.std()
            if std[l] < 1e-12:
                raise DataError(f"task {l} training targets are constant; "
                                "cannot standardize")
        return cls(mean=mean, std=std)

    def transform(self, targets) -> np.ndarray:
        return (np.asarray(targets, dtype=float) - self.mean) / self.std

    def inverse(self, standardized) -> np.ndarray:
        return np.asarray(standardized, dtype=float) * self.std + self.mean

    def transform_task(self, values, task: int) -> np.ndarray:
        return (np.asarray(values, dtype=float) - self.mean[task]) / self.std[task]

    def inverse_task(self, values, task: int) -> np.ndarray:
        return np.asarray(values, dtype=float) * self.std[task] + self.mean[task]


def split_trial(table: SpectraTable, primary_task, seed: int):
    """One evaluation split for the transfer protocol.

    Holds out a random third (floor, at least 1) of the samples labelled
    for the primary task as the test set.  Training keeps the remaining
    primary labels plus every secondary-task label, including those on
    test samples: the secondary observations are exactly what transfer is
    supposed to exploit.  The training pairs are further split 80/20 into
    an inner fitting set and an inner validation set used for model
    selection, arranged so the validation set contains at least one
    primary-task pair and the fitting set covers every task.

    Returns ``(train, test, inner_train, inner_val)`` as ObservationSets
    over the table's reflectance rows; targets are raw (unstandardized).
    Deterministic given ``seed``.
    """
    from .model import ObservationSet

    p = table.task_index(primary_task) if isinstance(primary_task, str) else int(primary_task)
    if not 0 <= p < table.num_tasks:
        raise DataError(f"primary task index {p} out of range")
    observed = table.observed_mask()
    primary_rows = np.nonzero(observed[:, p])[0]
    if primary_rows.size < 3:
        raise DataError(f"primary task needs >= 3 labels to split, "
                        f"has {primary_rows.size}")
    rng = np.random.default_rng(seed)
    n_test = max(1, primary_rows.size // 3)
    test_rows = rng.permutation(primary_rows)[:n_test]
    test_set = set(int(i) for i in test_rows)

    all_ii, all_tt = np.nonzero(observed)
    in_test = np.array([(tt == p and ii in test_set)
                        for ii, tt in zip(all_ii, all_tt)], dtype=bool)
    train_ii, train_tt = all_ii[~in_test], all_tt[~in_test]
    X = table.reflectance
    y_all = table.targets

    def build(ii, tt):
        order = np.lexsort((tt, ii))
        ii, tt = ii[order], tt[order]
        return ObservationSet(X, table.num_tasks, ii, tt, y_all[ii, tt])

    train = build(train_ii, train_tt)
    test = build(np.sort(test_rows), np.full(n_test, p))

    # inner 80/20: seed every task into the fitting side first so the fit
    # is well-posed, then force a primary pair into validation
    n_train = train_ii.shape[0]
    n_val = n_train - int(np.floor(0.8 * n_train))
    by_task = {l: rng.permutation(np.nonzero(train_tt == l)[0])
               for l in range(table.num_tasks)}
    fit_idx = [int(by_task[l][0]) for l in range(table.num_tasks) if by_task[l].size]
    pool = [int(j) for l in range(table.num_tasks) for j in by_task[l][1:]]
    pool = [pool[k] for k in rng.permutation(len(pool))]
    val_idx = [j for j in pool if train_tt[j] == p][:1]
    if not val_idx:
        raise DataError("cannot reserve a primary-task pair for inner validation")
    pool = [j for j in pool if j != val_idx[0]]
    while len(val_idx) < n_val and pool:
        val_idx.append(pool.pop(0))
    fit_idx += pool
    inner_train = build(train_ii[fit_idx], train_tt[fit_idx])
    inner_val = build(train_ii[val_idx], train_tt[val_idx])
    return train, test, inner_train, inner_val
