"""Model files: a single self-describing JSON document.

The file stores the architecture (kernel kind and task-matrix rank per
term, noise rank), every free parameter in the documented flattening
order, the full training observations with a SHA-256 checksum, and
optional provenance (task names, wavelength grid, target standardizer,
seed).  Floats are written with shortest round-trip representation, so
save -> load -> predict is bit-identical with the in-memory model.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .data import TargetStandardizer
from .errors import DataError
from .kernels import KernelSpec
from .model import FittedModel, ModelConfig, ObservationSet
from .taskcorr import TaskCorrMatrix

FORMAT_NAME = "krongp-model"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelMetadata:
    """Context carried alongside the fitted model."""

    label: str = ""
    method: str = None
    seed: int = None
    task_names: tuple = None
    wavelengths: np.ndarray = None
    standardizer: TargetStandardizer = None


def _training_checksum(obs: ObservationSet) -> str:
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(obs.X, dtype="<f8").tobytes())
    digest.update(np.ascontiguousarray(obs.input_idx, dtype="<i8").tobytes())
    digest.update(np.ascontiguousarray(obs.task_idx, dtype="<i8").tobytes())
    digest.update(np.ascontiguousarray(obs.y, dtype="<f8").tobytes())
    return digest.hexdigest()


def save_model(model: FittedModel, path, meta: ModelMetadata = ModelMetadata()):
    obs = model.training_obs
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "label": model.config.label,
        "method": meta.method,
        "num_tasks": model.config.num_tasks,
        "terms": [{"kernel": spec.kind, "rank": tc.rank}
                  for tc, spec in model.config.terms],
        "noise_rank": model.config.noise_corr.rank,
        "parameters": [float(v) for v in model.config.pack()],
        "seed": meta.seed,
        "task_names": list(meta.task_names) if meta.task_names else None,
        "wavelengths": ([float(w) for w in meta.wavelengths]
                        if meta.wavelengths is not None else None),
        "standardizer": ({"mean": [float(v) for v in meta.standardizer.mean],
                          "std": [float(v) for v in meta.standardizer.std]}
                         if meta.standardizer is not None else None),
        "training": {
            "num_inputs": obs.X.shape[0],
            "input_dim": obs.X.shape[1],
            "num_tasks": obs.num_tasks,
            "X": [[float(v) for v in row] for row in obs.X],
            "input_idx": [int(v) for v in obs.input_idx],
            "task_idx": [int(v) for v in obs.task_idx],
            "y": [float(v) for v in obs.y],
            "sha256": _training_checksum(obs),
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _config_skeleton(doc) -> ModelConfig:
    M = int(doc["num_tasks"])
    terms = tuple((TaskCorrMatrix.identity(M, int(t["rank"])),
                   KernelSpec.of_kind(t["kernel"]))
                  for t in doc["terms"])
    return ModelConfig(terms=terms,
                       noise_corr=TaskCorrMatrix.zero(M, int(doc["noise_rank"])),
                       task_noise_log=np.zeros(M),
                       label=doc.get("label", ""))


def load_model(path):
    """Read a model file; returns (FittedModel, ModelMetadata).

    The training-data checksum is verified and the covariance
    factorization rebuilt, so predictions match the saved model bit for
    bit.
    """
    with open(path, "r") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not valid JSON ({exc})") from None
    if doc.get("format") != FORMAT_NAME:
        raise DataError(f"{path}: not a {FORMAT_NAME} file")
    if int(doc.get("version", 0)) > FORMAT_VERSION:
        raise DataError(f"{path}: format version {doc['version']} is newer than "
                        f"supported ({FORMAT_VERSION})")
    config = _config_skeleton(doc).with_parameters(np.asarray(doc["parameters"]))
    tr = doc["training"]
    obs = ObservationSet(np.asarray(tr["X"], dtype=float).reshape(
                             int(tr["num_inputs"]), int(tr["input_dim"])),
                         int(tr["num_tasks"]),
                         np.asarray(tr["input_idx"], dtype=int),
                         np.asarray(tr["task_idx"], dtype=int),
                         np.asarray(tr["y"], dtype=float))
    actual = _training_checksum(obs)
    if actual != tr["sha256"]:
        raise DataError(f"{path}: training data checksum mismatch "
                        f"(file says {tr['sha256'][:12]}.., data is {actual[:12]}..)")
    model = FittedModel.from_config(config, obs)
    std = None
    if doc.get("standardizer"):
        std = TargetStandardizer(mean=np.asarray(doc["standardizer"]["mean"]),
                                 std=np.asarray(doc["standardizer"]["std"]))
    meta = ModelMetadata(label=doc.get("label", ""),
                         method=doc.get("method"),
                         seed=doc.get("seed"),
                         task_names=(tuple(doc["task_names"])
                                     if doc.get("task_names") else None),
                         wavelengths=(np.asarray(doc["wavelengths"], dtype=float)
                                      if doc.get("wavelengths") else None),
                         standardizer=std)
    return model, meta
