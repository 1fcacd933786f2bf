"""Multitask Gaussian process regression with Kronecker-structured
composite covariances, for transferring spectra-to-chemistry models
across related biochemical quantities."""

from .errors import (ConfigError, DataError, FitError, KronGPError,
                     NumericalError, ParameterError, ShapeError)
from .kernels import KernelSpec, kernel_diag, kernel_eval, kernel_grad, kernel_matrix
from .taskcorr import TaskCorrMatrix
from .optimize import (MultiRestartResult, OptimizerSettings, OptResult,
                       minimize, multi_restart_minimize)
from .model import (FittedModel, ModelConfig, ObservationSet, assemble_sigma,
                    fit, gp_config, mtgp_comp_config, mtgp_sc_config,
                    mtgp_sn_config, negative_log_marginal_likelihood,
                    nlml_gradient, nlml_value_and_gradient, predict_mean,
                    predict_variance)
from .data import (SpectraTable, TargetStandardizer, WATER_BANDS,
                   load_spectra_table, remove_wavelength_ranges, resample,
                   save_spectra_table, split_trial)
from .cube import (HyperCube, load_cube, ndvi_mask, read_float_map, save_cube,
                   write_float_map, write_gray_map)
from .synthetic import equicorrelation, sample_composite_prior, transfer_table
from .experiment import (ExperimentPlan, ExperimentSummary, MethodSpec,
                         TrialReport, build_config, parse_method, r_squared,
                         rank_assignments, run_experiment, run_trial,
                         select_tasks, trial_seeds)
from .serialize import ModelMetadata, load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "FitError", "KronGPError", "NumericalError",
    "ParameterError", "ShapeError",
    "KernelSpec", "kernel_diag", "kernel_eval", "kernel_grad", "kernel_matrix",
    "TaskCorrMatrix",
    "MultiRestartResult", "OptimizerSettings", "OptResult", "minimize",
    "multi_restart_minimize",
    "FittedModel", "ModelConfig", "ObservationSet", "assemble_sigma", "fit",
    "gp_config", "mtgp_comp_config", "mtgp_sc_config", "mtgp_sn_config",
    "negative_log_marginal_likelihood", "nlml_gradient",
    "nlml_value_and_gradient", "predict_mean", "predict_variance",
    "SpectraTable", "TargetStandardizer", "WATER_BANDS", "load_spectra_table",
    "remove_wavelength_ranges", "resample", "save_spectra_table", "split_trial",
    "HyperCube", "load_cube", "ndvi_mask", "read_float_map", "save_cube",
    "write_float_map", "write_gray_map",
    "equicorrelation", "sample_composite_prior", "transfer_table",
    "ExperimentPlan", "ExperimentSummary", "MethodSpec", "TrialReport",
    "build_config", "parse_method", "r_squared", "rank_assignments",
    "run_experiment", "run_trial", "select_tasks", "trial_seeds",
    "ModelMetadata", "load_model", "save_model",
    "__version__",
]
