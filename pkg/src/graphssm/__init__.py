"""Spectral-spatial state-space classifier for hyperspectral cubes.

Pure-numpy reverse-mode autodiff underneath, with two numba-fused kernels
for the selective scan and the adaptive edge filter.
"""

from .bench import BenchRow, bench_scan, fit_exponent, write_bench_csv
from .checkpoint import CheckpointError, load_arrays, save_arrays
from .data import (DataError, HsiCube, Splits, extract_patch, load_cube,
                   make_splits, normalize_bands, save_cube, synth_cube)
from .encoder import (BlockParams, MaskParams, adaptive_residual,
                      encoder_block, init_block_params, init_mask_params,
                      layer_norm, spectral_mask)
from .flops import OpCounter, count_flops, instrumented_ssm_ops, symbolic_flops
from .gradcheck import GradCheckReport, check_model_gradients, relative_error
from .graph import (HopGraph, adaptive_filter, bfs_distances, build_grid_graph,
                    build_hop_graph, gcn_forward, grid_adjacency,
                    normalize_adjacency)
from .metrics import (EvalReport, average_accuracy, cohen_kappa,
                      confusion_matrix, overall_accuracy, per_class_accuracy)
from .model import Model, ModelConfig, build_model
from .optim import Adam, OptimStateError, Parameter
from .ssm import (SsmParams, combine, discretize_zoh, init_ssm_params,
                  scan_parallel, scan_sequential, selective_project,
                  ssm_forward)
from .tensor import (ShapeError, TapeError, Tensor, conv2d, custom_op, matmul,
                     no_grad, set_debug_checks)
from .train import (TrainConfig, TrainingDiverged, TrainResult,
                    clip_gradients, cross_entropy, evaluate_split, predict,
                    train)

__version__ = "0.1.0"

__all__ = [
    "Adam", "BenchRow", "BlockParams", "CheckpointError", "DataError",
    "EvalReport", "GradCheckReport", "HopGraph", "HsiCube", "MaskParams",
    "Model", "ModelConfig", "OpCounter", "OptimStateError", "Parameter",
    "ShapeError", "Splits", "SsmParams", "TapeError", "Tensor",
    "TrainConfig", "TrainResult", "TrainingDiverged", "adaptive_filter",
    "adaptive_residual", "average_accuracy", "bench_scan", "bfs_distances",
    "build_grid_graph", "build_hop_graph", "build_model",
    "check_model_gradients", "clip_gradients", "cohen_kappa", "combine",
    "confusion_matrix",
    "conv2d", "count_flops", "cross_entropy", "custom_op", "discretize_zoh",
    "encoder_block", "evaluate_split", "extract_patch", "fit_exponent",
    "gcn_forward", "grid_adjacency", "init_block_params", "init_mask_params",
    "init_ssm_params", "instrumented_ssm_ops", "layer_norm", "load_arrays",
    "load_cube", "make_splits", "matmul", "no_grad", "normalize_adjacency",
    "normalize_bands", "overall_accuracy", "per_class_accuracy", "predict",
    "relative_error", "save_arrays", "save_cube", "scan_parallel",
    "scan_sequential", "selective_project", "set_debug_checks",
    "spectral_mask", "ssm_forward", "symbolic_flops", "synth_cube", "train",
    "write_bench_csv",
]
