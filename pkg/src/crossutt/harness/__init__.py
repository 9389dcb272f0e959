"""Training, evaluation, benchmarking and export around the model."""
from .bench import BenchConfig, RtfReport, RtfRow, format_report, run_fusion_bench
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .evaluate import evaluate, evaluate_loss
from .experiment import (ExperimentConfig, run_context_experiment, score_mode, train_and_evaluate,
                         train_mode)
from .heatmap import clip_heatmaps, cue_localization, export_heatmap, uniformity
from .train import Trainer, check_compatible, load_model

__all__ = ["BenchConfig", "RtfReport", "RtfRow", "format_report", "run_fusion_bench",
           "CheckpointError", "load_checkpoint", "save_checkpoint", "evaluate", "evaluate_loss", "clip_heatmaps",
           "cue_localization", "export_heatmap", "uniformity", "Trainer", "check_compatible",
           "load_model", "ExperimentConfig", "run_context_experiment", "train_and_evaluate", "train_mode", "score_mode"]
