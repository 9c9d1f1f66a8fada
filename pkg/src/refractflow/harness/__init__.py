"""Dataset generation, evaluation metrics and the end-to-end pipeline."""

from .dataset import GenerationError, GeneratorConfig, gen_dataset, sample_scene, write_reference, write_sample
from .metrics import NormalMetrics, angular_error_stats, angular_errors_deg, depth_rmse, flow_rmse
from .pipeline import CSV_COLUMNS, STAGES, PipelineParams, PipelineResult, StageError, evaluate, run_pipeline

__all__ = [
    "CSV_COLUMNS", "GenerationError", "GeneratorConfig", "NormalMetrics", "PipelineParams",
    "PipelineResult", "STAGES", "StageError", "angular_error_stats", "angular_errors_deg",
    "depth_rmse", "evaluate", "flow_rmse", "gen_dataset", "run_pipeline", "sample_scene",
    "write_reference", "write_sample",
]
