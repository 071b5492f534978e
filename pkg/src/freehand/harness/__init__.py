from .ablation import AblationArm, AblationReport, AblationSpec, reduce_training_set, run_ablation
from .experiment import ExperimentConfig, run_training
from .report import emit_report, load_table
from .stats import welch_ttest
from .sweep import SweepResult, run_sweep, select_main_task

__all__ = [
    "AblationArm",
    "AblationReport",
    "AblationSpec",
    "ExperimentConfig",
    "SweepResult",
    "emit_report",
    "load_table",
    "reduce_training_set",
    "run_ablation",
    "run_sweep",
    "run_training",
    "select_main_task",
    "welch_ttest",
]
