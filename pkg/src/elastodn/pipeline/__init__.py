"""Orchestration: configuration, chain planning, reconstruction and reports."""

from .config import ExperimentConfig, Inputs, load_config, load_inputs, sigma_patch
from .phantom import PRESETS, write_phantom
from .plan import ChainPlan, Plan, Undetermined, intersect_partitions, plan_chains
from .report import emit_report, load_report
from .run import BlockResult, ReconstructionReport, StepResult, run_reconstruction, simulate

__all__ = [
    "PRESETS",
    "BlockResult",
    "ChainPlan",
    "ExperimentConfig",
    "Inputs",
    "Plan",
    "ReconstructionReport",
    "StepResult",
    "Undetermined",
    "emit_report",
    "intersect_partitions",
    "load_config",
    "load_inputs",
    "load_report",
    "plan_chains",
    "run_reconstruction",
    "sigma_patch",
    "simulate",
    "write_phantom",
]
