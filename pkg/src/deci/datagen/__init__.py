"""Benchmark data: random ANMs, the CSuite SEMs, ground truth and masking."""

from .csuite import CSUITE_NAMES, Roles, conditional_effect, csuite_sem, generate_csuite
from .hmc import HmcConfig, HmcResult, hmc_conditional_samples
from .masking import apply_mcar_mask, mcar_mask
from .noise import Gaussian, MlpTransformed, NoiseFamily, ShiftedExp, SinhArcsinh, SoftplusNormal, Uniform
from .store import StoredDataset, read_dataset_dir, write_dataset_dir
from .synthetic import (
    GroundTruthPackage,
    SyntheticSpec,
    generate_synthetic,
    sample_er_graph,
    sample_sf_graph,
    simulate_anm,
)
from .truth import Node, TrueSem

__all__ = [
    "CSUITE_NAMES",
    "Gaussian",
    "GroundTruthPackage",
    "HmcConfig",
    "HmcResult",
    "MlpTransformed",
    "Node",
    "NoiseFamily",
    "Roles",
    "ShiftedExp",
    "SinhArcsinh",
    "SoftplusNormal",
    "StoredDataset",
    "SyntheticSpec",
    "TrueSem",
    "Uniform",
    "apply_mcar_mask",
    "conditional_effect",
    "csuite_sem",
    "generate_csuite",
    "generate_synthetic",
    "hmc_conditional_samples",
    "mcar_mask",
    "read_dataset_dir",
    "sample_er_graph",
    "sample_sf_graph",
    "simulate_anm",
    "write_dataset_dir",
]
