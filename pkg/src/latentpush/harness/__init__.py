from .checkpoint import (
    CheckpointError,
    load_checkpoint,
    pack_config_echo,
    save_checkpoint,
    unpack_config_echo,
)
from .config import ExperimentConfig
from .evaluate import EvalReport, evaluate_policy, layout_seeds_for
from .pca import PCAResult, pca_project
from .results import ResultTable
from .studies import (
    ABLATION_VARIANTS,
    run_ablation_matrix,
    run_denoise_step_study,
    run_refinement_study,
    run_scaling_study,
)
from .train import (
    PackedClips,
    build_demo_windows,
    gather_wm_batch,
    heldout_wm_mse,
    pack_observations,
    train_policy,
    train_world_model,
    unpack_observations,
)

__all__ = [
    "CheckpointError", "load_checkpoint", "pack_config_echo",
    "save_checkpoint", "unpack_config_echo",
    "ExperimentConfig", "EvalReport", "evaluate_policy", "layout_seeds_for",
    "PCAResult", "pca_project", "ResultTable",
    "ABLATION_VARIANTS", "run_ablation_matrix", "run_denoise_step_study",
    "run_refinement_study", "run_scaling_study",
    "PackedClips", "build_demo_windows", "gather_wm_batch", "heldout_wm_mse",
    "pack_observations", "train_policy", "train_world_model",
    "unpack_observations",
]
