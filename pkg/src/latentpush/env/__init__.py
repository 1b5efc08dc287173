from .arena import (
    ACTION_DIM,
    Action,
    EEState,
    EnvConfig,
    Goal,
    Observation,
    ObjectState,
    WorldState,
    ee_state,
    render,
    step,
)
from .tasks import TASK_SUITE, Requirement, TaskSpec, random_layout, sample_layout
from .expert import ExpertResult, scripted_expert
from .dataset import (
    ClipDataset,
    Episode,
    collect_demos,
    dataset_hash,
    generate_clips,
    load_dataset,
    read_manifest,
    rollout_episode,
    save_dataset,
)

__all__ = [
    "ACTION_DIM", "Action", "EEState", "EnvConfig", "Goal", "Observation",
    "ObjectState", "WorldState", "ee_state", "render", "step",
    "TASK_SUITE", "Requirement", "TaskSpec", "random_layout", "sample_layout",
    "ExpertResult", "scripted_expert",
    "ClipDataset", "Episode", "collect_demos", "dataset_hash",
    "generate_clips", "load_dataset", "read_manifest", "rollout_episode",
    "save_dataset",
]
