"""Task suite: move a colored shape into a goal region.

Six tasks. The first four are single placements; the last two require two
placements in sequence, so they stress longer horizons. Success is a pure
predicate over WorldState: every required object sits inside its goal region
and is not held. Layouts are sampled per (task, seed) with separation
constraints so the start state is never already solved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .arena import (
    SHAPE_DISK,
    SHAPE_SQUARE,
    SHAPE_TRIANGLE,
    EnvConfig,
    Goal,
    ObjectState,
    WorldState,
)


@dataclass(frozen=True)
class Requirement:
    color: int
    shape: int
    goal_index: int


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    name: str
    requirements: tuple[Requirement, ...]
    horizon: int

    def requirement_met(self, state: WorldState, req: Requirement) -> bool:
        goal = state.goals[req.goal_index]
        for obj in state.objects:
            if obj.color != req.color or obj.shape != req.shape or obj.held:
                continue
            if math.hypot(obj.x - goal.x, obj.y - goal.y) <= goal.radius:
                return True
        return False

    def success(self, state: WorldState) -> bool:
        return all(self.requirement_met(state, r) for r in self.requirements)


TASK_SUITE: tuple[TaskSpec, ...] = (
    TaskSpec(0, "red-disk-to-goal0", (Requirement(0, SHAPE_DISK, 0),), 60),
    TaskSpec(1, "green-square-to-goal1", (Requirement(1, SHAPE_SQUARE, 1),), 60),
    TaskSpec(2, "blue-triangle-to-goal0", (Requirement(2, SHAPE_TRIANGLE, 0),), 60),
    TaskSpec(3, "yellow-disk-to-goal1", (Requirement(3, SHAPE_DISK, 1),), 60),
    TaskSpec(4, "red-disk-then-green-square",
             (Requirement(0, SHAPE_DISK, 0), Requirement(1, SHAPE_SQUARE, 1)), 110),
    TaskSpec(5, "blue-square-then-yellow-triangle",
             (Requirement(2, SHAPE_SQUARE, 1), Requirement(3, SHAPE_TRIANGLE, 0)), 110),
)

# distractors fill every layout to this object count
LAYOUT_OBJECTS = 3

_MIN_SEPARATION = 0.16
_GOAL_CLEARANCE = 0.14


def _sample_point(rng: np.random.Generator, lo: float, hi: float) -> tuple[float, float]:
    return float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi))


def _sample_clear_point(rng: np.random.Generator, taken: list[tuple[float, float, float]],
                        margin: float = 0.08) -> tuple[float, float]:
    for _ in range(200):
        x, y = _sample_point(rng, margin, 1.0 - margin)
        if all(math.hypot(x - tx, y - ty) >= td for tx, ty, td in taken):
            return x, y
    raise RuntimeError("layout sampling failed; constraints too tight")


def goal_positions(task_id: int) -> tuple[tuple[float, float], tuple[float, float]]:
    """Goals are a fixed function of the task id (they are not rendered, so the
    policy locates them through the task embedding). They sit in opposite
    half-planes so two-stage tasks require a real trip."""
    rng = np.random.default_rng(777 + task_id)
    g0 = (float(rng.uniform(0.18, 0.32)), float(rng.uniform(0.2, 0.8)))
    g1 = (float(rng.uniform(0.68, 0.82)), float(rng.uniform(0.2, 0.8)))
    return g0, g1


def sample_layout(task: TaskSpec, seed: int, cfg: EnvConfig) -> WorldState:
    """Deterministic initial state for (task, seed); objects and gripper move
    with the seed, goal regions stay put per task."""
    rng = np.random.default_rng((task.task_id + 1) * 1_000_003 + seed)

    (g0x, g0y), (g1x, g1y) = goal_positions(task.task_id)
    goals = [
        Goal(g0x, g0y, cfg.goal_radius, target_color=task.requirements[0].color),
        Goal(g1x, g1y, cfg.goal_radius,
             target_color=task.requirements[-1].color),
    ]

    taken: list[tuple[float, float, float]] = [
        (g0x, g0y, _GOAL_CLEARANCE), (g1x, g1y, _GOAL_CLEARANCE)]

    objects: list[ObjectState] = []
    for req in task.requirements:
        x, y = _sample_clear_point(rng, taken)
        objects.append(ObjectState(x, y, cfg.object_radius, req.shape, req.color))
        taken.append((x, y, _MIN_SEPARATION))

    # distractors never collide with a requirement signature
    signatures = {(r.color, r.shape) for r in task.requirements}
    while len(objects) < LAYOUT_OBJECTS:
        for _ in range(50):
            color = int(rng.integers(0, cfg.num_colors))
            shape = int(rng.integers(0, 3))
            if (color, shape) not in signatures:
                break
        x, y = _sample_clear_point(rng, taken)
        objects.append(ObjectState(x, y, cfg.object_radius, shape, color))
        taken.append((x, y, _MIN_SEPARATION))

    gx, gy = _sample_clear_point(rng, taken, margin=0.05)
    return WorldState(gripper_x=gx, gripper_y=gy, grip_closed=False,
                      objects=objects, goals=goals)


def random_layout(rng: np.random.Generator, cfg: EnvConfig,
                  num_objects: int = LAYOUT_OBJECTS) -> WorldState:
    """Task-agnostic arena for exploration clips: random objects and goals."""
    taken: list[tuple[float, float, float]] = []
    goals = []
    for _ in range(2):
        x, y = _sample_clear_point(rng, taken)
        goals.append(Goal(x, y, cfg.goal_radius, int(rng.integers(0, cfg.num_colors))))
        taken.append((x, y, _GOAL_CLEARANCE))
    objects = []
    for _ in range(num_objects):
        x, y = _sample_clear_point(rng, taken)
        objects.append(ObjectState(x, y, cfg.object_radius,
                                   int(rng.integers(0, 3)),
                                   int(rng.integers(0, cfg.num_colors))))
        taken.append((x, y, _MIN_SEPARATION))
    gx, gy = _sample_clear_point(rng, taken, margin=0.05)
    return WorldState(gripper_x=gx, gripper_y=gy, grip_closed=False,
                      objects=objects, goals=goals)
