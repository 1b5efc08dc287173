"""Greedy waypoint expert: approach, grasp, carry, release.

Works through a task's requirements in order. Approach keeps the gripper open
until the target surface is inside grasp reach, closes to attach, carries to
the goal, and releases. A held object sits at the gripper center, so opening
pops it out to contact distance along +x; the carry waypoint is offset by
exactly that amount, which lands the object on the goal center. Navigation
steers around objects it must not disturb (anything already placed or not the
current target). The unreachable flag fires when the target is wedged in a
corner behind another object, the one geometry this arena cannot recover from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .arena import Action, EnvConfig, WorldState
from .tasks import Requirement, TaskSpec


@dataclass(frozen=True)
class ExpertResult:
    action: Action
    done: bool          # all requirements met at call time
    unreachable: bool


def _find_target(state: WorldState, req: Requirement) -> int | None:
    for i, obj in enumerate(state.objects):
        if obj.color == req.color and obj.shape == req.shape:
            return i
    return None


def _norm(dx: float, dy: float) -> tuple[float, float, float]:
    d = math.hypot(dx, dy)
    if d == 0.0:
        return 0.0, 0.0, 0.0
    return dx / d, dy / d, d


def _navigate(state: WorldState, cfg: EnvConfig, tx: float, ty: float,
              avoid: list[int]) -> tuple[float, float]:
    """Step toward (tx, ty), steering around objects listed in `avoid`."""
    dx, dy = tx - state.gripper_x, ty - state.gripper_y
    ux, uy, dist = _norm(dx, dy)
    if dist == 0.0:
        return 0.0, 0.0
    for idx in avoid:
        obj = state.objects[idx]
        ox, oy = obj.x - state.gripper_x, obj.y - state.gripper_y
        nx, ny, od = _norm(ox, oy)
        if od > cfg.contact_distance + 0.06 or od >= dist:
            continue
        if nx * ux + ny * uy <= 0.1:
            continue  # not in our way
        # perpendicular detour, on the side that still makes progress
        px, py = -ny, nx
        if px * ux + py * uy < 0:
            px, py = -px, -py
        ux, uy, _ = _norm(ux + 1.6 * px - 0.6 * nx, uy + 1.6 * py - 0.6 * ny)
    step = min(dist, cfg.max_delta)
    return ux * step, uy * step


def _corner_pinned(state: WorldState, idx: int, cfg: EnvConfig) -> bool:
    obj = state.objects[idx]
    near_wall_x = obj.x < cfg.contact_distance or obj.x > 1.0 - cfg.contact_distance
    near_wall_y = obj.y < cfg.contact_distance or obj.y > 1.0 - cfg.contact_distance
    if not (near_wall_x and near_wall_y):
        return False
    for j, other in enumerate(state.objects):
        if j == idx:
            continue
        if math.hypot(other.x - obj.x, other.y - obj.y) < 2.2 * obj.radius:
            return True
    return False


def scripted_expert(state: WorldState, task: TaskSpec, cfg: EnvConfig) -> ExpertResult:
    pending = [r for r in task.requirements if not task.requirement_met(state, r)]
    if not pending:
        return ExpertResult(Action(0.0, 0.0, -1.0), done=True, unreachable=False)
    req = pending[0]

    idx = _find_target(state, req)
    if idx is None:
        return ExpertResult(Action(0.0, 0.0, -1.0), done=False, unreachable=True)
    obj = state.objects[idx]
    goal = state.goals[req.goal_index]
    others = [i for i in range(len(state.objects)) if i != idx]

    if obj.held:
        # drop point offset so the release pop lands the object on the goal
        tx, ty = goal.x - cfg.contact_distance, goal.y
        if math.hypot(tx - state.gripper_x, ty - state.gripper_y) <= 0.015:
            return ExpertResult(Action(0.0, 0.0, -1.0), done=False, unreachable=False)
        dx, dy = _navigate(state, cfg, tx, ty, avoid=others)
        return ExpertResult(Action(dx, dy, 1.0), done=False, unreachable=False)

    if state.held_index() is not None:
        # holding the wrong object: drop it here
        return ExpertResult(Action(0.0, 0.0, -1.0), done=False, unreachable=False)

    if _corner_pinned(state, idx, cfg):
        return ExpertResult(Action(0.0, 0.0, -1.0), done=False, unreachable=True)

    dx, dy = obj.x - state.gripper_x, obj.y - state.gripper_y
    surface = math.hypot(dx, dy) - obj.radius
    if surface <= cfg.grasp_radius - 0.01:
        ux, uy, _ = _norm(dx, dy)
        creep = cfg.max_delta * 0.2
        return ExpertResult(Action(ux * creep, uy * creep, 1.0),
                            done=False, unreachable=False)
    dx, dy = _navigate(state, cfg, obj.x, obj.y, avoid=others)
    return ExpertResult(Action(dx, dy, -1.0), done=False, unreachable=False)
