"""Deterministic planar arena: one disk gripper, shaped colored objects, goal regions.

Coordinates live in [0, 1]^2. Rasters are (G, G, channels) with row index i
mapping to y = (i + 0.5) / G and column j to x = (j + 0.5) / G. All motion is
kinematic: the gripper translates by a clipped displacement, a held object
rides along co-located with it, and non-held overlapping objects are projected
out of the gripper disk along the contact normal. No momentum, so replaying
the same (state, action) always lands on bit-identical successors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

SHAPE_DISK = 0
SHAPE_SQUARE = 1
SHAPE_TRIANGLE = 2
SHAPE_NAMES = ("disk", "square", "triangle")

COLOR_NAMES = ("red", "green", "blue", "yellow")

GRIP_OPEN_VALUE = 0.5   # gripper channel intensity when open
GRIP_CLOSED_VALUE = 1.0


@dataclass(frozen=True)
class EnvConfig:
    grid: int = 32
    num_colors: int = 4
    max_delta: float = 0.05
    grasp_radius: float = 0.06   # reach from gripper center to object surface
    gripper_radius: float = 0.012
    object_radius: float = 0.05
    goal_radius: float = 0.09

    @property
    def contact_distance(self) -> float:
        return self.gripper_radius + self.object_radius

    def grasp_reach(self, obj_radius: float) -> float:
        return self.grasp_radius + obj_radius


@dataclass
class ObjectState:
    x: float
    y: float
    radius: float
    shape: int
    color: int
    held: bool = False


@dataclass(frozen=True)
class Goal:
    x: float
    y: float
    radius: float
    target_color: int


@dataclass
class WorldState:
    gripper_x: float
    gripper_y: float
    grip_closed: bool
    objects: list[ObjectState] = field(default_factory=list)
    goals: list[Goal] = field(default_factory=list)

    def copy(self) -> "WorldState":
        return WorldState(self.gripper_x, self.gripper_y, self.grip_closed,
                          [replace(o) for o in self.objects], list(self.goals))

    def held_index(self) -> int | None:
        for i, o in enumerate(self.objects):
            if o.held:
                return i
        return None


@dataclass(frozen=True)
class Action:
    dx: float
    dy: float
    grip: float  # > 0 closes, <= 0 opens

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.grip], dtype=np.float32)

    @staticmethod
    def from_array(a) -> "Action":
        return Action(float(a[0]), float(a[1]), float(a[2]))


ACTION_DIM = 3


@dataclass(frozen=True)
class Observation:
    occupancy: np.ndarray  # (G, G, 2): object silhouettes, gripper disk
    classes: np.ndarray    # (G, G, C): one-hot color of the owning object

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.occupancy, self.classes], axis=-1)


@dataclass(frozen=True)
class EEState:
    x: float
    y: float
    grip: float  # 1.0 closed, 0.0 open

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.grip], dtype=np.float32)


def ee_state(state: WorldState) -> EEState:
    return EEState(state.gripper_x, state.gripper_y, 1.0 if state.grip_closed else 0.0)


def _clip_finite(v: float, lo: float, hi: float) -> float:
    if math.isnan(v):
        return 0.0
    return min(max(v, lo), hi)


def step(state: WorldState, action: Action, cfg: EnvConfig) -> WorldState:
    """Advance one tick. Invalid action values are clipped, never rejected."""
    out = state.copy()
    d = cfg.max_delta
    dx = _clip_finite(action.dx, -d, d)
    dy = _clip_finite(action.dy, -d, d)
    out.gripper_x = min(max(out.gripper_x + dx, 0.0), 1.0)
    out.gripper_y = min(max(out.gripper_y + dy, 0.0), 1.0)

    grip = action.grip if not math.isnan(action.grip) else -1.0
    out.grip_closed = grip > 0.0

    held = out.held_index()
    if not out.grip_closed and held is not None:
        out.objects[held].held = False
        held = None

    if out.grip_closed and held is None:
        # attach the nearest object whose surface lies within grasp reach
        best, best_d = None, math.inf
        for i, obj in enumerate(out.objects):
            dist = math.hypot(obj.x - out.gripper_x, obj.y - out.gripper_y)
            if dist <= cfg.grasp_reach(obj.radius) and dist < best_d:
                best, best_d = i, dist
        if best is not None:
            out.objects[best].held = True
            held = best

    if held is not None:
        out.objects[held].x = out.gripper_x
        out.objects[held].y = out.gripper_y

    # positional penetration resolution: project non-held objects out of the
    # gripper disk along the contact normal; an exactly-centered object is
    # pushed along +x by convention
    for i, obj in enumerate(out.objects):
        if i == held:
            continue
        contact = cfg.gripper_radius + obj.radius
        ox = obj.x - out.gripper_x
        oy = obj.y - out.gripper_y
        dist = math.hypot(ox, oy)
        if dist < contact:
            if dist < 1e-9:
                nx, ny = 1.0, 0.0
            else:
                nx, ny = ox / dist, oy / dist
            obj.x = out.gripper_x + nx * contact
            obj.y = out.gripper_y + ny * contact
        obj.x = min(max(obj.x, 0.0), 1.0)
        obj.y = min(max(obj.y, 0.0), 1.0)

    return out


def _shape_mask(shape: int, cx: float, cy: float, r: float,
                px: np.ndarray, py: np.ndarray) -> np.ndarray:
    if shape == SHAPE_DISK:
        return (px - cx) ** 2 + (py - cy) ** 2 <= r * r
    if shape == SHAPE_SQUARE:
        return np.maximum(np.abs(px - cx), np.abs(py - cy)) <= r
    if shape == SHAPE_TRIANGLE:
        # apex up: vertices (cx, cy+r), (cx +- r, cy - r)
        inside_y = (py >= cy - r) & (py <= cy + r)
        half_width = (cy + r - py) * 0.5
        return inside_y & (np.abs(px - cx) <= half_width)
    raise ValueError(f"unknown shape class {shape}")


def _cell_centers(g: int) -> tuple[np.ndarray, np.ndarray]:
    coords = (np.arange(g, dtype=np.float64) + 0.5) / g
    py, px = np.meshgrid(coords, coords, indexing="ij")
    return px, py


def object_mask(obj: ObjectState, cfg: EnvConfig) -> np.ndarray:
    """(G, G) silhouette of a single object, same convention as render()."""
    px, py = _cell_centers(cfg.grid)
    return _shape_mask(obj.shape, obj.x, obj.y, obj.radius, px, py)


def render(state: WorldState, cfg: EnvConfig) -> Observation:
    """Rasterize. Contested class cells go to the earlier-listed object."""
    g = cfg.grid
    px, py = _cell_centers(g)
    occupancy = np.zeros((g, g, 2), dtype=np.float32)
    classes = np.zeros((g, g, cfg.num_colors), dtype=np.float32)
    claimed = np.zeros((g, g), dtype=bool)

    for obj in state.objects:
        mask = _shape_mask(obj.shape, obj.x, obj.y, obj.radius, px, py)
        occupancy[:, :, 0][mask] = 1.0
        newly = mask & ~claimed
        classes[:, :, obj.color][newly] = 1.0
        claimed |= mask

    grip_mask = (px - state.gripper_x) ** 2 + (py - state.gripper_y) ** 2 \
        <= cfg.gripper_radius ** 2
    # the gripper always owns at least its center cell so it never vanishes
    if not grip_mask.any():
        j = min(int(state.gripper_x * g), g - 1)
        i = min(int(state.gripper_y * g), g - 1)
        grip_mask[i, j] = True
    occupancy[:, :, 1][grip_mask] = GRIP_CLOSED_VALUE if state.grip_closed else GRIP_OPEN_VALUE

    return Observation(occupancy=occupancy, classes=classes)
