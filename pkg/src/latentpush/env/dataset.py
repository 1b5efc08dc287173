"""Episode records, exploration clips, expert demos, and the on-disk format.

An episode stores T+1 stacked observations (G, G, 2+C), T+1 end-effector
states, T actions, and a task id (-1 for task-agnostic clips). On disk a
dataset is a directory: a plain-text manifest plus one binary record per
episode. Records are little-endian: each section starts with a u8 rank and
u32 dims, followed by float32 data, in the fixed order observations,
ee_states, actions, task_id.

Exploration clips come from a smoothed random walk that periodically re-aims
at a random point or a random object and toggles the grip at random, which
yields pushes and grasps without any task semantics.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arena import ACTION_DIM, Action, EnvConfig, WorldState, ee_state, render, step
from .expert import scripted_expert
from .tasks import TASK_SUITE, TaskSpec, random_layout, sample_layout

FORMAT_NAME = "latentpush-dataset"
FORMAT_VERSION = 1

_SECTIONS = ("observations", "ee_states", "actions", "task_id")


@dataclass
class Episode:
    observations: np.ndarray  # (T+1, G, G, 2+C) float32
    ee_states: np.ndarray     # (T+1, 3) float32
    actions: np.ndarray       # (T, 3) float32
    task_id: int = -1

    def __post_init__(self):
        if len(self.observations) != len(self.actions) + 1:
            raise ValueError("episode needs T+1 observations for T actions")
        if len(self.ee_states) != len(self.observations):
            raise ValueError("episode needs one ee state per observation")

    @property
    def length(self) -> int:
        return len(self.actions)


@dataclass
class ClipDataset:
    episodes: list[Episode] = field(default_factory=list)
    cfg: EnvConfig = field(default_factory=EnvConfig)
    seed: int = 0

    def __len__(self) -> int:
        return len(self.episodes)


def rollout_episode(state: WorldState, actions: list[Action], cfg: EnvConfig,
                    task_id: int = -1) -> Episode:
    obs = [render(state, cfg).stacked()]
    ees = [ee_state(state).as_array()]
    acts = []
    for a in actions:
        state = step(state, a, cfg)
        obs.append(render(state, cfg).stacked())
        ees.append(ee_state(state).as_array())
        acts.append(a.as_array())
    return Episode(np.stack(obs), np.stack(ees), np.stack(acts), task_id)


def _exploration_actions(state: WorldState, length: int,
                         rng: np.random.Generator, cfg: EnvConfig) -> list[Action]:
    """Smoothed waypoint walk with grasp attempts: head for a random object or
    point, close when an object is in reach, carry for a while, release. This
    keeps clips rich in pushes and carried-object motion."""
    actions = []
    vx = vy = 0.0
    target: tuple[float, float] | None = None
    grip = -1.0
    hold_left = 0
    cur = state.copy()
    for t in range(length):
        if t % 6 == 0 or target is None:
            if cur.objects and rng.random() < 0.7:
                obj = cur.objects[int(rng.integers(0, len(cur.objects)))]
                target = (obj.x, obj.y)
            else:
                target = (float(rng.uniform(0.05, 0.95)), float(rng.uniform(0.05, 0.95)))
        held = cur.held_index()
        if held is None:
            near = any(
                np.hypot(o.x - cur.gripper_x, o.y - cur.gripper_y)
                <= cfg.grasp_reach(o.radius) for o in cur.objects)
            if near and rng.random() < 0.6:
                grip = 1.0
                hold_left = int(rng.integers(3, 9))
            elif rng.random() < 0.05:
                grip = -grip
        else:
            hold_left -= 1
            if hold_left <= 0:
                grip = -1.0
        tx = target[0] - cur.gripper_x
        ty = target[1] - cur.gripper_y
        norm = max(np.hypot(tx, ty), 1e-6)
        ax = tx / norm * cfg.max_delta + rng.normal(0.0, 0.3 * cfg.max_delta)
        ay = ty / norm * cfg.max_delta + rng.normal(0.0, 0.3 * cfg.max_delta)
        vx = 0.7 * vx + 0.3 * ax
        vy = 0.7 * vy + 0.3 * ay
        a = Action(float(np.clip(vx, -cfg.max_delta, cfg.max_delta)),
                   float(np.clip(vy, -cfg.max_delta, cfg.max_delta)),
                   grip)
        actions.append(a)
        cur = step(cur, a, cfg)
    return actions


def generate_clips(num_clips: int, length: int, seed: int,
                   cfg: EnvConfig | None = None,
                   min_window: int | None = None) -> ClipDataset:
    """Task-agnostic interaction clips; per-clip seeding keeps any prefix of a
    larger run identical to a smaller run with the same seed."""
    cfg = cfg or EnvConfig()
    if min_window is not None and length < min_window:
        raise ValueError(f"clip length {length} below required window {min_window}")
    ds = ClipDataset(cfg=cfg, seed=seed)
    for i in range(num_clips):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        state = random_layout(rng, cfg)
        actions = _exploration_actions(state, length, rng, cfg)
        ds.episodes.append(rollout_episode(state, actions, cfg, task_id=-1))
    return ds


def collect_demos(demos_per_task: int, seed: int, cfg: EnvConfig | None = None,
                  tasks: tuple[TaskSpec, ...] = TASK_SUITE,
                  seed_offset: int = 0) -> ClipDataset:
    """Scripted-expert demonstrations; episodes end at success (or horizon)."""
    cfg = cfg or EnvConfig()
    ds = ClipDataset(cfg=cfg, seed=seed)
    for task in tasks:
        kept = 0
        layout_seed = seed_offset
        while kept < demos_per_task:
            state = sample_layout(task, seed * 10_000 + layout_seed, cfg)
            layout_seed += 1
            actions: list[Action] = []
            cur = state.copy()
            success = False
            for _ in range(task.horizon):
                res = scripted_expert(cur, task, cfg)
                if res.done:
                    success = True
                    break
                if res.unreachable:
                    break
                actions.append(res.action)
                cur = step(cur, res.action, cfg)
            if success and actions:
                ds.episodes.append(rollout_episode(state, actions, cfg, task.task_id))
                kept += 1
    return ds


# ---------------------------------------------------------------------------
# disk format
# ---------------------------------------------------------------------------

def _write_section(fh, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<I", d))
    fh.write(arr.tobytes())


def _read_section(fh) -> np.ndarray:
    rank_raw = fh.read(1)
    if len(rank_raw) != 1:
        raise EOFError("truncated episode record")
    rank = struct.unpack("<B", rank_raw)[0]
    dims = []
    for _ in range(rank):
        dims.append(struct.unpack("<I", fh.read(4))[0])
    count = int(np.prod(dims)) if dims else 1
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise EOFError("truncated episode record")
    return np.frombuffer(raw, dtype="<f4").reshape(dims)


def save_dataset(ds: ClipDataset, path: str | Path,
                 extra_manifest: dict[str, str] | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lengths = {ep.length for ep in ds.episodes}
    length = lengths.pop() if len(lengths) == 1 else -1
    lines = [
        f"{FORMAT_NAME} v{FORMAT_VERSION}",
        f"episodes={len(ds.episodes)}",
        f"length={length}",
        f"grid={ds.cfg.grid}",
        f"colors={ds.cfg.num_colors}",
        f"action_dim={ACTION_DIM}",
        f"seed={ds.seed}",
    ]
    for k, v in (extra_manifest or {}).items():
        lines.append(f"{k}={v}")
    (path / "manifest.txt").write_text("\n".join(lines) + "\n")
    for i, ep in enumerate(ds.episodes):
        with open(path / f"ep{i:05d}.bin", "wb") as fh:
            _write_section(fh, ep.observations)
            _write_section(fh, ep.ee_states)
            _write_section(fh, ep.actions)
            _write_section(fh, np.array([ep.task_id], dtype=np.float32))
    return path


def read_manifest(path: str | Path) -> dict[str, str]:
    lines = (Path(path) / "manifest.txt").read_text().strip().split("\n")
    head = lines[0].split(" v")
    if head[0] != FORMAT_NAME:
        raise ValueError(f"not a {FORMAT_NAME} directory: {path}")
    if int(head[1]) != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset version {head[1]}")
    out = {"format": lines[0]}
    for line in lines[1:]:
        if line.strip():
            k, _, v = line.partition("=")
            out[k] = v
    return out


def load_dataset(path: str | Path, max_episodes: int | None = None) -> ClipDataset:
    path = Path(path)
    manifest = read_manifest(path)
    n = int(manifest["episodes"])
    if max_episodes is not None:
        n = min(n, max_episodes)
    cfg = EnvConfig(grid=int(manifest["grid"]), num_colors=int(manifest["colors"]))
    ds = ClipDataset(cfg=cfg, seed=int(manifest["seed"]))
    for i in range(n):
        with open(path / f"ep{i:05d}.bin", "rb") as fh:
            obs = _read_section(fh)
            ees = _read_section(fh)
            acts = _read_section(fh)
            task_id = int(_read_section(fh)[0])
        ds.episodes.append(Episode(obs, ees, acts, task_id))
    return ds


def dataset_hash(path: str | Path) -> str:
    """Content hash over the manifest and every episode record."""
    path = Path(path)
    h = hashlib.sha256()
    h.update((path / "manifest.txt").read_bytes())
    n = int(read_manifest(path)["episodes"])
    for i in range(n):
        h.update((path / f"ep{i:05d}.bin").read_bytes())
    return h.hexdigest()
