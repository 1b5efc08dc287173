"""Training loops for the world model and the policy.

Observations are held packed as uint8 (raster values are exactly {0, 0.5, 1},
stored doubled) and encoded to latents per minibatch; a 2000-clip run then
fits comfortably in memory. Policy training precomputes teacher-forced
imagination once per demo window with the frozen world model (ground-truth
future actions as the conditioning source), pools every latent to the
policy's token resolution, and trains on the cached windows.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from ..encoders import EncoderParams
from ..env.dataset import ClipDataset
from ..nn.optim import Adam
from ..nn.tensor import Tape
from ..policy import DemoWindows, Policy, PolicyConfig, PolicyInput, build_imagination
from ..world_model import (
    WMBatch,
    WMConfig,
    WorldModel,
    copy_baseline_mse,
    pool_token_grid,
    window_starts,
)


def pack_observations(obs: np.ndarray) -> np.ndarray:
    """float {0, 0.5, 1} -> uint8 {0, 1, 2}, lossless for rendered rasters."""
    doubled = obs * 2.0
    packed = doubled.astype(np.uint8)
    if not np.array_equal(packed.astype(np.float32), doubled):
        raise ValueError("observations are not exactly {0, 0.5, 1}-valued")
    return packed


def unpack_observations(packed: np.ndarray) -> np.ndarray:
    return packed.astype(np.float32) * 0.5


@dataclass
class PackedClips:
    """Equal-length episodes stacked for fast window gathers."""

    obs: np.ndarray       # (N, T+1, G, G, ch) uint8
    ee: np.ndarray        # (N, T+1, 3) float32
    actions: np.ndarray   # (N, T, act) float32

    @property
    def num_episodes(self) -> int:
        return self.obs.shape[0]

    @property
    def steps(self) -> int:
        return self.actions.shape[1]

    @staticmethod
    def from_dataset(ds: ClipDataset) -> "PackedClips":
        lengths = {ep.length for ep in ds.episodes}
        if len(lengths) != 1:
            raise ValueError("clip dataset must be equal-length")
        return PackedClips(
            obs=np.stack([pack_observations(ep.observations) for ep in ds.episodes]),
            ee=np.stack([ep.ee_states for ep in ds.episodes]),
            actions=np.stack([ep.actions for ep in ds.episodes]),
        )


def gather_wm_batch(clips: PackedClips, enc, cfg: WMConfig,
                    ep_idx: np.ndarray, t_idx: np.ndarray) -> WMBatch:
    """Encode the (episode, anchor) windows into a training batch."""
    l, k = cfg.history, cfg.horizon
    b = len(ep_idx)
    frame_idx = t_idx[:, None] + np.arange(-l + 1, k + 1)[None, :]  # (B, l+k)
    obs = unpack_observations(clips.obs[ep_idx[:, None], frame_idx])
    z = enc.encode(obs)
    acts = clips.actions[ep_idx[:, None], t_idx[:, None] + np.arange(0, k + 1)[None, :]]
    return WMBatch(
        hist_geom=z.geom[:, :l], hist_sem=z.sem[:, :l],
        future_geom=z.geom[:, l:], future_sem=z.sem[:, l:],
        actions=acts,
    )


@dataclass
class TrainResult:
    losses: list[float]
    wall_time: float


def calibrate_residual_scales(clips: PackedClips, enc, history: int,
                              horizon: int, num_windows: int = 64,
                              seed: int = 0) -> tuple[float, float]:
    """Per-stream 1/std of the frame residuals over sampled windows, so the
    diffused variable has roughly unit scale. Deterministic given the seed."""
    starts = list(window_starts(clips.steps, history, horizon))
    rng = np.random.default_rng(seed)
    ep_idx = rng.integers(0, clips.num_episodes, size=num_windows)
    t_idx = rng.choice(starts, size=num_windows)
    frame_idx = t_idx[:, None] + np.arange(-history + 1, horizon + 1)[None, :]
    obs = unpack_observations(clips.obs[ep_idx[:, None], frame_idx])
    z = enc.encode(obs)

    def scale(stream):
        hist, fut = stream[:, :history], stream[:, history:]
        resid = fut - hist[:, -1:]
        std = float(np.sqrt(np.mean(resid ** 2)))
        return float(np.clip(1.0 / max(std, 1e-4), 1.0, 120.0))

    s_geom = scale(z.geom)
    s_sem = scale(z.sem) if z.sem.shape[-1] else 1.0
    return round(s_geom, 2), round(s_sem, 2)


def cosine_lr(base: float, step: int, total: int, floor: float = 0.1) -> float:
    frac = 0.5 * (1.0 + math.cos(math.pi * step / max(total, 1)))
    return base * (floor + (1.0 - floor) * frac)


def train_world_model(model: WorldModel, clips: PackedClips, enc,
                      steps: int, batch: int, lr: float, seed: int,
                      log_every: int = 0, decay: bool = True) -> TrainResult:
    cfg = model.cfg
    starts = list(window_starts(clips.steps, cfg.history, cfg.horizon))
    if not starts:
        raise ValueError(f"clips too short for history {cfg.history} + horizon {cfg.horizon}")
    rng = np.random.default_rng(seed)
    opt = Adam(model.parameters(), lr=lr)
    losses = []
    t0 = time.time()
    for step in range(steps):
        if decay:
            opt.lr = cosine_lr(lr, step, steps)
        ep_idx = rng.integers(0, clips.num_episodes, size=batch)
        t_idx = rng.choice(starts, size=batch)
        wb = gather_wm_batch(clips, enc, cfg, ep_idx, t_idx)
        opt.zero_grad()
        with Tape() as tape:
            loss = model.loss(wb, rng)
        tape.backward(loss)
        opt.step()
        losses.append(loss.item())
        if log_every and (step + 1) % log_every == 0:
            avg = float(np.mean(losses[-log_every:]))
            print(f"  wm step {step + 1}/{steps} loss {avg:.4f}", flush=True)
    return TrainResult(losses=losses, wall_time=time.time() - t0)


def heldout_wm_mse(model: WorldModel, clips: PackedClips, enc,
                   seed: int, num_windows: int = 96,
                   sampling_steps: int | None = None,
                   batch: int = 32) -> dict[str, float]:
    """Imagination MSE on held-out windows, with the copy-last-frame baseline
    computed on exactly the same windows."""
    cfg = model.cfg
    starts = list(window_starts(clips.steps, cfg.history, cfg.horizon))
    rng = np.random.default_rng(seed)
    ep_idx = rng.integers(0, clips.num_episodes, size=num_windows)
    t_idx = rng.choice(starts, size=num_windows)
    sums = {"geom": 0.0, "sem": 0.0, "copy": 0.0, "copy_geom": 0.0}
    count = 0
    for lo in range(0, num_windows, batch):
        sl = slice(lo, min(lo + batch, num_windows))
        wb = gather_wm_batch(clips, enc, cfg, ep_idx[sl], t_idx[sl])
        out = model.imagine(wb.hist_geom,
                            wb.hist_sem if cfg.use_semantic else None,
                            wb.actions, rng, sampling_steps=sampling_steps)
        n = sl.stop - sl.start
        sums["geom"] += float(np.mean((out.geom - wb.future_geom) ** 2)) * n
        if cfg.use_semantic:
            sums["sem"] += float(np.mean((out.sem - wb.future_sem) ** 2)) * n
        sums["copy"] += copy_baseline_mse(
            wb.hist_geom, wb.hist_sem if cfg.use_semantic else None,
            wb.future_geom, wb.future_sem if cfg.use_semantic else None) * n
        sums["copy_geom"] += copy_baseline_mse(
            wb.hist_geom, None, wb.future_geom, None) * n
        count += n
    geom = sums["geom"] / count
    sem = sums["sem"] / count if cfg.use_semantic else float("nan")
    combined = 0.5 * (geom + sem) if cfg.use_semantic else geom
    return {"model_mse": combined, "geom_mse": geom, "sem_mse": sem,
            "copy_mse": sums["copy"] / count,
            "copy_geom_mse": sums["copy_geom"] / count}


# ---------------------------------------------------------------------------
# policy training
# ---------------------------------------------------------------------------

def _padded_window(ep_obs, ep_ee, ep_actions, t, l, k):
    """History padded by repeating frame 0; future actions padded with zeros
    past the episode end (the expert is done, the world is static)."""
    T = ep_actions.shape[0]
    hist_idx = np.clip(np.arange(t - l + 1, t + 1), 0, T)
    act_idx = np.arange(t, t + k + 1)
    acts = np.zeros((k + 1, ep_actions.shape[1]), dtype=np.float32)
    valid = act_idx < T
    acts[valid] = ep_actions[act_idx[valid]]
    return hist_idx, acts


def build_demo_windows(demos: ClipDataset, enc, wm: WorldModel | None,
                       pcfg: PolicyConfig, seed: int,
                       imag_batch: int = 48) -> DemoWindows:
    """Cut every demo into anchored windows and attach imagination tokens.

    Mode "imagined" teacher-forces the frozen world model with ground-truth
    future actions. All latents are pooled to the policy's resolution before
    caching. Pass wm=None for modes that never touch the world model.
    """
    l, k = pcfg.history, pcfg.horizon
    rng = np.random.default_rng(seed)
    hist_g, hist_s, ees, task_ids, actions = [], [], [], [], []
    full_hist_g, full_hist_s = [], []

    for ep in demos.episodes:
        z = enc.encode(ep.observations)  # (T+1, tokens, d)
        for t in range(ep.length):
            hist_idx, acts = _padded_window(ep.observations, ep.ee_states,
                                            ep.actions, t, l, k)
            full_hist_g.append(z.geom[hist_idx])
            full_hist_s.append(z.sem[hist_idx])
            hist_g.append(pool_token_grid(z.geom[hist_idx], pcfg.latent_pool))
            hist_s.append(pool_token_grid(z.sem[hist_idx], pcfg.latent_pool))
            ees.append(ep.ee_states[hist_idx])
            task_ids.append(ep.task_id)
            actions.append(acts)

    n = len(actions)
    inputs = PolicyInput(
        hist_geom=np.stack(hist_g), hist_sem=np.stack(hist_s),
        ee=np.stack(ees), task_ids=np.asarray(task_ids),
    )
    actions_arr = np.stack(actions)

    if pcfg.has_imagination:
        fh_g = np.stack(full_hist_g)
        fh_s = np.stack(full_hist_s)
        imag_g = np.empty((n, k, pcfg.pooled_tokens, pcfg.d_geom), dtype=np.float32)
        imag_s = np.empty((n, k, pcfg.pooled_tokens, pcfg.d_sem), dtype=np.float32)
        for lo in range(0, n, imag_batch):
            sl = slice(lo, min(lo + imag_batch, n))
            g, s, _ = build_imagination(
                pcfg.imagination, wm, fh_g[sl],
                fh_s[sl] if pcfg.use_semantic else None,
                actions_arr[sl], rng, k,
                sampling_steps=pcfg.wm_sampling_steps)
            imag_g[sl] = pool_token_grid(g, pcfg.latent_pool)
            if pcfg.use_semantic:
                imag_s[sl] = pool_token_grid(s, pcfg.latent_pool)
        inputs.imag_geom = imag_g
        inputs.imag_sem = imag_s if pcfg.use_semantic else None

    return DemoWindows(inputs=inputs, actions=actions_arr)


def _slice_windows(w: DemoWindows, idx: np.ndarray) -> DemoWindows:
    inp = w.inputs
    return DemoWindows(
        inputs=PolicyInput(
            hist_geom=inp.hist_geom[idx], hist_sem=inp.hist_sem[idx],
            ee=inp.ee[idx], task_ids=inp.task_ids[idx],
            imag_geom=None if inp.imag_geom is None else inp.imag_geom[idx],
            imag_sem=None if inp.imag_sem is None else inp.imag_sem[idx],
        ),
        actions=w.actions[idx],
    )


def train_policy(policy: Policy, windows: DemoWindows, steps: int, batch: int,
                 lr: float, seed: int, log_every: int = 0) -> TrainResult:
    rng = np.random.default_rng(seed)
    opt = Adam(policy.parameters(), lr=lr)
    n = windows.actions.shape[0]
    losses = []
    t0 = time.time()
    for step in range(steps):
        idx = rng.integers(0, n, size=batch)
        wb = _slice_windows(windows, idx)
        opt.zero_grad()
        with Tape() as tape:
            loss = policy.loss(wb, rng)
        tape.backward(loss)
        opt.step()
        losses.append(loss.item())
        if log_every and (step + 1) % log_every == 0:
            avg = float(np.mean(losses[-log_every:]))
            print(f"  policy step {step + 1}/{steps} loss {avg:.4f}", flush=True)
    return TrainResult(losses=losses, wall_time=time.time() - t0)
