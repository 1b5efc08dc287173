"""Experiment studies: data scaling, the ablation matrix, refinement sweeps,
and denoising-step sensitivity.

Every study returns a ResultTable whose rows are traceable to the config
hash; training inside a study never mutates its input dataset, and smaller
scaling sizes reuse leading prefixes of the largest dataset (per-clip seeding
makes a prefix bit-identical to a fresh generation of that size).
"""

from __future__ import annotations

import math
import time

import numpy as np

from ..encoders import PixelCodec
from ..env.dataset import ClipDataset
from ..env.tasks import TASK_SUITE
from ..policy import Policy, act
from ..world_model import WMConfig, WorldModel
from .evaluate import evaluate_policy
from .pca import pca_project
from .results import ResultTable
from .train import (PackedClips, calibrate_residual_scales, heldout_wm_mse,
                    train_world_model)

ABLATION_VARIANTS = (
    "full",
    "no_semantic_stream",
    "concat_interaction",
    "noisy_interaction",
    "no_diffusion",
    "pixel_diffusion",
    "copy_model",
    "no_imagination",
)


def _subset(clips: PackedClips, count: int) -> PackedClips:
    if count > clips.num_episodes:
        raise ValueError(f"asked for {count} clips, dataset has {clips.num_episodes}")
    return PackedClips(obs=clips.obs[:count], ee=clips.ee[:count],
                       actions=clips.actions[:count])


def train_and_score(wm_cfg: WMConfig, clips: PackedClips, heldout: PackedClips,
                    enc, steps: int, batch: int, lr: float, seed: int,
                    eval_windows: int = 96) -> dict[str, float]:
    model = WorldModel(wm_cfg, seed=seed)
    train_world_model(model, clips, enc, steps=steps, batch=batch, lr=lr,
                      seed=seed)
    scores = heldout_wm_mse(model, heldout, enc, seed=seed,
                            num_windows=eval_windows)
    return scores


def run_scaling_study(clips: PackedClips, heldout: PackedClips, enc,
                      wm_cfg: WMConfig, sizes: tuple[int, ...],
                      seeds: tuple[int, ...], steps: int, batch: int,
                      lr: float, noise_band: float = 0.05,
                      log=print) -> ResultTable:
    """Held-out MSE per training-set size, plus a monotonicity report row:
    the fraction of adjacent size pairs whose MSE is non-increasing within
    the noise band."""
    table = ResultTable()
    means = []
    for size in sizes:
        sub = _subset(clips, size)
        per_seed = []
        for seed in seeds:
            t0 = time.time()
            scores = train_and_score(wm_cfg, sub, heldout, enc, steps, batch,
                                     lr, seed)
            per_seed.append(scores["model_mse"])
            log(f"scaling clips={size} seed={seed} mse={scores['model_mse']:.5f} "
                f"copy={scores['copy_mse']:.5f} ({time.time() - t0:.0f}s)")
            table.add(f"clips{size}", f"heldout_mse_seed{seed}",
                      scores["model_mse"])
            table.add(f"clips{size}", f"copy_mse_seed{seed}", scores["copy_mse"])
        mean = float(np.mean(per_seed))
        stderr = float(np.std(per_seed, ddof=1) / math.sqrt(len(per_seed))) \
            if len(per_seed) > 1 else 0.0
        table.add(f"clips{size}", "heldout_mse", mean, stderr, len(seeds))
        means.append(mean)
    ok_pairs = sum(1 for a, b in zip(means, means[1:])
                   if b <= a * (1.0 + noise_band))
    table.add("trend", "nonincreasing_pairs", ok_pairs, 0.0, len(seeds))
    table.add("trend", "total_pairs", len(means) - 1, 0.0, len(seeds))
    return table


def ablation_wm_config(base: WMConfig, variant: str) -> WMConfig | None:
    """The world-model config for a named ablation row; None when the row has
    no world model to train (copy_model, no_imagination)."""
    fields = dict(base.__dict__)
    if variant == "full":
        pass
    elif variant == "no_semantic_stream":
        fields.update(use_semantic=False, interaction="none")
    elif variant == "concat_interaction":
        fields.update(interaction="concat")
    elif variant == "noisy_interaction":
        fields.update(clean_interaction=False)
    elif variant == "no_diffusion":
        fields.update(mode="regression")
    elif variant == "pixel_diffusion":
        fields.update(use_semantic=False, interaction="none")
    elif variant in ("copy_model", "no_imagination"):
        return None
    else:
        raise ValueError(f"unknown ablation variant {variant!r}")
    return WMConfig(**fields)


def run_ablation_matrix(clips: PackedClips, heldout: PackedClips, enc,
                        base_cfg: WMConfig, seeds: tuple[int, ...],
                        steps: int, batch: int, lr: float,
                        variants: tuple[str, ...] = ABLATION_VARIANTS,
                        log=print) -> ResultTable:
    """Held-out imagination MSE for every world-model variant; the two
    policy-side rows carry the copy baseline and a placeholder so the matrix
    is complete with exactly the configured row set."""
    table = ResultTable()
    pixel_codec = PixelCodec()
    for variant in variants:
        cfg = ablation_wm_config(base_cfg, variant)
        if variant == "copy_model":
            scores = heldout_wm_mse(WorldModel(ablation_wm_config(base_cfg, "full"),
                                               seed=0),
                                    heldout, enc, seed=seeds[0])
            table.add(variant, "heldout_mse", scores["copy_mse"], 0.0, 1)
            table.add(variant, "geom_mse", scores["copy_geom_mse"], 0.0, 1)
            log(f"ablation {variant}: copy mse {scores['copy_mse']:.5f}")
            continue
        if variant == "no_imagination":
            table.add(variant, "heldout_mse", float("nan"), 0.0, 0)
            log(f"ablation {variant}: no world model (policy-side baseline)")
            continue
        use_enc = enc
        if variant == "pixel_diffusion":
            # raster-patch tokens; its MSE lives in pixel space, the row is
            # reported for completeness rather than cross-variant comparison
            fields = {**cfg.__dict__, "d_geom": pixel_codec.d_geom}
            if cfg.target == "residual":
                sg, _ = calibrate_residual_scales(clips, pixel_codec,
                                                  cfg.history, cfg.horizon)
                fields["residual_scale_geom"] = sg
            cfg = WMConfig(**fields)
            use_enc = pixel_codec
        per_seed, per_seed_geom = [], []
        for seed in seeds:
            t0 = time.time()
            scores = train_and_score(cfg, clips, heldout, use_enc,
                                     steps, batch, lr, seed)
            per_seed.append(scores["model_mse"])
            per_seed_geom.append(scores["geom_mse"])
            log(f"ablation {variant} seed={seed} mse={scores['model_mse']:.5f} "
                f"geom={scores['geom_mse']:.5f} ({time.time() - t0:.0f}s)")
            table.add(variant, f"heldout_mse_seed{seed}", scores["model_mse"])
            table.add(variant, f"geom_mse_seed{seed}", scores["geom_mse"])
        stderr = float(np.std(per_seed, ddof=1) / math.sqrt(len(per_seed))) \
            if len(per_seed) > 1 else 0.0
        table.add(variant, "heldout_mse", float(np.mean(per_seed)), stderr,
                  len(seeds))
        table.add(variant, "geom_mse", float(np.mean(per_seed_geom)), stderr,
                  len(seeds))
    return table


def run_refinement_study(policy: Policy, wm: WorldModel, enc, env_cfg,
                         iters: tuple[int, ...] = (1, 2, 3, 4),
                         rollouts: int = 10, eval_seeds: tuple[int, ...] = (0, 1, 2),
                         repeats: int = 10, repeat_rollouts: int = 5,
                         max_steps: int | None = None, workers: int = 1,
                         spread_probes: int = 10,
                         log=print) -> ResultTable:
    """Three measurements per iteration count m: mean success over eval
    seeds, the std of overall success across rng-reseeded repeated
    evaluations on frozen layouts, and the std of the first PCA coordinate
    of repeatedly sampled action plans on a fixed probe state."""
    table = ResultTable()
    for m in iters:
        report = evaluate_policy(policy, wm, enc, env_cfg, rollouts=rollouts,
                                 eval_seeds=eval_seeds, refine_iters=m,
                                 max_steps=max_steps, workers=workers)
        rates = list(report.per_seed_rates().values())
        stderr = float(np.std(rates, ddof=1) / math.sqrt(len(rates))) \
            if len(rates) > 1 else 0.0
        table.add(f"m{m}", "success", report.overall, stderr, len(eval_seeds))
        log(f"refine m={m}: success {report.overall:.3f}")

        repeat_rates = []
        for r in range(repeats):
            rep = evaluate_policy(policy, wm, enc, env_cfg,
                                  rollouts=repeat_rollouts, eval_seeds=(0,),
                                  rng_seed=1000 + r, refine_iters=m,
                                  max_steps=max_steps, workers=workers)
            repeat_rates.append(rep.overall)
        table.add(f"m{m}", "repeat_success_mean", float(np.mean(repeat_rates)),
                  0.0, repeats)
        table.add(f"m{m}", "repeat_success_std",
                  float(np.std(repeat_rates, ddof=1)), 0.0, repeats)
        log(f"refine m={m}: repeat std {np.std(repeat_rates, ddof=1):.4f}")

        spread = action_spread(policy, wm, enc, env_cfg, m=m,
                               probes=spread_probes)
        table.add(f"m{m}", "action_pc1_std", spread, 0.0, spread_probes)
        log(f"refine m={m}: action spread {spread:.4f}")
    return table


def action_spread(policy: Policy, wm: WorldModel, enc, env_cfg, m: int,
                  probes: int = 10, task_id: int = 0,
                  layout_seed: int = 9000) -> float:
    """Std of the first PCA coordinate over reseeded act() calls on one
    frozen probe history."""
    from ..env.arena import ee_state, render
    from ..env.expert import scripted_expert
    from ..env.tasks import sample_layout
    from ..env.arena import step as env_step

    task = TASK_SUITE[task_id]
    state = sample_layout(task, layout_seed, env_cfg)
    hist_g, hist_s, ees = [], [], []
    for _ in range(policy.cfg.history):
        obs = render(state, env_cfg).stacked()
        z = enc.encode(obs)
        hist_g.append(z.geom)
        hist_s.append(z.sem)
        ees.append(ee_state(state).as_array())
        state = env_step(state, scripted_expert(state, task, env_cfg).action, env_cfg)
    hg = np.stack(hist_g)[None]
    hs = np.stack(hist_s)[None]
    ee = np.stack(ees)[None]
    ids = np.array([task_id])
    plans = []
    for r in range(probes):
        res = act(policy, wm, hg, hs, ee, ids, np.random.default_rng(5000 + r),
                  refine_iters=m)
        plans.append(res.actions[0].ravel())
    proj = pca_project(np.stack(plans), components=1)
    if proj.degenerate:
        return 0.0
    return float(np.std(proj.coords[:, 0], ddof=1))


def run_denoise_step_study(policy: Policy, wm: WorldModel, enc, env_cfg,
                           step_counts: tuple[int, ...] = (1, 2, 5, 10, 30),
                           rollouts: int = 20,
                           eval_seeds: tuple[int, ...] = (0, 1, 2),
                           max_steps: int | None = None, workers: int = 1,
                           log=print) -> ResultTable:
    """Success rate as a function of policy denoising steps, on paired
    layouts (same eval seeds for every step count)."""
    table = ResultTable()
    for steps in step_counts:
        report = evaluate_policy(policy, wm, enc, env_cfg, rollouts=rollouts,
                                 eval_seeds=eval_seeds, denoise_steps=steps,
                                 max_steps=max_steps, workers=workers)
        rates = list(report.per_seed_rates().values())
        stderr = float(np.std(rates, ddof=1) / math.sqrt(len(rates))) \
            if len(rates) > 1 else 0.0
        table.add(f"steps{steps}", "success", report.overall, stderr,
                  len(eval_seeds))
        log(f"denoise steps={steps}: success {report.overall:.3f}")
    return table
