"""Command-line entry point.

Subcommands: gen-data, train-wm, train-policy, eval, ablate, scale,
refine-study, plot, inspect-attn. Every command reads an optional config
file, writes its results with a reproducibility header (config hash plus
dataset hash where applicable), and exits non-zero on any invariant
violation or missing artifact.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from ..encoders import create_encoder
from ..env.dataset import (
    collect_demos,
    dataset_hash,
    generate_clips,
    load_dataset,
    save_dataset,
)
from ..env.tasks import TASK_SUITE
from ..policy import Policy
from ..world_model import WMConfig, WorldModel
from .checkpoint import (
    CheckpointError,
    load_checkpoint,
    pack_config_echo,
    save_checkpoint,
    unpack_config_echo,
)
from .config import ExperimentConfig
from .evaluate import evaluate_policy
from .plots import plot_bar, plot_metric_curve
from .results import ResultTable
from .studies import (
    run_ablation_matrix,
    run_denoise_step_study,
    run_refinement_study,
    run_scaling_study,
)
from .train import (
    PackedClips,
    build_demo_windows,
    heldout_wm_mse,
    train_policy,
    train_world_model,
)

from ..policy import PolicyConfig


class CliError(RuntimeError):
    pass


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.set("experiment", "seed", args.seed)
    return cfg


def _encoder_from(cfg: ExperimentConfig):
    return create_encoder(seed=cfg.get_int("encoder", "seed"),
                          grid=cfg.get_int("env", "grid"),
                          patch=cfg.get_int("encoder", "patch"),
                          num_classes=cfg.get_int("env", "colors"),
                          d_geom=cfg.get_int("encoder", "d_geom"),
                          d_sem=cfg.get_int("encoder", "d_sem"))


def _manifest_extra(cfg: ExperimentConfig) -> dict[str, str]:
    return {
        "encoder_seed": cfg.get("encoder", "seed"),
        "encoder_patch": cfg.get("encoder", "patch"),
        "encoder_d_geom": cfg.get("encoder", "d_geom"),
        "encoder_d_sem": cfg.get("encoder", "d_sem"),
    }


def _save_model(path, kind, model, cfg: ExperimentConfig):
    save_checkpoint(path, kind, pack_config_echo(model.cfg, cfg.serialize()),
                    model.state())


def _load_wm(path) -> tuple[WorldModel, str]:
    kind, echo, params = load_checkpoint(path)
    if kind != "world-model":
        raise CliError(f"{path}: expected a world-model checkpoint, got {kind!r}")
    mc, experiment_text = unpack_config_echo(WMConfig, echo)
    model = WorldModel(mc, seed=0)
    model.load_state(params)
    return model, experiment_text


def _load_policy(path) -> tuple[Policy, str]:
    kind, echo, params = load_checkpoint(path)
    if kind != "policy":
        raise CliError(f"{path}: expected a policy checkpoint, got {kind!r}")
    pc, experiment_text = unpack_config_echo(PolicyConfig, echo)
    policy = Policy(pc, seed=0)
    policy.load_state(params)
    return policy, experiment_text


def _meta(cfg: ExperimentConfig, **extra) -> dict[str, str]:
    meta = {"config_hash": cfg.hash(), "seed": cfg.get("experiment", "seed"),
            "created": time.strftime("%Y-%m-%dT%H:%M:%S")}
    meta.update({k: str(v) for k, v in extra.items()})
    return meta


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    seed = cfg.get_int("experiment", "seed")
    env_cfg = cfg.env_config()
    out = Path(args.out)
    if args.kind == "clips":
        clips = args.clips if args.clips is not None else cfg.get_int("data", "clips")
        length = args.length if args.length is not None else cfg.get_int("data", "clip_length")
        min_window = cfg.get_int("wm", "history") + cfg.get_int("wm", "horizon") + 1
        ds = generate_clips(clips, length, seed=seed, cfg=env_cfg,
                            min_window=min_window)
    elif args.kind == "demos":
        per_task = args.demos if args.demos is not None \
            else cfg.get_int("data", "demos_per_task")
        ds = collect_demos(per_task, seed=seed, cfg=env_cfg)
    else:
        raise CliError(f"unknown data kind {args.kind!r}")
    save_dataset(ds, out, extra_manifest=_manifest_extra(cfg))
    print(f"dataset: {out} episodes={len(ds)} hash={dataset_hash(out)}")
    return 0


def _resolve_wm_config(cfg: ExperimentConfig, clips: PackedClips, enc) -> WMConfig:
    """Fill in auto residual scales from the training clips and record the
    resolved values back into the experiment config."""
    if cfg.get("wm", "target") == "residual" and (
            cfg.get("wm", "residual_scale_geom") == "auto"
            or cfg.get("wm", "residual_scale_sem") == "auto"):
        from .train import calibrate_residual_scales
        sg, ss = calibrate_residual_scales(clips, enc,
                                           cfg.get_int("wm", "history"),
                                           cfg.get_int("wm", "horizon"))
        if cfg.get("wm", "residual_scale_geom") == "auto":
            cfg.set("wm", "residual_scale_geom", sg)
        if cfg.get("wm", "residual_scale_sem") == "auto":
            cfg.set("wm", "residual_scale_sem", ss)
    return cfg.wm_config()


def cmd_train_wm(args) -> int:
    cfg = _load_config(args)
    seed = cfg.get_int("experiment", "seed")
    enc = _encoder_from(cfg)
    ds = load_dataset(args.data)
    clips = PackedClips.from_dataset(ds)
    model = WorldModel(_resolve_wm_config(cfg, clips, enc), seed=seed)
    print(f"training world model: {model.num_params()} params, "
          f"{clips.num_episodes} clips")
    result = train_world_model(model, clips, enc,
                               steps=cfg.get_int("wm", "train_steps"),
                               batch=cfg.get_int("wm", "batch"),
                               lr=cfg.get_float("wm", "lr"), seed=seed,
                               log_every=max(1, cfg.get_int("wm", "train_steps") // 10))
    _save_model(args.out, "world-model", model, cfg)
    table = ResultTable(meta=_meta(cfg, dataset_hash=dataset_hash(args.data)))
    for i, loss in enumerate(result.losses):
        table.add("train", f"loss_step{i}", loss)
    table.save(Path(args.out).with_suffix(".losses.csv"))
    print(f"checkpoint: {args.out} ({result.wall_time:.0f}s, "
          f"final loss {np.mean(result.losses[-20:]):.4f})")
    if args.heldout:
        held = PackedClips.from_dataset(load_dataset(args.heldout))
        scores = heldout_wm_mse(model, held, enc, seed=seed)
        print(f"heldout: model {scores['model_mse']:.5f} "
              f"copy {scores['copy_mse']:.5f}")
    return 0


def cmd_train_policy(args) -> int:
    cfg = _load_config(args)
    seed = cfg.get_int("experiment", "seed")
    enc = _encoder_from(cfg)
    demos = load_dataset(args.demos)
    pcfg = cfg.policy_config()
    wm = None
    if pcfg.imagination == "imagined":
        if not args.wm:
            raise CliError("imagination mode 'imagined' needs --wm CKPT")
        wm, _ = _load_wm(args.wm)
    policy = Policy(pcfg, seed=seed)
    print(f"training policy ({pcfg.imagination}): {policy.num_params()} params, "
          f"{len(demos)} demos")
    windows = build_demo_windows(demos, enc, wm, pcfg, seed=seed)
    result = train_policy(policy, windows,
                          steps=cfg.get_int("policy", "train_steps"),
                          batch=cfg.get_int("policy", "batch"),
                          lr=cfg.get_float("policy", "lr"), seed=seed,
                          log_every=max(1, cfg.get_int("policy", "train_steps") // 10))
    _save_model(args.out, "policy", policy, cfg)
    print(f"checkpoint: {args.out} ({result.wall_time:.0f}s, "
          f"final loss {np.mean(result.losses[-50:]):.4f})")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    enc = _encoder_from(cfg)
    policy, _ = _load_policy(args.policy)
    wm = None
    if policy.cfg.imagination == "imagined":
        if not args.wm:
            raise CliError("this policy imagines; pass --wm CKPT")
        wm, _ = _load_wm(args.wm)
    eval_seeds = tuple(range(cfg.get_int("eval", "eval_seeds")))
    report = evaluate_policy(
        policy, wm, enc, cfg.env_config(), rollouts=cfg.get_int("eval", "rollouts"),
        eval_seeds=eval_seeds, max_steps=cfg.get_int("eval", "max_steps"),
        workers=cfg.get_int("eval", "workers"),
        refine_iters=args.refine_iters, denoise_steps=args.denoise_steps)
    table = ResultTable(meta=_meta(cfg, policy=args.policy))
    for cell in report.cells:
        table.add(f"task{cell.task_id}", f"success_seed{cell.eval_seed}",
                  cell.rate, 0.0, 1)
        table.add(f"task{cell.task_id}", f"steps_seed{cell.eval_seed}",
                  cell.mean_steps, 0.0, 1)
    for task_id, rate in report.per_task_rates().items():
        table.add(f"task{task_id}", "success", rate, 0.0, len(eval_seeds))
    rates = list(report.per_seed_rates().values())
    table.add("suite", "success", report.overall,
              float(np.std(rates, ddof=1)) if len(rates) > 1 else 0.0,
              len(eval_seeds))
    table.save(args.out)
    print(f"eval: overall success {report.overall:.3f} -> {args.out}")
    return 0


def cmd_scale(args) -> int:
    cfg = _load_config(args)
    enc = _encoder_from(cfg)
    clips = PackedClips.from_dataset(load_dataset(args.data))
    heldout = PackedClips.from_dataset(load_dataset(args.heldout))
    sizes = tuple(int(s) for s in args.sizes.split(","))
    seeds = tuple(range(cfg.get_int("eval", "eval_seeds")))
    table = run_scaling_study(clips, heldout, enc,
                              _resolve_wm_config(cfg, clips, enc),
                              sizes=sizes, seeds=seeds,
                              steps=cfg.get_int("wm", "train_steps"),
                              batch=cfg.get_int("wm", "batch"),
                              lr=cfg.get_float("wm", "lr"))
    table.meta = _meta(cfg, dataset_hash=dataset_hash(args.data))
    table.save(args.out)
    svg = Path(args.out).with_suffix(".svg")
    plot_metric_curve(table, "heldout_mse", svg, xlabel="training clips",
                      ylabel="held-out MSE", title="data scaling", logx=True)
    print(f"scaling study -> {args.out}, {svg}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    enc = _encoder_from(cfg)
    clips = PackedClips.from_dataset(load_dataset(args.data))
    heldout = PackedClips.from_dataset(load_dataset(args.heldout))
    seeds = tuple(range(cfg.get_int("eval", "eval_seeds")))
    table = run_ablation_matrix(clips, heldout, enc,
                                _resolve_wm_config(cfg, clips, enc),
                                seeds=seeds,
                                steps=cfg.get_int("wm", "train_steps"),
                                batch=cfg.get_int("wm", "batch"),
                                lr=cfg.get_float("wm", "lr"))
    table.meta = _meta(cfg, dataset_hash=dataset_hash(args.data))
    table.save(args.out)
    svg = Path(args.out).with_suffix(".svg")
    plot_bar(table, "heldout_mse", svg, ylabel="held-out MSE",
             title="world-model ablations")
    print(f"ablation matrix -> {args.out}, {svg}")
    return 0


def cmd_refine_study(args) -> int:
    cfg = _load_config(args)
    enc = _encoder_from(cfg)
    policy, _ = _load_policy(args.policy)
    wm, _ = _load_wm(args.wm)
    iters = tuple(int(m) for m in args.iters.split(","))
    table = run_refinement_study(
        policy, wm, enc, cfg.env_config(), iters=iters,
        rollouts=args.rollouts, eval_seeds=tuple(range(cfg.get_int("eval", "eval_seeds"))),
        repeats=args.repeats, max_steps=cfg.get_int("eval", "max_steps"),
        workers=cfg.get_int("eval", "workers"))
    table.meta = _meta(cfg, policy=args.policy)
    table.save(args.out)
    svg = Path(args.out).with_suffix(".svg")
    plot_metric_curve(table, "success", svg, xlabel="refinement iterations",
                      ylabel="success rate", title="iterative refinement")
    print(f"refinement study -> {args.out}, {svg}")
    return 0


def cmd_plot(args) -> int:
    table = ResultTable.load(args.csv)
    if args.bar:
        plot_bar(table, args.metric, args.out)
    else:
        plot_metric_curve(table, args.metric, args.out, xlabel=args.xlabel,
                          ylabel=args.metric)
    print(f"plot -> {args.out}")
    return 0


def cmd_inspect_attn(args) -> int:
    cfg = _load_config(args)
    enc = _encoder_from(cfg)
    wm, _ = _load_wm(args.wm)
    if wm.cfg.interaction != "interactive":
        raise CliError("attention inspection needs an interactive-mode model")
    from .attention import attention_alignment_report
    table = attention_alignment_report(wm, enc, cfg.env_config(),
                                       probes=args.probes,
                                       seed=cfg.get_int("experiment", "seed"))
    table.meta = _meta(cfg, wm=args.wm)
    table.save(args.out)
    print(f"attention report -> {args.out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latentpush",
                                description="world-model and policy experiments")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file")
    common.add_argument("--seed", type=int, help="override experiment seed")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    g = add("gen-data", help="generate clips or expert demos")
    g.add_argument("--kind", choices=("clips", "demos"), default="clips")
    g.add_argument("--clips", type=int)
    g.add_argument("--length", type=int)
    g.add_argument("--demos", type=int, help="demos per task")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    t = add("train-wm", help="train the world model")
    t.add_argument("--data", required=True)
    t.add_argument("--heldout")
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train_wm)

    tp = add("train-policy", help="train the diffusion policy")
    tp.add_argument("--demos", required=True)
    tp.add_argument("--wm")
    tp.add_argument("--out", required=True)
    tp.set_defaults(fn=cmd_train_policy)

    e = add("eval", help="closed-loop evaluation on the task suite")
    e.add_argument("--policy", required=True)
    e.add_argument("--wm")
    e.add_argument("--refine-iters", type=int)
    e.add_argument("--denoise-steps", type=int)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_eval)

    s = add("scale", help="data-scaling study")
    s.add_argument("--data", required=True)
    s.add_argument("--heldout", required=True)
    s.add_argument("--sizes", default="250,500,1000,2000")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_scale)

    a = add("ablate", help="world-model ablation matrix")
    a.add_argument("--data", required=True)
    a.add_argument("--heldout", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(fn=cmd_ablate)

    r = add("refine-study", help="refinement iteration sweep")
    r.add_argument("--policy", required=True)
    r.add_argument("--wm", required=True)
    r.add_argument("--iters", default="1,2,3,4")
    r.add_argument("--rollouts", type=int, default=10)
    r.add_argument("--repeats", type=int, default=10)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_refine_study)

    pl = add("plot", help="render a CSV metric to SVG")
    pl.add_argument("--csv", required=True)
    pl.add_argument("--metric", required=True)
    pl.add_argument("--bar", action="store_true")
    pl.add_argument("--xlabel", default="")
    pl.add_argument("--out", required=True)
    pl.set_defaults(fn=cmd_plot)

    ia = add("inspect-attn", help="cross-attention alignment report")
    ia.add_argument("--wm", required=True)
    ia.add_argument("--probes", type=int, default=16)
    ia.add_argument("--out", required=True)
    ia.set_defaults(fn=cmd_inspect_attn)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, CheckpointError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
