"""Cross-attention alignment diagnostics.

Probes the interactive denoisers on frozen scenes (null actions, so every
future frame shares the current geometry) and asks: when a query token sits
on an object, does its top-1 key token land on a patch of the same object
more often than the object's share of patches would predict? Alignment above
chance means the two streams talk about the same thing.
"""

from __future__ import annotations

import numpy as np

from ..env.arena import EnvConfig, ee_state, object_mask, render
from ..env.tasks import random_layout
from ..world_model import WorldModel
from .results import ResultTable


def _patch_object_table(state, cfg: EnvConfig, patch: int) -> list[set[int]]:
    """For each patch index (row-major over the token grid), the set of object
    ids whose silhouette touches it."""
    side = cfg.grid // patch
    table: list[set[int]] = [set() for _ in range(side * side)]
    for oid, obj in enumerate(state.objects):
        mask = object_mask(obj, cfg)
        hits = mask.reshape(side, patch, side, patch).any(axis=(1, 3))
        for i, j in np.argwhere(hits):
            table[i * side + j].add(oid)
    return table


def attention_alignment_report(wm: WorldModel, enc, env_cfg: EnvConfig,
                               probes: int = 16, seed: int = 0) -> ResultTable:
    cfg = wm.cfg
    patch = env_cfg.grid // int(round(cfg.tokens ** 0.5))
    rng = np.random.default_rng(seed)
    hits = total = 0
    chance_acc = 0.0
    for _ in range(probes):
        state = random_layout(rng, env_cfg)
        obs = render(state, env_cfg).stacked()
        z = enc.encode(obs[None])
        hist_g = np.repeat(z.geom[None], cfg.history, axis=1)
        hist_s = np.repeat(z.sem[None], cfg.history, axis=1)
        actions = np.zeros((1, cfg.horizon + 1, cfg.action_dim), dtype=np.float32)
        out = wm.imagine(hist_g, hist_s, actions, rng, keep_weights=True)
        table = _patch_object_table(state, env_cfg, patch)
        occupied = [p for p, objs in table.items() if objs] \
            if isinstance(table, dict) else [p for p, objs in enumerate(table) if objs]
        if not occupied:
            continue
        merged = np.mean([m[0] for m in out.attention], axis=0)  # (H, kT, kT)
        top_keys = merged.argmax(axis=-1)  # (H, kT)
        t = cfg.tokens
        for h in range(top_keys.shape[0]):
            for q in range(top_keys.shape[1]):
                p_q = q % t
                objs = table[p_q]
                if not objs:
                    continue
                p_k = int(top_keys[h, q]) % t
                total += 1
                if table[p_k] & objs:
                    hits += 1
                share = sum(1 for p in range(t) if table[p] & objs) / t
                chance_acc += share
    table_out = ResultTable()
    rate = hits / total if total else float("nan")
    chance = chance_acc / total if total else float("nan")
    table_out.add("alignment", "top1_same_object_rate", rate, 0.0, probes)
    table_out.add("alignment", "chance_rate", chance, 0.0, probes)
    table_out.add("alignment", "queries", total, 0.0, probes)
    return table_out
