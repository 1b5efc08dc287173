"""Dual-stream latent world model.

Per stream there are two transformers. The decomposition net reads [pooled
history tokens | noisy future tokens | action tokens | time token] and
estimates the clean component of the noisy future (which equals -z0 under
the constant-gradient attenuation). The denoiser reads the noisy future plus
the same conditioning and emits both heads (z0_hat, eta_hat); in interactive
mode its blocks cross-attend to the other stream's estimated clean component,
which is how geometry and semantics talk to each other during denoising.

Interaction modes:
  interactive          cross-attention onto the other stream's clean estimate
  interactive + clean_interaction=False
                       cross-attention onto the other stream's raw noisy tokens
  concat               the other stream's clean estimate is appended to the
                       token sequence instead of cross-attended
  none                 the streams never see each other; each denoiser gets its
                       own stream's clean estimate appended (the plain
                       decoupled-diffusion denoiser), since the clean estimate
                       is the only conduit carrying history into denoising

`mode="regression"` keeps the decomposition backbone but trains it as a
single-shot future predictor with no diffusion (the no-diffusion ablation).

`target` picks the diffused variable: "absolute" diffuses the future latents
themselves; "residual" diffuses the change from the last history frame
(scaled by `residual_scale`), which keeps the diffusion signal commensurate
with unit noise when scenes change slowly. Predictions are always returned
in absolute latent space. Training batches carry clean future latents;
corruption happens inside the loss. Imagination runs the reverse chain
jointly over both streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffusion as dd
from .encoders import LatentState
from .nn import layers as L
from .nn import tensor as tz
from .nn.tensor import Tensor

INTERACTION_MODES = ("interactive", "concat", "none")


@dataclass(frozen=True)
class WMConfig:
    history: int = 4
    horizon: int = 6
    tokens: int = 64          # per frame per stream
    d_geom: int = 64
    d_sem: int = 64
    action_dim: int = 3
    decomp_layers: int = 4
    decomp_dim: int = 128
    denoise_blocks: int = 2
    denoise_dim: int = 128
    heads: int = 4
    mlp_ratio: int = 4
    interaction: str = "interactive"
    clean_interaction: bool = True
    use_semantic: bool = True
    sampling_steps: int = 10
    history_pool: int = 2     # spatial pooling factor on history token grids
    mode: str = "diffusion"   # diffusion | regression
    target: str = "absolute"  # absolute | residual (change from last history frame)
    residual_scale_geom: float = 8.0
    residual_scale_sem: float = 8.0

    def __post_init__(self):
        if self.history < 1 or self.horizon < 1:
            raise ValueError("history and horizon must be >= 1")
        if self.interaction not in INTERACTION_MODES:
            raise ValueError(f"unknown interaction mode {self.interaction!r}")
        if self.mode not in ("diffusion", "regression"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.target not in ("absolute", "residual"):
            raise ValueError(f"unknown target {self.target!r}")
        side = int(round(self.tokens ** 0.5))
        if side * side != self.tokens or side % self.history_pool:
            raise ValueError("tokens must be a square grid divisible by history_pool")

    @property
    def hist_tokens(self) -> int:
        side = int(round(self.tokens ** 0.5)) // self.history_pool
        return side * side

    @property
    def future_tokens(self) -> int:
        return self.horizon * self.tokens


# reference presets; "paper" mirrors the reported architecture, "desk" is the
# scaled default, "study" is what the CPU experiment harness trains
WM_PRESETS: dict[str, dict] = {
    "paper": dict(decomp_layers=8, decomp_dim=384, denoise_blocks=2,
                  denoise_dim=384, heads=6),
    "desk": dict(decomp_layers=4, decomp_dim=128, denoise_blocks=2,
                 denoise_dim=128, heads=4),
    "study": dict(decomp_layers=2, decomp_dim=64, denoise_blocks=1,
                  denoise_dim=64, heads=2, mlp_ratio=2, history_pool=4),
}


def pool_token_grid(x: np.ndarray, factor: int) -> np.ndarray:
    """Average-pool a row-major square token grid (..., T, d) by `factor`."""
    if factor == 1:
        return x
    *lead, t, d = x.shape
    side = int(round(t ** 0.5))
    x = x.reshape(*lead, side // factor, factor, side // factor, factor, d)
    return x.mean(axis=(-4, -2)).reshape(*lead, (side // factor) ** 2, d)


@dataclass
class WMBatch:
    """Clean training windows; corruption is applied inside the loss."""

    hist_geom: np.ndarray     # (B, l, T, d_geom)
    hist_sem: np.ndarray      # (B, l, T, d_sem)
    future_geom: np.ndarray   # (B, k, T, d_geom)
    future_sem: np.ndarray    # (B, k, T, d_sem)
    actions: np.ndarray       # (B, k+1, action_dim)

    @property
    def size(self) -> int:
        return self.hist_geom.shape[0]


@dataclass
class ImaginationBatch:
    geom: np.ndarray          # (B, k, T, d_geom)
    sem: np.ndarray | None    # (B, k, T, d_sem); None without the semantic stream
    attention: list[np.ndarray] | None = None

    def as_latent(self) -> LatentState:
        sem = self.sem if self.sem is not None else np.zeros_like(self.geom[..., :0])
        return LatentState(self.geom, sem)


class _ConditionedTransformer(L.Module):
    """Shared backbone: embeds the conditioning groups, runs blocks, and reads
    heads off the future-token positions. History tokens are optional; the
    denoisers run without them (their conditioning is the noisy future, time,
    actions, and the other stream's clean estimate)."""

    def __init__(self, cfg: WMConfig, d_stream: int, d_other: int, dim: int,
                 layers: int, cross: bool, num_heads_out: int,
                 rng: np.random.Generator, use_history: bool = True,
                 own_clean: bool = False, dtype=np.float32):
        self.cfg = cfg
        self.dim = dim
        self.cross = cross
        self.use_history = use_history
        k, l = cfg.horizon, cfg.history
        self.future_in = L.Linear(d_stream, dim, rng, dtype=dtype)
        self.hist_in = L.Linear(d_stream, dim, rng, dtype=dtype) if use_history else None
        self.own_in = L.Linear(d_stream, dim, rng, dtype=dtype) if own_clean else None
        self.act_in = L.Linear(cfg.action_dim, dim, rng, dtype=dtype)
        self.time_in = L.Linear(dim, dim, rng, dtype=dtype)
        # groups: hist-or-own-clean / future / act / time / other-clean
        self.type_emb = L.Embedding(5, dim, rng, dtype=dtype)
        self.pos_future = L._param(rng, (k * cfg.tokens, dim), 0.02, dtype)
        self.pos_hist = L._param(rng, (l * cfg.hist_tokens, dim), 0.02, dtype) \
            if use_history else None
        self.pos_act = L._param(rng, (k + 1, dim), 0.02, dtype)
        self.ctx_in = L.Linear(d_other, dim, rng, dtype=dtype) if d_other else None
        self.blocks = [L.TransformerBlock(dim, cfg.heads, rng, mlp_ratio=cfg.mlp_ratio,
                                          cross=cross, dtype=dtype)
                       for _ in range(layers)]
        self.ln_out = L.LayerNorm(dim, dtype=dtype)
        self.heads_out = [L.Linear(dim, d_stream, rng, zero_init=True, dtype=dtype)
                          for _ in range(num_heads_out)]
        self._dtype = dtype

    @property
    def future_span(self) -> tuple[int, int]:
        lo = self.cfg.history * self.cfg.hist_tokens if self.use_history else 0
        return lo, lo + self.cfg.future_tokens

    def _embed(self, future: Tensor, hist: Tensor | None, actions: Tensor,
               n: np.ndarray, own_context: Tensor | None) -> Tensor:
        """Token sequence [hist? | future | own-clean? | act | time]."""
        b = future.shape[0]
        tf = self.future_in(future) + self.pos_future + self.type_emb.table[1:2]
        groups = []
        if self.use_history:
            if hist is None:
                raise ValueError("history tokens required by this net")
            groups.append(self.hist_in(hist) + self.pos_hist + self.type_emb.table[0:1])
        groups.append(tf)
        if self.own_in is not None:
            if own_context is None:
                raise ValueError("own clean estimate required by this net")
            groups.append(self.own_in(own_context) + self.pos_future
                          + self.type_emb.table[0:1])
        groups.append(self.act_in(actions) + self.pos_act + self.type_emb.table[2:3])
        feats = L.time_features(np.broadcast_to(np.asarray(n, self._dtype), (b,)),
                                self.dim, dtype=self._dtype)
        groups.append(self.time_in(Tensor(feats[:, None, :])) + self.type_emb.table[3:4])
        return tz.concat(groups, axis=1)

    def __call__(self, future: Tensor, hist: Tensor | None, actions: Tensor,
                 n: np.ndarray, context: Tensor | None = None,
                 concat_context: Tensor | None = None,
                 own_context: Tensor | None = None,
                 keep_weights: bool = False) -> list[Tensor]:
        tokens = self._embed(future, hist, actions, n, own_context)
        if concat_context is not None:
            tokens = tz.concat([tokens, self.ctx_in(concat_context)
                                + self.type_emb.table[4:5]], axis=1)
        ctx = self.ctx_in(context) if context is not None else None
        for block in self.blocks:
            tokens = block(tokens, ctx, keep_weights=keep_weights)
        lo, hi = self.future_span
        h = self.ln_out(tokens[:, lo:hi, :])
        return [head(h) for head in self.heads_out]


def _as_f(x: np.ndarray, dtype) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=dtype)


class WorldModel(L.Module):
    def __init__(self, cfg: WMConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self._dtype = dtype
        rng = np.random.default_rng(seed)
        diffusion = cfg.mode == "diffusion"
        self.decomp_geom = _ConditionedTransformer(
            cfg, cfg.d_geom, 0, cfg.decomp_dim, cfg.decomp_layers,
            cross=False, num_heads_out=1, rng=rng, dtype=dtype)
        self.decomp_sem = None
        self.den_geom = None
        self.den_sem = None
        if cfg.use_semantic:
            self.decomp_sem = _ConditionedTransformer(
                cfg, cfg.d_sem, 0, cfg.decomp_dim, cfg.decomp_layers,
                cross=False, num_heads_out=1, rng=rng, dtype=dtype)
        if diffusion:
            # the clean estimates are the denoisers' only conduit to history:
            # each gets its own stream's estimate in-sequence, and interaction
            # (cross-attention or concat) carries the other stream's
            cross = cfg.interaction == "interactive" and cfg.use_semantic
            interacting = cfg.use_semantic and cfg.interaction != "none"
            self.den_geom = _ConditionedTransformer(
                cfg, cfg.d_geom, cfg.d_sem if interacting else 0,
                cfg.denoise_dim, cfg.denoise_blocks, cross=cross,
                num_heads_out=2, rng=rng, use_history=False, own_clean=True,
                dtype=dtype)
            if cfg.use_semantic:
                self.den_sem = _ConditionedTransformer(
                    cfg, cfg.d_sem, cfg.d_geom if interacting else 0,
                    cfg.denoise_dim, cfg.denoise_blocks, cross=cross,
                    num_heads_out=2, rng=rng, use_history=False, own_clean=True,
                    dtype=dtype)

    # ------------------------------------------------------------------
    def _flatten_future(self, z: np.ndarray) -> np.ndarray:
        b, k, t, d = z.shape
        return z.reshape(b, k * t, d)

    def _prep_hist(self, hist: np.ndarray) -> np.ndarray:
        pooled = pool_token_grid(_as_f(hist, self._dtype), self.cfg.history_pool)
        b, l, t, d = pooled.shape
        return pooled.reshape(b, l * t, d)

    def decompose(self, zn_geom: Tensor, zn_sem: Tensor | None, n: np.ndarray,
                  hist_geom: np.ndarray, hist_sem: np.ndarray | None,
                  actions: np.ndarray) -> tuple[Tensor, Tensor | None]:
        """Clean-component estimates for the noisy futures of each stream."""
        acts = Tensor(_as_f(actions, self._dtype))
        c_geom = self.decomp_geom(zn_geom, Tensor(self._prep_hist(hist_geom)),
                                  acts, n)[0]
        c_sem = None
        if self.decomp_sem is not None:
            if zn_sem is None or hist_sem is None:
                raise ValueError("semantic stream enabled but inputs missing")
            c_sem = self.decomp_sem(zn_sem, Tensor(self._prep_hist(hist_sem)),
                                    acts, n)[0]
        return c_geom, c_sem

    def denoise_interactive(self, zn_geom: Tensor, zn_sem: Tensor | None,
                            n: np.ndarray, c_geom: Tensor, c_sem: Tensor | None,
                            actions: np.ndarray, keep_weights: bool = False):
        """Both heads per stream; the cross source depends on the config."""
        if self.den_geom is None:
            raise RuntimeError("denoisers absent in regression mode")
        cfg = self.cfg
        acts = Tensor(_as_f(actions, self._dtype))

        cross_for_geom = cross_for_sem = None
        concat_for_geom = concat_for_sem = None
        if cfg.use_semantic and cfg.interaction == "interactive":
            cross_for_geom = c_sem if cfg.clean_interaction else zn_sem
            cross_for_sem = c_geom if cfg.clean_interaction else zn_geom
        elif cfg.use_semantic and cfg.interaction == "concat":
            concat_for_geom = c_sem
            concat_for_sem = c_geom

        z0_g, eta_g = self.den_geom(zn_geom, None, acts, n,
                                    context=cross_for_geom,
                                    concat_context=concat_for_geom,
                                    own_context=c_geom,
                                    keep_weights=keep_weights)
        if not cfg.use_semantic:
            return (z0_g, eta_g), None
        z0_s, eta_s = self.den_sem(zn_sem, None, acts, n,
                                   context=cross_for_sem,
                                   concat_context=concat_for_sem,
                                   own_context=c_sem,
                                   keep_weights=keep_weights)
        return (z0_g, eta_g), (z0_s, eta_s)

    # ------------------------------------------------------------------
    def _diffused_target(self, future: np.ndarray, hist: np.ndarray,
                         scale: float) -> np.ndarray:
        """The variable the diffusion operates on, flattened over frames."""
        future = _as_f(future, self._dtype)
        if self.cfg.target == "residual":
            base = _as_f(hist[:, -1:], self._dtype)
            future = (future - base) * scale
        return self._flatten_future(future)

    def _from_diffused(self, z: np.ndarray, hist: np.ndarray,
                       scale: float) -> np.ndarray:
        b = z.shape[0]
        cfg = self.cfg
        frames = z.reshape(b, cfg.horizon, cfg.tokens, -1)
        if cfg.target == "residual":
            frames = frames / scale + _as_f(hist[:, -1:], self._dtype)
        return frames

    def loss_given_noise(self, batch: WMBatch, n: np.ndarray,
                         eta_geom: np.ndarray, eta_sem: np.ndarray | None) -> Tensor:
        """Deterministic training loss for fixed diffusion times and noises."""
        cfg = self.cfg
        z0_g = self._diffused_target(batch.future_geom, batch.hist_geom,
                                     cfg.residual_scale_geom)
        nb = n.reshape(-1, 1, 1).astype(self._dtype)

        if cfg.mode == "regression":
            zeros_g = Tensor(np.zeros_like(z0_g))
            zeros_s = None
            if cfg.use_semantic:
                zeros_s = Tensor(np.zeros(
                    self._flatten_future(batch.future_sem).shape, dtype=self._dtype))
            preds = self.decompose(zeros_g, zeros_s, np.zeros_like(n),
                                   batch.hist_geom,
                                   batch.hist_sem if cfg.use_semantic else None,
                                   batch.actions)
            total = tz.mse(preds[0], Tensor(z0_g))
            if cfg.use_semantic:
                z0_s = self._diffused_target(batch.future_sem, batch.hist_sem,
                                             cfg.residual_scale_sem)
                total = total + tz.mse(preds[1], Tensor(z0_s))
            return total

        zn_g = (1.0 - nb) * z0_g + np.sqrt(nb) * eta_geom
        zn_g_t = Tensor(zn_g.astype(self._dtype))
        zn_s_t = None
        z0_s = None
        if cfg.use_semantic:
            z0_s = self._diffused_target(batch.future_sem, batch.hist_sem,
                                         cfg.residual_scale_sem)
            zn_s = (1.0 - nb) * z0_s + np.sqrt(nb) * eta_sem
            zn_s_t = Tensor(zn_s.astype(self._dtype))

        c_g, c_s = self.decompose(zn_g_t, zn_s_t, n, batch.hist_geom,
                                  batch.hist_sem if cfg.use_semantic else None,
                                  batch.actions)
        (z0g_hat, etag_hat), sem_out = self.denoise_interactive(
            zn_g_t, zn_s_t, n, c_g, c_s, batch.actions)

        total = tz.mse(z0g_hat, Tensor(z0_g)) \
            + tz.mse(etag_hat, Tensor(eta_geom.astype(self._dtype))) \
            + tz.mse(c_g, Tensor(-z0_g))
        if cfg.use_semantic:
            z0s_hat, etas_hat = sem_out
            total = total + tz.mse(z0s_hat, Tensor(z0_s)) \
                + tz.mse(etas_hat, Tensor(eta_sem.astype(self._dtype))) \
                + tz.mse(c_s, Tensor(-z0_s))
        return total

    def loss(self, batch: WMBatch, rng: np.random.Generator) -> Tensor:
        n = rng.uniform(0.0, 1.0, size=batch.size)
        eta_g = rng.standard_normal(
            self._flatten_future(batch.future_geom).shape).astype(self._dtype)
        eta_s = None
        if self.cfg.use_semantic:
            eta_s = rng.standard_normal(
                self._flatten_future(batch.future_sem).shape).astype(self._dtype)
        return self.loss_given_noise(batch, n, eta_g, eta_s)

    # ------------------------------------------------------------------
    def imagine(self, hist_geom: np.ndarray, hist_sem: np.ndarray | None,
                actions: np.ndarray, rng: np.random.Generator,
                sampling_steps: int | None = None,
                keep_weights: bool = False) -> ImaginationBatch:
        """Predict k future frames per stream by running the reverse chain."""
        cfg = self.cfg
        if actions.shape[-2] != cfg.horizon + 1:
            raise ValueError(f"need {cfg.horizon + 1} actions, got {actions.shape[-2]}")
        if hist_geom.shape[1] != cfg.history:
            raise ValueError(f"need {cfg.history} history frames, got {hist_geom.shape[1]}")
        b = hist_geom.shape[0]
        shape_g = (b, cfg.future_tokens, cfg.d_geom)
        steps = sampling_steps or cfg.sampling_steps
        sched = dd.DiffusionConfig(num_steps=steps).schedule()
        attn_maps: list[np.ndarray] = []

        if cfg.mode == "regression":
            zeros_g = Tensor(np.zeros(shape_g, dtype=self._dtype))
            zeros_s = Tensor(np.zeros((b, cfg.future_tokens, cfg.d_sem), dtype=self._dtype)) \
                if cfg.use_semantic else None
            preds = self.decompose(zeros_g, zeros_s, np.zeros(b), hist_geom,
                                   hist_sem, actions)
            geom = self._from_diffused(preds[0].data, hist_geom,
                                       cfg.residual_scale_geom)
            sem = self._from_diffused(preds[1].data, hist_sem,
                                      cfg.residual_scale_sem) \
                if cfg.use_semantic else None
            return ImaginationBatch(geom=geom, sem=sem)

        z_g = rng.standard_normal(shape_g).astype(self._dtype)
        z_s = None
        if cfg.use_semantic:
            z_s = rng.standard_normal((b, cfg.future_tokens, cfg.d_sem)).astype(self._dtype)

        for n, dn in sched:
            nvec = np.full(b, n)
            c_g, c_s = self.decompose(Tensor(z_g), Tensor(z_s) if z_s is not None else None,
                                      nvec, hist_geom, hist_sem, actions)
            (z0g, etag), sem_out = self.denoise_interactive(
                Tensor(z_g), Tensor(z_s) if z_s is not None else None, nvec,
                c_g, c_s, actions, keep_weights=keep_weights)
            if keep_weights:
                attn_maps.extend(self.attention_maps())
            z_g = dd.reverse_step(z_g, z0g.data, etag.data, n, dn, rng)
            if cfg.use_semantic:
                z0s, etas = sem_out
                z_s = dd.reverse_step(z_s, z0s.data, etas.data, n, dn, rng)

        geom = self._from_diffused(z_g, hist_geom, cfg.residual_scale_geom)
        sem = self._from_diffused(z_s, hist_sem, cfg.residual_scale_sem) \
            if z_s is not None else None
        return ImaginationBatch(geom=geom, sem=sem,
                                attention=attn_maps if keep_weights else None)

    def attention_maps(self) -> list[np.ndarray]:
        """Cross-attention maps captured by the last keep_weights call, one
        (B, heads, future_tokens, future_tokens) array per cross block with
        query rows sliced to the stream's own future tokens, geometric
        denoiser first."""
        if self.cfg.interaction != "interactive" or self.den_geom is None:
            raise RuntimeError("attention export needs interactive mode")
        maps = []
        for net in (self.den_geom, self.den_sem):
            if net is None:
                continue
            lo, hi = net.future_span
            for block in net.blocks:
                if block.cross_attn is not None and block.cross_attn.last_weights is not None:
                    maps.append(block.cross_attn.last_weights[:, :, lo:hi, :])
        return maps


def export_attention(model: WorldModel, hist_geom: np.ndarray,
                     hist_sem: np.ndarray, actions: np.ndarray,
                     rng: np.random.Generator) -> list[np.ndarray]:
    """Run one imagination with weight capture and return the cross maps."""
    out = model.imagine(hist_geom, hist_sem, actions, rng, keep_weights=True)
    if not out.attention:
        raise RuntimeError("no cross-attention maps captured")
    return out.attention


# ---------------------------------------------------------------------------
# windowing helpers shared by training code
# ---------------------------------------------------------------------------

def window_starts(ep_len: int, history: int, horizon: int) -> range:
    """Valid anchor frames t: history fits behind, horizon and k+1 actions ahead."""
    return range(history - 1, ep_len - horizon)


def copy_baseline_mse(hist_geom: np.ndarray, hist_sem: np.ndarray | None,
                      future_geom: np.ndarray, future_sem: np.ndarray | None) -> float:
    """Tile the last history frame across the horizon and score it."""
    k = future_geom.shape[1]
    pred_g = np.repeat(hist_geom[:, -1:], k, axis=1)
    err = float(np.mean((pred_g - future_geom) ** 2))
    if future_sem is not None and hist_sem is not None:
        pred_s = np.repeat(hist_sem[:, -1:], k, axis=1)
        err = 0.5 * (err + float(np.mean((pred_s - future_sem) ** 2)))
    return err
