"""Imagination-guided diffusion policy.

A transformer encoder fuses task id, diffusion time, end-effector history,
pooled historical latents, and pooled imagined future latents into a memory;
a decoder denoises the (k+1)-action sequence against that memory with two
heads (clean action, noise). Inference follows the iterative refinement loop:
start from a zero action plan, imagine its consequences with the frozen world
model, re-denoise the plan conditioned on the imagination, and repeat m times
before executing the first chunk (receding horizon).

Actions are diffused in a normalized space (displacements scaled to about
unit range); raw unclipped sequences are what the policy returns, and only
execution clips them to the arena limits.

Imagination modes: "imagined" calls the world model, "copy" tiles the current
latent, "zeros" feeds zero tokens, "none" drops the imagination branch
entirely (the vanilla behavior-cloning baseline).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffusion as dd
from .encoders import EncoderParams
from .env.arena import Action, EnvConfig, ee_state, render, step
from .env.tasks import TaskSpec, sample_layout
from .nn import layers as L
from .nn import tensor as tz
from .nn.tensor import Tensor
from .world_model import WorldModel, pool_token_grid

IMAGINATION_MODES = ("imagined", "copy", "zeros", "none")


@dataclass(frozen=True)
class PolicyConfig:
    history: int = 4
    horizon: int = 6
    tokens: int = 64
    d_geom: int = 64
    d_sem: int = 64
    action_dim: int = 3
    ee_dim: int = 3
    num_tasks: int = 6
    enc_layers: int = 6
    dec_layers: int = 4
    hidden: int = 256
    heads: int = 4
    denoise_steps: int = 2
    refine_iters: int = 2
    wm_sampling_steps: int | None = None   # None = the world model's default
    imagination: str = "imagined"
    use_semantic: bool = True
    latent_pool: int = 4                   # 8x8 token grid -> 2x2 per frame
    exec_chunk: int = 1
    action_scale: tuple[float, ...] = (0.05, 0.05, 1.0)

    def __post_init__(self):
        if self.imagination not in IMAGINATION_MODES:
            raise ValueError(f"unknown imagination mode {self.imagination!r}")
        if self.refine_iters < 1:
            raise ValueError("refine_iters must be >= 1")
        if len(self.action_scale) != self.action_dim:
            raise ValueError("action_scale length must match action_dim")

    @property
    def pooled_tokens(self) -> int:
        side = int(round(self.tokens ** 0.5)) // self.latent_pool
        return side * side

    @property
    def has_imagination(self) -> bool:
        return self.imagination != "none"


POLICY_PRESETS: dict[str, dict] = {
    "paper": dict(enc_layers=6, dec_layers=4, hidden=256, heads=4),
    "desk": dict(enc_layers=3, dec_layers=2, hidden=128, heads=4),
    "study": dict(enc_layers=2, dec_layers=2, hidden=96, heads=4),
}


@dataclass
class PolicyInput:
    """Batched conditioning; latents arrive unpooled (B, frames, T, d)."""

    hist_geom: np.ndarray
    hist_sem: np.ndarray | None
    ee: np.ndarray                     # (B, l, ee_dim)
    task_ids: np.ndarray               # (B,)
    imag_geom: np.ndarray | None = None  # (B, k, T, d_geom)
    imag_sem: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.hist_geom.shape[0]


@dataclass
class DemoWindows:
    """Flattened supervised windows cut from expert demonstrations."""

    inputs: PolicyInput
    actions: np.ndarray                # (B, k+1, action_dim), raw env units


class Policy(L.Module):
    def __init__(self, cfg: PolicyConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self._dtype = dtype
        rng = np.random.default_rng(seed)
        d = cfg.hidden
        l, k, pt = cfg.history, cfg.horizon, cfg.pooled_tokens

        self.task_emb = L.Embedding(cfg.num_tasks, d, rng, dtype=dtype)
        self.time_in = L.Linear(d, d, rng, dtype=dtype)
        self.ee_in = L.Linear(cfg.ee_dim, d, rng, dtype=dtype)
        self.hist_geom_in = L.Linear(cfg.d_geom, d, rng, dtype=dtype)
        self.pos_ee = L._param(rng, (l, d), 0.02, dtype)
        self.pos_hist = L._param(rng, (l * pt, d), 0.02, dtype)
        self.hist_sem_in = None
        self.imag_geom_in = None
        self.imag_sem_in = None
        self.pos_imag = None
        if cfg.use_semantic:
            self.hist_sem_in = L.Linear(cfg.d_sem, d, rng, dtype=dtype)
        if cfg.has_imagination:
            self.imag_geom_in = L.Linear(cfg.d_geom, d, rng, dtype=dtype)
            self.pos_imag = L._param(rng, (k * pt, d), 0.02, dtype)
            if cfg.use_semantic:
                self.imag_sem_in = L.Linear(cfg.d_sem, d, rng, dtype=dtype)
        # token groups: task/time/ee/hist-geom/hist-sem/imag-geom/imag-sem
        self.type_emb = L.Embedding(7, d, rng, dtype=dtype)

        self.encoder = [L.TransformerBlock(d, cfg.heads, rng, dtype=dtype)
                        for _ in range(cfg.enc_layers)]
        self.act_in = L.Linear(cfg.action_dim, d, rng, dtype=dtype)
        self.pos_act = L._param(rng, (k + 1, d), 0.02, dtype)
        self.decoder = [L.TransformerBlock(d, cfg.heads, rng, cross=True, dtype=dtype)
                        for _ in range(cfg.dec_layers)]
        self.ln_out = L.LayerNorm(d, dtype=dtype)
        self.head_a0 = L.Linear(d, cfg.action_dim, rng, zero_init=True, dtype=dtype)
        self.head_eta = L.Linear(d, cfg.action_dim, rng, zero_init=True, dtype=dtype)

        self.scale = np.asarray(cfg.action_scale, dtype=dtype)

    # ------------------------------------------------------------------
    def _pool_flat(self, z: np.ndarray) -> np.ndarray:
        """Latents may arrive at full resolution (pooled here) or already
        pooled (training windows are stored pooled to save memory)."""
        z = np.ascontiguousarray(z, self._dtype)
        if z.shape[2] == self.cfg.pooled_tokens:
            pooled = z
        elif z.shape[2] == self.cfg.tokens:
            pooled = pool_token_grid(z, self.cfg.latent_pool)
        else:
            raise ValueError(f"unexpected token count {z.shape[2]}")
        b, f, t, d = pooled.shape
        return pooled.reshape(b, f * t, d)

    def _memory(self, inp: PolicyInput, n: np.ndarray) -> Tensor:
        cfg = self.cfg
        b = inp.size
        te = self.type_emb.table
        toks = [
            self.task_emb(np.asarray(inp.task_ids, dtype=np.int64)[:, None]) + te[0:1],
            self.time_in(Tensor(L.time_features(n, cfg.hidden, self._dtype)[:, None, :])) + te[1:2],
            self.ee_in(Tensor(np.ascontiguousarray(inp.ee, self._dtype))) + self.pos_ee + te[2:3],
            self.hist_geom_in(Tensor(self._pool_flat(inp.hist_geom))) + self.pos_hist + te[3:4],
        ]
        if cfg.use_semantic:
            if inp.hist_sem is None:
                raise ValueError("semantic history missing")
            toks.append(self.hist_sem_in(Tensor(self._pool_flat(inp.hist_sem)))
                        + self.pos_hist + te[4:5])
        if cfg.has_imagination:
            if inp.imag_geom is None:
                raise ValueError("imagination tokens required when enabled "
                                 f"(mode {cfg.imagination!r})")
            toks.append(self.imag_geom_in(Tensor(self._pool_flat(inp.imag_geom)))
                        + self.pos_imag + te[5:6])
            if cfg.use_semantic:
                if inp.imag_sem is None:
                    raise ValueError("semantic imagination missing")
                toks.append(self.imag_sem_in(Tensor(self._pool_flat(inp.imag_sem)))
                            + self.pos_imag + te[6:7])
        x = tz.concat(toks, axis=1)
        for block in self.encoder:
            x = block(x)
        return x

    def denoise_action(self, a_n: np.ndarray | Tensor, n: np.ndarray,
                       inp: PolicyInput) -> tuple[Tensor, Tensor]:
        """Two heads over the noisy normalized action sequence (B, k+1, dim)."""
        a_t = a_n if isinstance(a_n, Tensor) else Tensor(np.ascontiguousarray(a_n, self._dtype))
        memory = self._memory(inp, n)
        feats = L.time_features(n, self.cfg.hidden, self._dtype)
        x = self.act_in(a_t) + self.pos_act \
            + self.time_in(Tensor(feats[:, None, :]))
        for block in self.decoder:
            x = block(x, memory)
        h = self.ln_out(x)
        return self.head_a0(h), self.head_eta(h)

    # ------------------------------------------------------------------
    def normalize(self, actions: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(actions, self._dtype) / self.scale

    def denormalize(self, actions: np.ndarray) -> np.ndarray:
        return actions * self.scale

    def loss_given_noise(self, windows: DemoWindows, n: np.ndarray,
                         eta: np.ndarray) -> Tensor:
        a0 = self.normalize(windows.actions)
        nb = n.reshape(-1, 1, 1).astype(self._dtype)
        a_n = (1.0 - nb) * a0 + np.sqrt(nb) * eta
        a0_hat, eta_hat = self.denoise_action(a_n, n, windows.inputs)
        return tz.mse(a0_hat, Tensor(a0)) + tz.mse(eta_hat, Tensor(eta.astype(self._dtype)))

    def loss(self, windows: DemoWindows, rng: np.random.Generator) -> Tensor:
        b = windows.actions.shape[0]
        n = rng.uniform(0.0, 1.0, size=b)
        eta = rng.standard_normal(windows.actions.shape).astype(self._dtype)
        return self.loss_given_noise(windows, n, eta)

    # ------------------------------------------------------------------
    def sample_actions(self, inp: PolicyInput, rng: np.random.Generator,
                       steps: int | None = None) -> np.ndarray:
        """Diffusion-sample a normalized action sequence (B, k+1, dim)."""
        cfg = dd.DiffusionConfig(num_steps=steps or self.cfg.denoise_steps)
        b = inp.size
        shape = (b, self.cfg.horizon + 1, self.cfg.action_dim)

        def denoiser(a_n, n):
            a0_hat, eta_hat = self.denoise_action(a_n, np.full(b, n), inp)
            return a0_hat.data, eta_hat.data

        return dd.sample(denoiser, shape, cfg, rng, dtype=self._dtype)


@dataclass
class ActResult:
    actions: np.ndarray          # (B, k+1, dim) raw env units, unclipped
    imagine_calls: int
    per_iteration: list[np.ndarray] = field(default_factory=list)


def build_imagination(mode: str, wm: WorldModel | None, hist_geom, hist_sem,
                      raw_actions, rng, horizon: int,
                      sampling_steps: int | None = None):
    """The imagination tokens fed to the policy, per ablation mode."""
    if mode == "none":
        return None, None, 0
    if mode == "copy":
        geom = np.repeat(hist_geom[:, -1:], horizon, axis=1)
        sem = np.repeat(hist_sem[:, -1:], horizon, axis=1) if hist_sem is not None else None
        return geom, sem, 0
    if mode == "zeros":
        b, _, t, dg = hist_geom.shape
        geom = np.zeros((b, horizon, t, dg), dtype=hist_geom.dtype)
        sem = None
        if hist_sem is not None:
            sem = np.zeros((b, horizon, t, hist_sem.shape[-1]), dtype=hist_sem.dtype)
        return geom, sem, 0
    if wm is None:
        raise ValueError("imagined mode needs a world model")
    out = wm.imagine(hist_geom, hist_sem, raw_actions, rng,
                     sampling_steps=sampling_steps)
    return out.geom, out.sem, 1


def act(policy: Policy, wm: WorldModel | None, hist_geom: np.ndarray,
        hist_sem: np.ndarray | None, ee: np.ndarray, task_ids: np.ndarray,
        rng: np.random.Generator, refine_iters: int | None = None,
        denoise_steps: int | None = None, keep_iterations: bool = False) -> ActResult:
    """Iterative refinement: plan from zeros, imagine, re-denoise, repeat."""
    cfg = policy.cfg
    b = hist_geom.shape[0]
    m = refine_iters if refine_iters is not None else cfg.refine_iters
    a_norm = np.zeros((b, cfg.horizon + 1, cfg.action_dim), dtype=policy._dtype)
    calls = 0
    history = []
    iters = m if cfg.has_imagination else 1
    for _ in range(iters):
        imag_g, imag_s, used = build_imagination(
            cfg.imagination, wm, hist_geom, hist_sem,
            policy.denormalize(a_norm), rng, cfg.horizon,
            sampling_steps=cfg.wm_sampling_steps)
        calls += used
        inp = PolicyInput(hist_geom=hist_geom, hist_sem=hist_sem, ee=ee,
                          task_ids=task_ids, imag_geom=imag_g, imag_sem=imag_s)
        a_norm = policy.sample_actions(inp, rng, steps=denoise_steps)
        if keep_iterations:
            history.append(policy.denormalize(a_norm).copy())
    return ActResult(actions=policy.denormalize(a_norm), imagine_calls=calls,
                     per_iteration=history)


# ---------------------------------------------------------------------------
# closed-loop rollouts
# ---------------------------------------------------------------------------

@dataclass
class RolloutResult:
    success: bool
    steps: int
    imagine_calls: int


class _HistoryBuffer:
    """Rolling window of the last l encoded frames and ee states."""

    def __init__(self, length: int):
        self.length = length
        self.geom: list[np.ndarray] = []
        self.sem: list[np.ndarray] = []
        self.ee: list[np.ndarray] = []

    def push(self, z_geom, z_sem, ee):
        self.geom.append(z_geom)
        self.sem.append(z_sem)
        self.ee.append(ee)
        if len(self.geom) > self.length:
            self.geom.pop(0)
            self.sem.pop(0)
            self.ee.pop(0)

    def fill(self, z_geom, z_sem, ee):
        for _ in range(self.length):
            self.push(z_geom, z_sem, ee)

    def stacked(self):
        return (np.stack(self.geom), np.stack(self.sem), np.stack(self.ee))


def rollout(policy: Policy, wm: WorldModel | None, task: TaskSpec, seed: int,
            enc_params: EncoderParams, env_cfg: EnvConfig,
            rng: np.random.Generator, max_steps: int | None = None,
            actor=None) -> RolloutResult:
    """Single-episode closed loop; `actor` overrides the policy when given
    (callable state -> Action), which is how the expert sanity path runs."""
    results = rollout_batch(policy, wm, task, [seed], enc_params, env_cfg, rng,
                            max_steps=max_steps, actor=actor)
    return results[0]


def rollout_batch(policy: Policy | None, wm: WorldModel | None, task: TaskSpec,
                  seeds: list[int], enc_params: EncoderParams,
                  env_cfg: EnvConfig, rng: np.random.Generator,
                  max_steps: int | None = None, actor=None,
                  refine_iters: int | None = None,
                  denoise_steps: int | None = None) -> list[RolloutResult]:
    """Vectorized rollouts of one task over several layout seeds. Episodes
    that finish drop out of the batch; the policy and world model only ever
    see the still-running ones."""
    horizon = max_steps or task.horizon
    states = [sample_layout(task, s, env_cfg) for s in seeds]
    buffers = [_HistoryBuffer(policy.cfg.history if policy else 1) for _ in seeds]
    for st, buf in zip(states, buffers):
        obs = render(st, env_cfg).stacked()
        z = enc_params.encode(obs)
        buf.fill(z.geom, z.sem, ee_state(st).as_array())
    results: dict[int, RolloutResult] = {}
    active = list(range(len(seeds)))
    imagine_calls = {i: 0 for i in active}
    pending: dict[int, list[Action]] = {i: [] for i in active}

    for t in range(horizon):
        for i in list(active):
            if task.success(states[i]):
                results[i] = RolloutResult(True, t, imagine_calls[i])
                active.remove(i)
        if not active:
            break

        if actor is not None:
            for i in active:
                a = actor(states[i])
                states[i] = step(states[i], a, env_cfg)
        else:
            need = [i for i in active if not pending[i]]
            if need:
                hg = np.stack([buffers[i].stacked()[0] for i in need])
                hs = np.stack([buffers[i].stacked()[1] for i in need])
                eeb = np.stack([buffers[i].stacked()[2] for i in need])
                ids = np.full(len(need), task.task_id)
                out = act(policy, wm, hg, hs, eeb, ids, rng,
                          refine_iters=refine_iters, denoise_steps=denoise_steps)
                for j, i in enumerate(need):
                    imagine_calls[i] += out.imagine_calls
                    chunk = out.actions[j][:policy.cfg.exec_chunk]
                    pending[i] = [Action.from_array(a) for a in chunk]
            for i in active:
                a = pending[i].pop(0)
                states[i] = step(states[i], a, env_cfg)
        for i in active:
            obs = render(states[i], env_cfg).stacked()
            z = enc_params.encode(obs)
            buffers[i].push(z.geom, z.sem, ee_state(states[i]).as_array())

    for i in active:
        results[i] = RolloutResult(task.success(states[i]), horizon,
                                   imagine_calls[i])
    return [results[i] for i in range(len(seeds))]
