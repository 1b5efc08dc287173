import numpy as np
import pytest

from latentpush import nn
from latentpush.encoders import create_encoder
from latentpush.env import EnvConfig, TASK_SUITE, scripted_expert
from latentpush.nn import tensor as tz
from latentpush.policy import (
    DemoWindows,
    Policy,
    PolicyConfig,
    PolicyInput,
    act,
    build_imagination,
    rollout_batch,
)
from latentpush.world_model import WMConfig, WorldModel

PCFG = PolicyConfig(history=2, horizon=2, tokens=16, d_geom=8, d_sem=8,
                    enc_layers=1, dec_layers=1, hidden=32, heads=2,
                    latent_pool=2, num_tasks=6, denoise_steps=2)

WCFG = WMConfig(history=2, horizon=2, tokens=16, d_geom=8, d_sem=8,
                decomp_layers=1, decomp_dim=32, denoise_blocks=1,
                denoise_dim=32, heads=2, history_pool=2, sampling_steps=2)


def tiny_input(seed=0, size=3, cfg=PCFG, with_imag=True):
    rng = np.random.default_rng(seed)
    imag_g = imag_s = None
    if with_imag:
        imag_g = rng.normal(size=(size, cfg.horizon, cfg.tokens, cfg.d_geom)).astype(np.float32)
        imag_s = rng.normal(size=(size, cfg.horizon, cfg.tokens, cfg.d_sem)).astype(np.float32)
    return PolicyInput(
        hist_geom=rng.normal(size=(size, cfg.history, cfg.tokens, cfg.d_geom)).astype(np.float32),
        hist_sem=rng.normal(size=(size, cfg.history, cfg.tokens, cfg.d_sem)).astype(np.float32),
        ee=rng.normal(size=(size, cfg.history, cfg.ee_dim)).astype(np.float32),
        task_ids=rng.integers(0, cfg.num_tasks, size=size),
        imag_geom=imag_g, imag_sem=imag_s,
    )


def randomize_heads(model, seed=77):
    rng = np.random.default_rng(seed)
    for name, p in model.parameters().items():
        if ("head_a0" in name or "head_eta" in name) and name.endswith("weight"):
            p.data = rng.normal(0, 0.1, size=p.shape).astype(p.data.dtype)


def test_config_validation():
    with pytest.raises(ValueError):
        PolicyConfig(imagination="psychic")
    with pytest.raises(ValueError):
        PolicyConfig(refine_iters=0)
    with pytest.raises(ValueError):
        PolicyConfig(action_scale=(1.0,))


def test_two_heads_output_action_shape():
    pol = Policy(PCFG, seed=0)
    inp = tiny_input()
    a_n = np.zeros((3, PCFG.horizon + 1, PCFG.action_dim), dtype=np.float32)
    a0, eta = pol.denoise_action(a_n, np.full(3, 0.5), inp)
    assert a0.shape == (3, PCFG.horizon + 1, PCFG.action_dim)
    assert eta.shape == a0.shape


def test_missing_imagination_raises():
    pol = Policy(PCFG, seed=0)
    inp = tiny_input(with_imag=False)
    a_n = np.zeros((3, PCFG.horizon + 1, PCFG.action_dim), dtype=np.float32)
    with pytest.raises(ValueError):
        pol.denoise_action(a_n, np.full(3, 0.5), inp)


def test_imagination_sensitivity():
    pol = Policy(PCFG, seed=0)
    randomize_heads(pol)
    inp = tiny_input(seed=1)
    a_n = np.zeros((3, PCFG.horizon + 1, PCFG.action_dim), dtype=np.float32)
    out1, _ = pol.denoise_action(a_n, np.full(3, 0.5), inp)
    zeroed = PolicyInput(inp.hist_geom, inp.hist_sem, inp.ee, inp.task_ids,
                         np.zeros_like(inp.imag_geom), np.zeros_like(inp.imag_sem))
    out2, _ = pol.denoise_action(a_n, np.full(3, 0.5), zeroed)
    assert not np.allclose(out1.data, out2.data)


def test_bc_mode_has_no_imagination_branch():
    cfg = PolicyConfig(**{**PCFG.__dict__, "imagination": "none"})
    pol = Policy(cfg, seed=0)
    names = pol.parameters().keys()
    assert not any("imag" in n for n in names)
    inp = tiny_input(with_imag=False)
    a_n = np.zeros((3, cfg.horizon + 1, cfg.action_dim), dtype=np.float32)
    a0, eta = pol.denoise_action(a_n, np.full(3, 0.5), inp)
    assert a0.shape == (3, cfg.horizon + 1, cfg.action_dim)


def test_loss_zero_for_oracle_and_closed_form_for_zero_predictions():
    # zero-init heads predict zeros; with zero actions and zero noise that is
    # the oracle (loss 0); with unit actions the loss is |a|^2 + |eta|^2 means
    pol = Policy(PCFG, seed=0)
    size = 2
    inp = tiny_input(size=size)
    zeros = DemoWindows(inputs=inp, actions=np.zeros((size, 3, 3), dtype=np.float32))
    n = np.full(size, 0.4)
    eta0 = np.zeros((size, 3, 3), dtype=np.float32)
    assert pol.loss_given_noise(zeros, n, eta0).item() == pytest.approx(0.0)

    acts = np.ones((size, 3, 3), dtype=np.float32) * pol.scale  # unit normalized
    eta = np.random.default_rng(0).standard_normal((size, 3, 3)).astype(np.float32)
    loss = pol.loss_given_noise(DemoWindows(inputs=inp, actions=acts), n, eta)
    assert loss.item() == pytest.approx(1.0 + float(np.mean(eta ** 2)), rel=1e-5)


def test_decoder_gradients_match_finite_differences():
    cfg = PolicyConfig(history=2, horizon=1, tokens=4, d_geom=4, d_sem=4,
                       enc_layers=1, dec_layers=1, hidden=16, heads=2,
                       latent_pool=1, num_tasks=3)
    pol = Policy(cfg, seed=1, dtype=np.float64)
    rng = np.random.default_rng(2)
    size = 2
    inp = PolicyInput(
        hist_geom=rng.normal(size=(size, 2, 4, 4)),
        hist_sem=rng.normal(size=(size, 2, 4, 4)),
        ee=rng.normal(size=(size, 2, 3)),
        task_ids=np.array([0, 2]),
        imag_geom=rng.normal(size=(size, 1, 4, 4)),
        imag_sem=rng.normal(size=(size, 1, 4, 4)),
    )
    windows = DemoWindows(inputs=inp, actions=rng.normal(size=(size, 2, 3)) * 0.05)
    n = rng.uniform(0.2, 0.8, size=size)
    eta = rng.standard_normal((size, 2, 3))

    params = {k: v for k, v in pol.parameters().items()
              if k.startswith(("decoder", "head_", "act_in", "ln_out"))}
    report = nn.finite_diff_check(
        lambda: pol.loss_given_noise(windows, n, eta),
        params, np.random.default_rng(3), num_entries=48, h=1e-4)
    assert report.ok, [f"{e.name}{e.index}: {e.rel_error:.2e}" for e in report.failures]


def test_training_reduces_validation_mse():
    rng = np.random.default_rng(4)
    pol = Policy(PCFG, seed=3)
    inp = tiny_input(seed=5, size=16)
    target = rng.normal(size=(16, 3, 3)).astype(np.float32) * 0.04
    windows = DemoWindows(inputs=inp, actions=target)
    opt = nn.Adam(pol.parameters(), lr=2e-3)

    def val_mse():
        out = pol.sample_actions(windows.inputs, np.random.default_rng(0))
        return float(np.mean((pol.denormalize(out) - target) ** 2))

    before = val_mse()
    for _ in range(200):
        opt.zero_grad()
        with tz.Tape() as tape:
            loss = pol.loss(windows, rng)
        tape.backward(loss)
        opt.step()
    after = val_mse()
    assert after * 5.0 <= before, f"{before} -> {after}"


def test_act_determinism_and_iteration_sensitivity():
    pol = Policy(PCFG, seed=0)
    randomize_heads(pol)
    wm = WorldModel(WCFG, seed=0)
    inp = tiny_input(seed=6)
    r1 = act(pol, wm, inp.hist_geom, inp.hist_sem, inp.ee, inp.task_ids,
             np.random.default_rng(9))
    r2 = act(pol, wm, inp.hist_geom, inp.hist_sem, inp.ee, inp.task_ids,
             np.random.default_rng(9))
    assert np.array_equal(r1.actions, r2.actions)
    assert r1.imagine_calls == 2  # refine_iters default
    r3 = act(pol, wm, inp.hist_geom, inp.hist_sem, inp.ee, inp.task_ids,
             np.random.default_rng(9), refine_iters=1)
    assert r3.imagine_calls == 1
    assert not np.array_equal(r1.actions, r3.actions)


def test_act_mode_none_never_touches_wm():
    cfg = PolicyConfig(**{**PCFG.__dict__, "imagination": "none"})
    pol = Policy(cfg, seed=0)
    inp = tiny_input(with_imag=False)
    res = act(pol, None, inp.hist_geom, inp.hist_sem, inp.ee, inp.task_ids,
              np.random.default_rng(0))
    assert res.imagine_calls == 0
    assert res.actions.shape == (3, cfg.horizon + 1, cfg.action_dim)


def test_copy_and_zeros_imagination_modes():
    hist_g = np.random.default_rng(0).normal(size=(2, 2, 16, 8)).astype(np.float32)
    hist_s = np.random.default_rng(1).normal(size=(2, 2, 16, 8)).astype(np.float32)
    geom, sem, calls = build_imagination("copy", None, hist_g, hist_s, None,
                                         None, horizon=3)
    assert calls == 0
    assert geom.shape == (2, 3, 16, 8)
    assert np.array_equal(geom[:, 0], hist_g[:, -1])
    geom, sem, calls = build_imagination("zeros", None, hist_g, hist_s, None,
                                         None, horizon=3)
    assert calls == 0 and geom.sum() == 0 and sem.sum() == 0


def test_rollout_expert_actor_succeeds_and_random_policy_fails():
    env_cfg = EnvConfig()
    enc = create_encoder(seed=1)
    task = TASK_SUITE[1]
    pcfg = PolicyConfig(enc_layers=1, dec_layers=1, hidden=32, heads=2,
                        denoise_steps=1, refine_iters=1, imagination="none")
    pol = Policy(pcfg, seed=0)
    rng = np.random.default_rng(0)
    res = rollout_batch(pol, None, task, [0, 1], enc, env_cfg, rng,
                        actor=lambda s: scripted_expert(s, task, env_cfg).action)
    assert all(r.success for r in res)
    # untrained policy: zero-init heads mean near-zero actions, no success
    res = rollout_batch(pol, None, task, [0, 1], enc, env_cfg, rng, max_steps=15)
    assert not any(r.success for r in res)
    assert all(r.imagine_calls == 0 for r in res)
