import numpy as np
import pytest

from latentpush import harness as H
from latentpush.encoders import PixelCodec, create_encoder
from latentpush.env import EnvConfig, collect_demos, generate_clips
from latentpush.harness.cli import main as cli_main
from latentpush.policy import Policy, PolicyConfig
from latentpush.world_model import WMConfig, WorldModel

STUDY_WM = dict(decomp_layers=1, decomp_dim=32, denoise_blocks=1,
                denoise_dim=32, heads=2, mlp_ratio=2, history_pool=4,
                history=4, horizon=6, sampling_steps=2)


@pytest.fixture(scope="module")
def enc():
    return create_encoder(seed=11)


@pytest.fixture(scope="module")
def clips():
    return H.PackedClips.from_dataset(generate_clips(6, 12, seed=3))


# -- config ------------------------------------------------------------------

def test_config_parse_round_trip(tmp_path):
    cfg = H.ExperimentConfig()
    cfg.set("wm", "train_steps", 42)
    text = cfg.serialize()
    again = H.ExperimentConfig.parse(text)
    assert again.get_int("wm", "train_steps") == 42
    assert again.hash() == cfg.hash()
    cfg.set("wm", "train_steps", 43)
    assert again.hash() != cfg.hash()


def test_config_rejects_malformed():
    with pytest.raises(ValueError):
        H.ExperimentConfig.parse("key_without_section=1")
    with pytest.raises(ValueError):
        H.ExperimentConfig.parse("[s]\nnot a pair")


def test_config_builds_module_configs():
    cfg = H.ExperimentConfig()
    wm_cfg = cfg.wm_config()
    assert wm_cfg.interaction == "interactive"
    p_cfg = cfg.policy_config()
    assert p_cfg.horizon == wm_cfg.horizon


# -- checkpoints ---------------------------------------------------------------

def test_checkpoint_round_trip_bit_exact(tmp_path):
    wm = WorldModel(WMConfig(**STUDY_WM), seed=1)
    echo = H.pack_config_echo(wm.cfg, H.ExperimentConfig().serialize())
    path = tmp_path / "wm.ckpt"
    H.save_checkpoint(path, "world-model", echo, wm.state())
    first = path.read_bytes()
    kind, echo2, params = H.load_checkpoint(path)
    assert kind == "world-model"
    cfg2, _ = H.unpack_config_echo(WMConfig, echo2)
    assert cfg2 == wm.cfg
    wm2 = WorldModel(cfg2, seed=99)
    wm2.load_state(params)
    for k, v in wm.state().items():
        assert np.array_equal(v, wm2.state()[k])
    H.save_checkpoint(path, "world-model", echo2, wm2.state())
    assert path.read_bytes() == first  # save -> load -> save identical bytes


def test_checkpoint_version_and_magic_errors(tmp_path):
    wm = WorldModel(WMConfig(**STUDY_WM), seed=1)
    path = tmp_path / "wm.ckpt"
    H.save_checkpoint(path, "world-model", "echo", wm.state())
    raw = bytearray(path.read_bytes())
    raw[4] = 99  # version byte
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(raw))
    with pytest.raises(H.CheckpointError, match="version"):
        H.load_checkpoint(bad)
    bad.write_bytes(b"NOPE" + bytes(raw[4:]))
    with pytest.raises(H.CheckpointError, match="magic"):
        H.load_checkpoint(bad)
    with pytest.raises(H.CheckpointError, match="missing"):
        H.load_checkpoint(tmp_path / "absent.ckpt")


def test_policy_config_echo_round_trip():
    pcfg = PolicyConfig(enc_layers=1, dec_layers=1, hidden=32, heads=2,
                        wm_sampling_steps=3, imagination="copy")
    echo = H.pack_config_echo(pcfg, "x=1")
    back, exp = H.unpack_config_echo(PolicyConfig, echo)
    assert back == pcfg
    assert exp == "x=1"


# -- results ---------------------------------------------------------------

def test_result_table_round_trip(tmp_path):
    t = H.ResultTable(meta={"config_hash": "abc"})
    t.add("clips250", "heldout_mse", 0.5, 0.01, 3)
    t.add("trend", "nonincreasing_pairs", 2)
    text = t.to_csv()
    back = H.ResultTable.from_csv(text)
    assert back.meta["config_hash"] == "abc"
    assert back.value("clips250", "heldout_mse") == 0.5
    assert back.to_csv() == text


# -- pca ---------------------------------------------------------------

def test_pca_identical_samples_degenerate():
    out = H.pca_project(np.ones((5, 3)))
    assert out.degenerate
    assert np.all(out.coords == 0)


def test_pca_line_explains_everything():
    t = np.linspace(-1, 1, 7)
    samples = np.stack([2 * t, -t, 0.5 * t], axis=1)
    out = H.pca_project(samples)
    assert out.explained[0] == pytest.approx(1.0)
    assert out.explained[1] == pytest.approx(0.0, abs=1e-12)


def test_pca_matches_gram_eigendecomposition_oracle():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(10, 3))
    out = H.pca_project(x, components=2)
    centered = x - x.mean(axis=0)
    evals, evecs = np.linalg.eigh(centered.T @ centered)
    order = np.argsort(evals)[::-1]
    for j in range(2):
        ref = centered @ evecs[:, order[j]]
        i = np.argmax(np.abs(ref))
        if ref[i] < 0:
            ref = -ref
        assert np.allclose(np.abs(out.coords[:, j]), np.abs(ref), atol=1e-5)
        assert np.allclose(out.coords[:, j], ref, atol=1e-5)


def test_pca_sign_convention_deterministic():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(8, 4))
    a = H.pca_project(x)
    b = H.pca_project(x)
    assert np.array_equal(a.coords, b.coords)
    assert a.coords[np.argmax(np.abs(a.coords[:, 0])), 0] > 0


# -- training machinery ------------------------------------------------------

def test_pack_unpack_observations_lossless(clips):
    rng = np.random.default_rng(0)
    ds = generate_clips(2, 12, seed=5)
    obs = ds.episodes[0].observations
    packed = H.pack_observations(obs)
    assert packed.dtype == np.uint8
    assert np.array_equal(H.unpack_observations(packed), obs)
    with pytest.raises(ValueError):
        H.pack_observations(obs + 0.1)


def test_gather_wm_batch_shapes(clips, enc):
    cfg = WMConfig(**STUDY_WM)
    wb = H.gather_wm_batch(clips, enc, cfg, np.array([0, 1]), np.array([3, 4]))
    assert wb.hist_geom.shape == (2, 4, 64, 64)
    assert wb.future_geom.shape == (2, 6, 64, 64)
    assert wb.actions.shape == (2, 7, 3)
    # window content lines up with the raw episode actions
    ep = clips.actions[1]
    assert np.array_equal(wb.actions[1], ep[4:11])


def test_train_world_model_descends(clips, enc):
    model = WorldModel(WMConfig(**STUDY_WM), seed=0)
    res = H.train_world_model(model, clips, enc, steps=12, batch=4, lr=2e-3,
                              seed=0)
    assert np.mean(res.losses[-4:]) < np.mean(res.losses[:4])


def test_train_world_model_deterministic(clips, enc):
    losses = []
    for _ in range(2):
        model = WorldModel(WMConfig(**STUDY_WM), seed=0)
        res = H.train_world_model(model, clips, enc, steps=4, batch=4,
                                  lr=1e-3, seed=0)
        losses.append(res.losses)
    assert losses[0] == losses[1]


def test_heldout_mse_reports_copy_baseline(clips, enc):
    model = WorldModel(WMConfig(**STUDY_WM), seed=0)
    scores = H.heldout_wm_mse(model, clips, enc, seed=1, num_windows=8)
    assert scores["copy_mse"] > 0
    assert scores["model_mse"] > 0
    assert scores["geom_mse"] > 0


def test_pixel_codec_pipeline(clips):
    codec = PixelCodec()
    cfg = WMConfig(**{**STUDY_WM, "d_geom": codec.d_geom, "use_semantic": False,
                      "interaction": "none"})
    model = WorldModel(cfg, seed=0)
    res = H.train_world_model(model, clips, codec, steps=3, batch=2, lr=1e-3,
                              seed=0)
    assert len(res.losses) == 3
    scores = H.heldout_wm_mse(model, clips, codec, seed=0, num_windows=4)
    assert np.isfinite(scores["model_mse"])


def test_build_demo_windows_and_policy_training(enc):
    demos = collect_demos(1, seed=2)
    pcfg = PolicyConfig(enc_layers=1, dec_layers=1, hidden=32, heads=2,
                        imagination="copy", denoise_steps=1, refine_iters=1)
    windows = H.build_demo_windows(demos, enc, None, pcfg, seed=0)
    n = windows.actions.shape[0]
    assert n == sum(ep.length for ep in demos.episodes)
    assert windows.inputs.imag_geom.shape == (n, 6, pcfg.pooled_tokens, 64)
    policy = Policy(pcfg, seed=0)
    res = H.train_policy(policy, windows, steps=12, batch=8, lr=2e-3, seed=0)
    assert np.mean(res.losses[-4:]) < np.mean(res.losses[:4])


def test_evaluate_policy_serial_equals_parallel(enc):
    pcfg = PolicyConfig(enc_layers=1, dec_layers=1, hidden=32, heads=2,
                        imagination="none", denoise_steps=1, refine_iters=1)
    policy = Policy(pcfg, seed=0)
    kw = dict(rollouts=2, eval_seeds=(0, 1), max_steps=4)
    serial = H.evaluate_policy(policy, None, enc, EnvConfig(), workers=1, **kw)
    parallel = H.evaluate_policy(policy, None, enc, EnvConfig(), workers=2, **kw)
    assert [c.__dict__ for c in serial.cells] == [c.__dict__ for c in parallel.cells]


# -- studies -----------------------------------------------------------------

def test_scaling_study_degenerate_equal_sizes(clips, enc):
    cfg = WMConfig(**STUDY_WM)
    table = H.run_scaling_study(clips, clips, enc, cfg, sizes=(6, 6),
                                seeds=(0,), steps=2, batch=2, lr=1e-3,
                                log=lambda *a: None)
    a = table.value("clips6", "heldout_mse")
    rows = [r for r in table.rows if r["metric"] == "heldout_mse"]
    assert len(rows) == 2
    assert rows[0]["value"] == rows[1]["value"] == a


def test_ablation_matrix_complete(clips, enc):
    cfg = WMConfig(**STUDY_WM)
    table = H.run_ablation_matrix(clips, clips, enc, cfg, seeds=(0,),
                                  steps=2, batch=2, lr=1e-3,
                                  log=lambda *a: None)
    assert table.experiments() == list(H.ABLATION_VARIANTS)
    for variant in H.ABLATION_VARIANTS:
        assert any(r["experiment"] == variant and r["metric"] == "heldout_mse"
                   for r in table.rows)


def test_ablation_config_mapping():
    from latentpush.harness.studies import ablation_wm_config
    base = WMConfig(**STUDY_WM)
    assert ablation_wm_config(base, "full") == base
    assert ablation_wm_config(base, "no_semantic_stream").use_semantic is False
    assert ablation_wm_config(base, "concat_interaction").interaction == "concat"
    assert ablation_wm_config(base, "noisy_interaction").clean_interaction is False
    assert ablation_wm_config(base, "no_diffusion").mode == "regression"
    assert ablation_wm_config(base, "copy_model") is None
    with pytest.raises(ValueError):
        ablation_wm_config(base, "mystery")


# -- cli ---------------------------------------------------------------------

def test_cli_gen_data_deterministic(tmp_path):
    args = ["gen-data", "--kind", "clips", "--clips", "3", "--length", "12",
            "--seed", "9"]
    assert cli_main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli_main(args + ["--out", str(tmp_path / "b")]) == 0
    from latentpush.env.dataset import dataset_hash
    assert dataset_hash(tmp_path / "a") == dataset_hash(tmp_path / "b")


def test_cli_eval_missing_checkpoint_errors(tmp_path, capsys):
    rc = cli_main(["eval", "--policy", str(tmp_path / "nope.ckpt"),
                   "--out", str(tmp_path / "eval.csv")])
    assert rc == 1
    assert "missing checkpoint" in capsys.readouterr().err


def test_cli_unknown_subcommand():
    with pytest.raises(SystemExit):
        cli_main(["definitely-not-a-command"])


def test_cli_plot_round_trip(tmp_path):
    table = H.ResultTable()
    table.add("clips250", "heldout_mse", 1.0, 0.1, 3)
    table.add("clips500", "heldout_mse", 0.8, 0.1, 3)
    csv_path = tmp_path / "t.csv"
    table.save(csv_path)
    rc = cli_main(["plot", "--csv", str(csv_path), "--metric", "heldout_mse",
                   "--out", str(tmp_path / "t.svg")])
    assert rc == 0
    assert (tmp_path / "t.svg").read_text().startswith("<?xml")
    # emitting the plot does not alter the numbers
    assert H.ResultTable.load(csv_path).value("clips250", "heldout_mse") == 1.0
