import numpy as np
import pytest

from prefplan.data import (
    DataError,
    Dataset,
    build_feedback,
    collect,
    default_grid,
    load_feedback,
    mix_noise,
    sample_pairs,
    save_feedback,
    segment_dataset,
    synthetic_label,
)
from prefplan.env import default_schema
from prefplan.numerics import file_sha256


@pytest.fixture(scope="module")
def small_ds():
    return collect(grid=default_grid()[::7], steps_per_policy=128, seed=3, episodes_per_policy=1)


def test_default_grid_size():
    grid = default_grid()
    assert len(grid) == 35
    assert (3.0, 1.0) in grid and (-3.0, 0.0) in grid


def test_collect_sizes(small_ds):
    assert small_ds.n_rollouts == 5
    assert small_ds.n_transitions == 5 * 128


def test_collect_full_grid_transition_count():
    ds = collect(steps_per_policy=64, seed=0, episodes_per_policy=1)
    assert ds.n_rollouts == 35
    assert ds.n_transitions == 35 * 64  # 3000 steps/policy in production = 105k


def test_collect_deterministic_bytes(tmp_path):
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    collect(grid=default_grid()[:4], steps_per_policy=64, seed=7, episodes_per_policy=1).save(p1)
    collect(grid=default_grid()[:4], steps_per_policy=64, seed=7, episodes_per_policy=1).save(p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert file_sha256(p1) == file_sha256(p2)


def test_collect_seed_changes_data(tmp_path):
    d1 = collect(grid=default_grid()[:2], steps_per_policy=64, seed=1, episodes_per_policy=1)
    d2 = collect(grid=default_grid()[:2], steps_per_policy=64, seed=2, episodes_per_policy=1)
    assert not np.array_equal(d1.states, d2.states)


def test_dataset_round_trip(tmp_path, small_ds):
    path = tmp_path / "ds.bin"
    small_ds.save(path)
    loaded = Dataset.load(path)
    np.testing.assert_array_equal(loaded.states, small_ds.states)
    np.testing.assert_array_equal(loaded.actions, small_ds.actions)
    np.testing.assert_array_equal(loaded.is_noise, small_ds.is_noise)
    assert loaded.env_config == small_ds.env_config


def test_mix_noise_proportions(small_ds):
    noisy = mix_noise(small_ds, 0.5, seed=3)
    assert noisy.n_rollouts == 10
    assert noisy.is_noise.sum() == 5
    np.testing.assert_array_equal(noisy.states[:5], small_ds.states)

    ds20 = collect(grid=default_grid(), steps_per_policy=8, seed=0, noise_fraction=0.2, episodes_per_policy=1)
    frac = ds20.is_noise.sum() / ds20.n_rollouts
    assert abs(frac - 0.2) < 0.01
    assert np.isnan(ds20.policy_params[ds20.is_noise]).all()


def test_mix_noise_rejects_bad_fraction(small_ds):
    with pytest.raises(DataError):
        mix_noise(small_ds, 0.0, seed=0)
    with pytest.raises(DataError):
        mix_noise(small_ds, 1.0, seed=0)


def test_segment_counts(small_ds):
    segs = segment_dataset(small_ds, H=32)
    assert len(segs) == 5 * (128 // 32)
    # 3000-step rollouts at H=32 give floor(3000/32) = 93 windows
    assert 3000 // 32 == 93


def test_segment_windows_do_not_straddle_rollouts(small_ds):
    segs = segment_dataset(small_ds, H=32)
    for i in range(len(segs)):
        r, start = segs.meta[i]
        np.testing.assert_array_equal(segs.states[i], small_ds.states[r, start:start + 32])
        assert start + 32 <= small_ds.rollout_len


def test_segment_remainder_dropped():
    ds = collect(grid=default_grid()[:2], steps_per_policy=31, seed=0, episodes_per_policy=1)
    with pytest.raises(DataError):
        segment_dataset(ds, H=32)
    ds64 = collect(grid=default_grid()[:1], steps_per_policy=64, seed=0, episodes_per_policy=1)
    ds96 = collect(grid=default_grid()[:1], steps_per_policy=96, seed=0, episodes_per_policy=1)
    assert len(segment_dataset(ds64, 32)) + len(segment_dataset(ds96, 32)) == 2 + 3


def test_sample_pairs_basics():
    pairs = sample_pairs(2, 1, seed=0)
    assert sorted(pairs[0].tolist()) == [0, 1]
    with pytest.raises(DataError):
        sample_pairs(1, 1, seed=0)
    with pytest.raises(DataError):
        sample_pairs(4, 7, seed=0)  # capacity C(4,2) = 6


def test_sample_pairs_distinct_and_deterministic():
    p1 = sample_pairs(50, 200, seed=9)
    p2 = sample_pairs(50, 200, seed=9)
    np.testing.assert_array_equal(p1, p2)
    assert (p1[:, 0] != p1[:, 1]).all()
    keys = {tuple(sorted(p)) for p in p1.tolist()}
    assert len(keys) == 200


def test_synthetic_label_rules():
    u_a = np.array([0.9, 0.2, 0.1])
    u_b = np.array([0.3, 0.2, 0.4])
    labels = synthetic_label(u_a, u_b, equal_band=0.05)
    np.testing.assert_array_equal(labels, [[1, 0], [0.5, 0.5], [0, 1]])


def test_synthetic_label_exact_tie():
    u = np.array([0.4, 0.4])
    np.testing.assert_array_equal(synthetic_label(u, u.copy(), 0.05),
                                  [[0.5, 0.5], [0.5, 0.5]])


def test_synthetic_label_zero_band():
    labels = synthetic_label(np.array([0.3, 0.6]), np.array([0.31, 0.59]), equal_band=0.0)
    assert not (labels == 0.5).any()


def test_synthetic_label_antisymmetry():
    rng = np.random.default_rng(2)
    for _ in range(50):
        u_a, u_b = rng.random(3), rng.random(3)
        ab = synthetic_label(u_a, u_b, 0.05)
        ba = synthetic_label(u_b, u_a, 0.05)
        np.testing.assert_array_equal(ab, ba[:, ::-1])


def test_feedback_round_trip(tmp_path, small_ds):
    schema = default_schema()
    segs = segment_dataset(small_ds, H=32)
    pairs = sample_pairs(len(segs), 12, seed=1)
    records = build_feedback(segs, pairs, schema, equal_band=0.05)
    path = tmp_path / "fb.jsonl"
    save_feedback(path, records, {"dataset_sha256": "abc123"})
    loaded, header = load_feedback(path)
    assert header["dataset_sha256"] == "abc123"
    assert len(loaded) == len(records)
    for a, b in zip(records, loaded):
        assert (a.seg_a, a.seg_b) == (b.seg_a, b.seg_b)
        np.testing.assert_array_equal(a.labels, b.labels)


def test_feedback_truncation_detected(tmp_path, small_ds):
    schema = default_schema()
    segs = segment_dataset(small_ds, H=32)
    records = build_feedback(segs, sample_pairs(len(segs), 5, seed=1), schema)
    path = tmp_path / "fb.jsonl"
    save_feedback(path, records, {})
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(DataError):
        load_feedback(path)


def test_collect_splits_policies_into_episodes():
    ds = collect(grid=default_grid()[:3], steps_per_policy=120, seed=1, episodes_per_policy=4)
    assert ds.n_rollouts == 12
    assert ds.rollout_len == 30
    assert ds.n_transitions == 3 * 120
    # all episodes of one controller share its parameters
    np.testing.assert_array_equal(ds.policy_params[0], ds.policy_params[3])
    with pytest.raises(DataError):
        collect(grid=default_grid()[:1], steps_per_policy=100, episodes_per_policy=7)
