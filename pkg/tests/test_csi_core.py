import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st, HealthCheck

from airfi.csi_core import (
    SAMPLE_SHAPE, ChecksumError, CsiSample, Dataset, MalformedManifestError, MissingFileError, NonFiniteError,
    NormStats, ShapeMismatchError, SplitPlan, compute_norm_stats, downsample_packets, load_dataset,
    normalize_dataset, normalize_sample, save_dataset, split_leave_one_env,
)

from conftest import random_dataset


def test_empty_manifest_keeps_num_classes(tmp_path):
    empty = Dataset(np.zeros((0,) + SAMPLE_SHAPE, np.float32), [], [], num_classes=8)
    path = save_dataset(empty, tmp_path)
    assert json.loads(path.read_text())["samples"] == []
    loaded = load_dataset(path)
    assert len(loaded) == 0
    assert loaded.num_classes == 8


def test_single_sample_round_trip(tmp_path, rng):
    amp = rng.normal(size=SAMPLE_SHAPE).astype(np.float32)
    ds = Dataset.from_samples([CsiSample(amp, 3, 1)], num_classes=8)
    loaded = load_dataset(save_dataset(ds, tmp_path))
    assert len(loaded) == 1
    s = loaded[0]
    assert (s.label, s.env_id) == (3, 1)
    assert s.amplitude.tobytes() == amp.tobytes()


def test_manifest_directory_or_file(tmp_path, small_dataset):
    path = save_dataset(small_dataset, tmp_path)
    assert load_dataset(tmp_path).equals(load_dataset(path))


@settings(max_examples=50, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 4))
def test_round_trip_property(tmp_path_factory, seed, n):
    ds = random_dataset(np.random.default_rng(seed), n)
    d = tmp_path_factory.mktemp("rt")
    loaded = load_dataset(save_dataset(ds, d))
    assert loaded.equals(ds)
    assert loaded.sample_checksums() == ds.sample_checksums()


def test_raw_2000_packets_downsampled_on_load(tmp_path, rng):
    raw = rng.normal(size=(114, 3, 2000)).astype("<f4")
    (tmp_path / "a.f32").write_bytes(raw.tobytes())
    manifest = {"version": 1, "num_classes": 2,
                "samples": [{"file": "a.f32", "label": 1, "env_id": 0, "raw_len": 2000}]}
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    loaded = load_dataset(tmp_path)
    np.testing.assert_array_equal(loaded[0].amplitude, raw[:, :, ::4])


def _write_one(tmp_path, data: bytes, **entry):
    (tmp_path / "a.f32").write_bytes(data)
    e = {"file": "a.f32", "label": 0, "env_id": 0, "raw_len": 500}
    e.update(entry)
    (tmp_path / "manifest.json").write_text(json.dumps({"version": 1, "num_classes": 2, "samples": [e]}))


def test_error_kinds_are_distinct(tmp_path):
    with pytest.raises(MissingFileError):
        load_dataset(tmp_path / "nowhere")

    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(MalformedManifestError):
        load_dataset(tmp_path)

    good = np.zeros(SAMPLE_SHAPE, "<f4").tobytes()
    _write_one(tmp_path, good[:-4])
    with pytest.raises(ShapeMismatchError):
        load_dataset(tmp_path)

    bad = np.zeros(SAMPLE_SHAPE, "<f4")
    bad[0, 0, 0] = np.nan
    _write_one(tmp_path, bad.tobytes())
    with pytest.raises(NonFiniteError):
        load_dataset(tmp_path)

    _write_one(tmp_path, good, label=5)
    with pytest.raises(MalformedManifestError):
        load_dataset(tmp_path)

    _write_one(tmp_path, good)
    (tmp_path / "a.f32").unlink()
    with pytest.raises(MissingFileError):
        load_dataset(tmp_path)

    codes = {MissingFileError.code, MalformedManifestError.code, ShapeMismatchError.code,
             NonFiniteError.code, ChecksumError.code}
    assert len(codes) == 5


def test_checksum_detects_tampering(tmp_path, small_dataset):
    save_dataset(small_dataset, tmp_path)
    f = tmp_path / "samples" / "000003.f32"
    data = bytearray(f.read_bytes())
    data[100] ^= 0xFF
    f.write_bytes(bytes(data))
    with pytest.raises(ChecksumError):
        load_dataset(tmp_path)


# -- downsampling -------------------------------------------------------------

def test_downsample_constant():
    out = downsample_packets(np.full((114, 3, 2000), 5.0))
    assert out.shape == (114, 3, 500)
    assert np.all(out == 5.0)


def test_downsample_ramp():
    raw = np.broadcast_to(np.arange(2000.0), (114, 3, 2000))
    out = downsample_packets(raw)
    np.testing.assert_array_equal(out[7, 2], 4 * np.arange(500.0))


def test_downsample_matches_index_loop(rng):
    raw = rng.normal(size=(114, 3, 2000))
    out = downsample_packets(raw)
    expected = np.empty((114, 3, 500))
    for s in range(114):
        for a in range(3):
            for t in range(500):
                expected[s, a, t] = raw[s, a, 4 * t]
    np.testing.assert_array_equal(out, expected)


def test_downsample_rejects_bad_shapes():
    with pytest.raises(ShapeMismatchError):
        downsample_packets(np.zeros((114, 3, 1999)))
    with pytest.raises(ShapeMismatchError):
        downsample_packets(np.zeros((100, 3, 2000)))


# -- normalization --------------------------------------------------------------

def test_normalize_identity_stats(rng):
    s = CsiSample(rng.normal(size=SAMPLE_SHAPE).astype(np.float32), 2, 1)
    out = normalize_sample(s, NormStats.identity())
    np.testing.assert_array_equal(out.amplitude, s.amplitude)
    assert (out.label, out.env_id) == (2, 1)


def test_normalize_own_mean_gives_zero(rng):
    mean = rng.normal(size=114).astype(np.float32)
    amp = np.broadcast_to(mean[:, None, None], SAMPLE_SHAPE).copy()
    out = normalize_sample(CsiSample(amp, 0, 0), NormStats(mean, np.ones(114)))
    assert np.all(out.amplitude == 0)


def test_normalize_matches_scalar_loop(rng):
    amp = rng.normal(3.0, 2.0, size=SAMPLE_SHAPE).astype(np.float32)
    stats = NormStats(rng.normal(size=114), rng.uniform(0.5, 2.0, size=114))
    out = normalize_sample(CsiSample(amp, 0, 0), stats).amplitude
    sub = rng.choice(114, 10, replace=False)
    for s in sub:
        for a in range(3):
            for t in range(0, 500, 37):
                want = (float(amp[s, a, t]) - float(stats.mean[s])) / float(stats.std[s])
                assert out[s, a, t] == pytest.approx(want, rel=1e-6, abs=1e-6)


def test_std_floor():
    stats = NormStats(np.zeros(114), np.zeros(114))
    assert np.all(stats.std == np.float32(1e-8))


def test_stats_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        NormStats(np.zeros(10), np.ones(10))


def test_normalization_idempotent(rng):
    ds = random_dataset(rng, 6)
    ds = Dataset(ds.amplitudes * 3 + 2, ds.labels, ds.sample_envs, ds.num_classes)
    once = normalize_dataset(ds, compute_norm_stats(ds))
    twice = normalize_dataset(once, compute_norm_stats(once))
    assert np.max(np.abs(twice.amplitudes - once.amplitudes)) < 1e-6


def test_pooled_stats_equal_concatenated(rng):
    a, b = random_dataset(rng, 3), random_dataset(rng, 4)
    from airfi.csi_core import concat_datasets
    pooled = compute_norm_stats([a, b])
    joint = compute_norm_stats(concat_datasets([a, b]))
    np.testing.assert_allclose(pooled.mean, joint.mean, rtol=1e-6)
    np.testing.assert_allclose(pooled.std, joint.std, rtol=1e-6)


# -- splits -------------------------------------------------------------------

def _four_env(rng, n=40):
    return random_dataset(rng, n, num_classes=8, num_envs=4)


def test_split_sizes_sum(rng):
    ds = _four_env(rng)
    plan = SplitPlan((0, 1, 2), 3)
    assert plan.name == "ABC-D"
    sources, target = split_leave_one_env(ds, plan)
    assert sorted(sources) == [0, 1, 2]
    assert sum(len(d) for d in sources.values()) + len(target) == len(ds)


def test_split_counts_match_counting_oracle(rng):
    ds = _four_env(rng, 101)
    counts = {}
    for i in range(len(ds)):
        e = int(ds.sample_envs[i])
        counts[e] = counts.get(e, 0) + 1
    sources, target = split_leave_one_env(ds, SplitPlan((0, 1, 3), 2))
    for e, d in sources.items():
        assert len(d) == counts[e]
        assert set(d.sample_envs.tolist()) == {e}
    assert len(target) == counts[2]


def test_split_is_partition(rng):
    ds = _four_env(rng, 30)
    sources, target = split_leave_one_env(ds, SplitPlan((1, 2, 3), 0))
    pieces = [c for d in sources.values() for c in d.sample_checksums()] + target.sample_checksums()
    assert sorted(pieces) == sorted(ds.sample_checksums())


def test_split_plan_validation(rng):
    with pytest.raises(ValueError):
        SplitPlan((0, 1, 3), 3)
    with pytest.raises(ValueError):
        SplitPlan((), 3)
    with pytest.raises(ValueError):
        SplitPlan((0, 0), 3)
    ds = random_dataset(rng, 10, num_envs=2)
    with pytest.raises(ValueError):
        split_leave_one_env(ds, SplitPlan((0, 1), 3))


def test_dataset_is_read_only(small_dataset):
    with pytest.raises(ValueError):
        small_dataset.amplitudes[0, 0, 0, 0] = 1.0
    with pytest.raises(ValueError):
        small_dataset.labels[0] = 1


def test_dataset_rejects_bad_labels():
    with pytest.raises(ValueError):
        Dataset(np.zeros((1,) + SAMPLE_SHAPE, np.float32), [4], [0], num_classes=4)


@pytest.mark.slow
def test_full_layout_streams_through_memmap(tmp_path):
    # 8 classes x 4 envs x 200 samples is ~4.4 GB of float32, so nothing here holds it in memory
    from airfi.csi_core import iter_manifest, read_manifest, sample_checksum, save_samples

    written = []

    def stream():
        for i in range(6400):
            env, rest = divmod(i, 1600)
            label = rest // 200
            amp = np.random.default_rng([77, i]).standard_normal(SAMPLE_SHAPE, dtype=np.float32)
            written.append(sample_checksum(amp))
            yield CsiSample(amp, label, env)

    path = save_samples(stream(), tmp_path / "big", 8)
    man = read_manifest(path)
    assert len(man) == 6400
    assert [e["sha256"] for e in man.entries] == written

    buf = np.lib.format.open_memmap(tmp_path / "amps.npy", mode="w+", dtype=np.float32, shape=(6400,) + SAMPLE_SHAPE)
    ds = load_dataset(path, out=buf)
    assert len(ds) == 6400 and ds.num_classes == 8 and ds.env_ids == {0, 1, 2, 3}
    assert np.array_equal(np.bincount(ds.labels * 4 + ds.sample_envs), np.full(32, 200))
    assert ds.sample_checksums() == written
    for i in (0, 3199, 6399):
        np.testing.assert_array_equal(ds.amplitudes[i],
                                      np.random.default_rng([77, i]).standard_normal(SAMPLE_SHAPE, dtype=np.float32))
    assert sum(1 for _ in iter_manifest(path)) == 6400


def test_holdout_split_is_stratified_partition(rng):
    from airfi.csi_core import split_holdout

    ds = random_dataset(rng, 120, num_classes=3, num_envs=2)
    kept, held = split_holdout(ds, 0.25, seed=3)
    assert len(kept) + len(held) == 120
    for e in range(2):
        for c in range(3):
            n = int(np.sum((ds.sample_envs == e) & (ds.labels == c)))
            h = int(np.sum((held.sample_envs == e) & (held.labels == c)))
            assert h == round(0.25 * n)
    both = sorted(kept.sample_checksums() + held.sample_checksums())
    assert both == sorted(ds.sample_checksums())
    assert split_holdout(ds, 0.25, seed=3)[1].equals(held)
    with pytest.raises(ValueError):
        split_holdout(ds, 1.5)
