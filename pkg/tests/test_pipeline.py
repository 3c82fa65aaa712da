import json

import numpy as np
import pytest

from stpatch.compact import rasterize
from stpatch.core import CompactGrid, ConfigError, DataError, PatchSample, RawSlice, build_vocabulary
from stpatch.ingest import write_dense_csv_slice
from stpatch.pipeline import (
    BuildConfig,
    build_dataset,
    build_spot_dataset,
    render_channel,
    stats,
    worker_count,
)
from stpatch.shard import read_shards, write_shards


def synth(H, W, K=16, seed=0, **kw):
    return {"format": "synthetic", "H": H, "W": W, "K": K, "seed": seed, **kw}


def shard_bytes(path):
    return {p.name: p.read_bytes() for p in sorted(path.glob("*.stpz"))}


def test_single_slice_bookkeeping(tmp_path):
    cfg = BuildConfig(slices=[synth(32, 32)], out_dir=str(tmp_path), h=8, w=8, m=4, n_s=4)
    manifest = build_dataset(cfg, workers=1)
    assert manifest.record_count == 4
    samples = list(read_shards(tmp_path))
    assert len(samples) == 4
    assert all(s.shape == (8, 8, 4) for s in samples)
    assert manifest.config["per_slice"][0]["records"] == 4


def test_build_is_deterministic(tmp_path):
    slices = [synth(20, 24, seed=1, hole_rate=0.2), synth(18, 18, seed=2)]
    for name in ("a", "b"):
        build_dataset(BuildConfig(slices=slices, out_dir=str(tmp_path / name), h=6, w=5, m=8, n_s=7,
                                  records_per_shard=5), workers=1)
    assert shard_bytes(tmp_path / "a") == shard_bytes(tmp_path / "b")
    assert (tmp_path / "a/manifest.json").read_text() == (tmp_path / "b/manifest.json").read_text()


def test_workers_do_not_change_output(tmp_path):
    slices = [synth(20, 20, seed=s) for s in range(3)]
    for name, workers in (("one", 1), ("two", 2)):
        build_dataset(BuildConfig(slices=slices, out_dir=str(tmp_path / name), h=8, w=8, m=6, n_s=3), workers=workers)
    assert shard_bytes(tmp_path / "one") == shard_bytes(tmp_path / "two")


def test_small_slice_skipped(tmp_path, caplog):
    cfg = BuildConfig(slices=[synth(12, 12, seed=1), synth(20, 20, seed=2)], out_dir=str(tmp_path),
                      h=16, w=16, m=4, n_s=3)
    with caplog.at_level("WARNING"):
        manifest = build_dataset(cfg, workers=1)
    assert manifest.record_count == 3
    assert manifest.config["skipped_slices"] == 1
    assert "skipped" in caplog.text


def test_all_slices_too_small(tmp_path):
    cfg = BuildConfig(slices=[synth(4, 4)], out_dir=str(tmp_path), h=8, w=8, m=2, n_s=1)
    with pytest.raises(DataError, match="zero usable slices"):
        build_dataset(cfg, workers=1)
    assert not list(tmp_path.glob("*.stpz"))


def test_m_larger_than_vocabulary(tmp_path):
    with pytest.raises(ConfigError):
        build_dataset(BuildConfig(slices=[synth(8, 8, K=4)], out_dir=str(tmp_path), h=4, w=4, m=5), workers=1)


def test_patch_values_match_grid(tmp_path):
    src = synth(16, 16, K=10, seed=3, hole_rate=0.25)
    build_dataset(BuildConfig(slices=[src], out_dir=str(tmp_path), h=5, w=7, m=3, n_s=6), workers=1)
    from stpatch.pipeline import load_source
    grid = rasterize(load_source(src))
    for s in read_shards(tmp_path):
        ox, oy = s.origin
        window = grid.expr[oy:oy + 5, ox:ox + 7]
        assert np.array_equal(s.values, window[:, :, s.genes])
        assert np.array_equal(s.occupied, grid.occupied[oy:oy + 5, ox:ox + 7])


def test_spot_mode_counts(tmp_path):
    coords = np.array([[0, 0], [1, 0], [2, 0], [0, 1], [2, 1], [0, 2], [1, 2]], dtype=float)
    expr = np.arange(21, dtype=np.float32).reshape(7, 3)
    slc = RawSlice("seven", coords, expr, build_vocabulary(["a", "b", "c"]))
    path = tmp_path / "seven.csv"
    write_dense_csv_slice(slc, path)
    manifest = build_spot_dataset(BuildConfig(slices=[{"format": "csv", "path": str(path)}],
                                              out_dir=str(tmp_path / "out"), m=2), workers=1)
    assert manifest.record_count == 7
    full = build_spot_dataset(BuildConfig(slices=[synth(50, 50, K=4)], out_dir=str(tmp_path / "full"), m=2),
                              workers=1)
    assert full.record_count == 2500


def test_spot_mode_deterministic(tmp_path):
    for name in ("a", "b"):
        build_spot_dataset(BuildConfig(slices=[synth(10, 10, hole_rate=0.3, seed=4)], out_dir=str(tmp_path / name),
                                       m=3, seed=7), workers=1)
    assert shard_bytes(tmp_path / "a") == shard_bytes(tmp_path / "b")


def test_config_file_and_overrides(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"slices": [synth(10, 10)], "h": 4, "w": 4, "m": 2, "n_s": 2}))
    cfg = BuildConfig.from_file(tmp_path / "cfg.json", n_s=5, out_dir=str(tmp_path / "o"))
    assert (cfg.h, cfg.n_s) == (4, 5)
    (tmp_path / "bad.json").write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ConfigError):
        BuildConfig.from_file(tmp_path / "bad.json")


def test_worker_env(monkeypatch):
    monkeypatch.setenv("STPATCH_WORKERS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("STPATCH_WORKERS", "zero")
    with pytest.raises(ConfigError):
        worker_count()


def test_stats_empty(tmp_path):
    write_shards([], tmp_path, K=5, shape=(2, 2, 1))
    out = stats(tmp_path)
    assert out["records"] == 0 and out["occupancy"]["mean"] == 0.0


def test_stats_occupancy(tmp_path):
    slices = [synth(40, 40, K=8, seed=s, hole_rate=0.3) for s in range(3)]
    manifest = build_dataset(BuildConfig(slices=slices, out_dir=str(tmp_path), h=10, w=10, m=4, n_s=20), workers=1)
    out = stats(tmp_path)
    assert out["records"] == manifest.record_count == sum(p["records"] for p in manifest.config["per_slice"])
    assert abs(out["occupancy"]["mean"] - 0.7) < 0.05
    assert sum(out["occupancy"]["histogram"]) == out["records"]


def test_render_single_cell():
    grid = CompactGrid(np.ones((1, 1, 1), np.float32), np.ones((1, 1), bool), np.zeros(1), np.zeros(1), "g")
    assert render_channel(grid, 0) == b"P5\n1 1\n255\n" + bytes([128])


def test_render_two_values(tmp_path):
    vals = np.array([[[0.0], [9.0]], [[9.0], [0.0]]], np.float32)
    occ = np.array([[True, True], [True, False]])
    vals[1, 1] = 0
    sample = PatchSample(vals, np.array([0]), (0, 0), "s", occ)
    data = render_channel(sample, 0, tmp_path / "x.pgm")
    assert data[-4:] == bytes([0, 255, 255, 0])
    assert (tmp_path / "x.pgm").read_bytes() == data
    assert render_channel(sample, 0) == data
    with pytest.raises(ValueError):
        render_channel(sample, 1)


def test_rebuild_from_manifest(tmp_path):
    from stpatch.shard import Manifest
    cfg = BuildConfig(slices=[synth(20, 20, seed=5, hole_rate=0.1)], out_dir=str(tmp_path / "a"),
                      h=6, w=6, m=5, n_s=4, select="hvg", seed=11)
    build_dataset(cfg, workers=1)
    again = BuildConfig.from_manifest(Manifest.load(tmp_path / "a/manifest.json"), tmp_path / "b")
    build_dataset(again, workers=1)
    assert shard_bytes(tmp_path / "a") == shard_bytes(tmp_path / "b")
