"""Dataset construction: slices -> compact grids -> windows -> gene-selected patches -> shards."""

from __future__ import annotations

import json
import logging
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator

import numpy as np

from . import __version__
from .compact import rasterize
from .core import CompactGrid, ConfigError, DataError, PatchSample, RawSlice, build_vocabulary
from .crop import WindowTooLarge, extract_patch, sample_window_origin
from .genesel import DEFAULT_EPSILON, MODES, SelectionMode, per_gene_variance
from .ingest import (
    SyntheticConfig,
    generate_synthetic_slice,
    read_csv_header,
    read_dense_csv_slice,
    read_gene_names,
    read_triplet_slice,
)
from .mask import DEFAULT_RATIO
from .seeding import GENES, WINDOW, derive_rng
from .shard import DEFAULT_RECORDS_PER_SHARD, Manifest, read_shards, remove_shards, write_shards

log = logging.getLogger(__name__)

WORKERS_ENV = "STPATCH_WORKERS"
SOURCE_FORMATS = ("triplet", "csv", "synthetic")


@dataclass
class BuildConfig:
    """Every parameter that determines a build's output bytes.

    ``slices`` lists input sources, each a dict with a ``format`` key:
    ``{"format": "triplet", "genes": ..., "spots": ..., "matrix": ...}``,
    ``{"format": "csv", "path": ...}`` or ``{"format": "synthetic", <SyntheticConfig fields>}``.
    An optional ``id`` overrides the slice id.
    """

    slices: list = field(default_factory=list)
    out_dir: str = "dataset"
    h: int = 16
    w: int = 16
    m: int = 512
    n_s: int = 64
    select: str = "weighted"
    epsilon: float = DEFAULT_EPSILON
    seed: int = 0
    records_per_shard: int = DEFAULT_RECORDS_PER_SHARD
    variance_occupied_only: bool = True
    log1p: bool = False
    # recorded for the trainer; shards store unmasked samples
    mask_ratio: float = DEFAULT_RATIO
    region_s: int | None = None
    loss_on_holes: bool = False

    def validate(self, *, patches: bool = True) -> None:
        if not self.slices:
            raise ConfigError("no input slices configured")
        for src in self.slices:
            if not isinstance(src, dict) or src.get("format") not in SOURCE_FORMATS:
                raise ConfigError(f"slice source needs a format in {SOURCE_FORMATS}: {src!r}")
        if patches and (self.h < 1 or self.w < 1):
            raise ConfigError("window sides must be positive")
        if self.m < 1:
            raise ConfigError("m must be positive")
        if patches and self.n_s < 1:
            raise ConfigError("n_s must be positive")
        if self.select not in MODES:
            raise ConfigError(f"--select must be one of {MODES}")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.records_per_shard < 1:
            raise ConfigError("records_per_shard must be positive")
        if not 0 < self.mask_ratio < 1:
            raise ConfigError("mask ratio must lie in (0, 1)")
        if self.region_s is not None and self.region_s < 1:
            raise ConfigError("region side must be positive")

    @classmethod
    def from_file(cls, path, **overrides) -> "BuildConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data["slices"] = [_resolve_paths(src, path.parent) for src in data.get("slices", [])]
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    @classmethod
    def from_manifest(cls, manifest: Manifest, out_dir: str) -> "BuildConfig":
        """The configuration that produced ``manifest``, writing to ``out_dir``."""
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in manifest.config.items() if k in known}, out_dir=str(out_dir))

    def provenance(self) -> dict:
        out = asdict(self)
        out.pop("out_dir")
        return out


def _resolve_paths(src: dict, base: Path) -> dict:
    src = dict(src)
    for key in ("genes", "spots", "matrix", "path"):
        if key in src and not Path(src[key]).is_absolute():
            src[key] = str(base / src[key])
    return src


def source_gene_names(src: dict) -> list[str]:
    fmt = src["format"]
    if fmt == "triplet":
        return read_gene_names(src["genes"])
    if fmt == "csv":
        return read_csv_header(src["path"])
    return [f"gene{g}" for g in range(int(src.get("K", SyntheticConfig.K)))]


def load_source(src: dict, *, log1p: bool = False) -> RawSlice:
    fmt = src["format"]
    if fmt == "triplet":
        return read_triplet_slice(src["genes"], src["spots"], src["matrix"], slice_id=src.get("id"), log1p=log1p)
    if fmt == "csv":
        return read_dense_csv_slice(src["path"], slice_id=src.get("id"), log1p=log1p)
    params = {k: v for k, v in src.items() if k not in ("format", "id")}
    if "id" in src:
        params["slice_id"] = src["id"]
    slc, _ = generate_synthetic_slice(SyntheticConfig(**params))
    return slc


def shared_vocabulary(sources):
    names = []
    for src in sources:
        names.extend(source_gene_names(src))
    return build_vocabulary(names)


def worker_count(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if not raw:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return n


def make_patch(grid: CompactGrid, cfg: BuildConfig, mode: SelectionMode, r: int) -> PatchSample:
    """The r-th patch of a slice; depends only on (grid, cfg, r)."""
    sid = grid.slice_id
    origin = sample_window_origin(grid, cfg.h, cfg.w, derive_rng(cfg.seed, sid, r, WINDOW))
    t, occ = extract_patch(grid, origin, cfg.h, cfg.w)
    if occ.any() or not cfg.variance_occupied_only:
        var = per_gene_variance(t, occ, occupied_only=cfg.variance_occupied_only)
    else:
        # an all-hole window carries no signal; every gene gets weight eps
        var = np.zeros(grid.K)
    genes = mode.select(var, cfg.m, derive_rng(cfg.seed, sid, r, GENES))
    return PatchSample(t[:, :, genes], genes, origin, sid, occ)


def slice_patches(grid: CompactGrid, cfg: BuildConfig) -> list[PatchSample]:
    mode = SelectionMode(cfg.select, cfg.epsilon)
    return [make_patch(grid, cfg, mode, r) for r in range(cfg.n_s)]


def slice_spot_samples(grid: CompactGrid, cfg: BuildConfig) -> list[PatchSample]:
    """One 1 x 1 x m sample per occupied cell, row-major.

    A single site has zero variance, so channel weights come from the
    slice-wide per-gene variance over occupied cells.
    """
    mode = SelectionMode(cfg.select, cfg.epsilon)
    var = per_gene_variance(grid.expr, grid.occupied)
    out = []
    ys, xs = np.nonzero(grid.occupied)
    for j, (cy, cx) in enumerate(zip(ys.tolist(), xs.tolist())):
        genes = mode.select(var, cfg.m, derive_rng(cfg.seed, grid.slice_id, j, GENES))
        values = grid.expr[cy, cx, genes].reshape(1, 1, -1)
        out.append(PatchSample(values, genes, (cx, cy), grid.slice_id, np.ones((1, 1), dtype=bool)))
    return out


def _process(task):
    src, cfg_dict, vocab_names, spot_mode = task
    cfg = BuildConfig(**cfg_dict)
    vocab = build_vocabulary(vocab_names)
    slc = load_source(src, log1p=cfg.log1p).conform(vocab)
    grid = rasterize(slc)
    info = {"id": slc.id, "spots": slc.n_spots, "grid": [grid.height, grid.width]}
    if not spot_mode and (grid.height < cfg.h or grid.width < cfg.w):
        return info, None
    try:
        samples = slice_spot_samples(grid, cfg) if spot_mode else slice_patches(grid, cfg)
    except WindowTooLarge:
        return info, None
    return info, samples


def _ordered_results(tasks, workers: int) -> Iterator:
    """Yield task results in submission order with at most 2*workers in flight."""
    if workers <= 1:
        for task in tasks:
            yield _process(task)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        pending = deque()
        it = iter(tasks)
        for task in it:
            pending.append(pool.submit(_process, task))
            if len(pending) >= 2 * workers:
                break
        while pending:
            yield pending.popleft().result()
            for task in it:
                pending.append(pool.submit(_process, task))
                break


def _build(cfg: BuildConfig, *, spot_mode: bool, workers: int | None) -> Manifest:
    cfg.validate(patches=not spot_mode)
    vocab = shared_vocabulary(cfg.slices)
    if cfg.m > vocab.K:
        raise ConfigError(f"m={cfg.m} exceeds the {vocab.K} genes in the vocabulary")
    workers = worker_count() if workers is None else workers
    cfg_dict = asdict(cfg)
    tasks = [(src, cfg_dict, vocab.names, spot_mode) for src in cfg.slices]
    per_slice: list[dict] = []
    skipped = 0

    def samples():
        nonlocal skipped
        for info, batch in _ordered_results(tasks, workers):
            if batch is None:
                skipped += 1
                info["records"] = 0
                info["skipped"] = True
                log.warning("slice %r: grid %dx%d smaller than %dx%d window; skipped",
                            info["id"], *info["grid"], cfg.h, cfg.w)
            else:
                info["records"] = len(batch)
                info["skipped"] = False
                yield from batch
            per_slice.append(info)

    shape = (1, 1, cfg.m) if spot_mode else (cfg.h, cfg.w, cfg.m)
    out = Path(cfg.out_dir)
    remove_shards(out)
    manifest = write_shards(samples(), out, cfg.records_per_shard, vocab=vocab, shape=shape,
                            seed=cfg.seed)
    if skipped == len(cfg.slices):
        remove_shards(out)
        (out / "manifest.json").unlink(missing_ok=True)
        raise DataError("zero usable slices: every slice is smaller than the window")
    manifest.config = {
        **cfg.provenance(),
        "mode": "spot" if spot_mode else "patch",
        "per_slice": per_slice,
        "skipped_slices": skipped,
        "vocab_size": vocab.K,
    }
    manifest.toolkit_version = __version__
    manifest.save(out / "manifest.json")
    return manifest


def build_dataset(cfg: BuildConfig, *, workers: int | None = None) -> Manifest:
    """Build the patch dataset: n_s windows per usable slice."""
    return _build(cfg, spot_mode=False, workers=workers)


def build_spot_dataset(cfg: BuildConfig, *, workers: int | None = None) -> Manifest:
    """Build the spot-level baseline: one 1 x 1 x m record per observed spot."""
    return _build(cfg, spot_mode=True, workers=workers)


def stats(manifest_path, *, bins: int = 10) -> dict:
    """Stream a dataset and summarize counts, occupancy, and per-gene values."""
    manifest = Manifest.load(Path(manifest_path) / "manifest.json" if Path(manifest_path).is_dir()
                             else manifest_path)
    hist = np.zeros(bins, dtype=np.int64)
    K = manifest.K
    n = np.zeros(K, dtype=np.int64)
    s1 = np.zeros(K)
    s2 = np.zeros(K)
    records = 0
    occ_total = 0.0
    for sample in read_shards(manifest_path):
        records += 1
        rate = float(sample.occupied.mean())
        occ_total += rate
        hist[min(int(rate * bins), bins - 1)] += 1
        vals = sample.values[sample.occupied].astype(np.float64)  # (sites, m)
        np.add.at(n, sample.genes, vals.shape[0])
        np.add.at(s1, sample.genes, vals.sum(axis=0))
        np.add.at(s2, sample.genes, np.square(vals).sum(axis=0))
    seen = n > 0
    means = np.divide(s1, n, out=np.zeros(K), where=seen)
    variances = np.maximum(np.divide(s2, n, out=np.zeros(K), where=seen) - means ** 2, 0.0)
    return {
        "records": records,
        "manifest_records": manifest.record_count,
        "shards": [{"file": s["file"], "records": s["records"], "bytes": s["bytes"]} for s in manifest.shards],
        "total_bytes": sum(s["bytes"] for s in manifest.shards),
        "shape": [manifest.h, manifest.w, manifest.m],
        "occupancy": {
            "mean": occ_total / records if records else 0.0,
            "histogram": hist.tolist(),
            "bin_edges": np.linspace(0, 1, bins + 1).tolist(),
        },
        "channels": {
            "genes_observed": int(seen.sum()),
            "mean_of_means": float(means[seen].mean()) if seen.any() else 0.0,
            "mean_of_variances": float(variances[seen].mean()) if seen.any() else 0.0,
            "max_mean": float(means.max()) if seen.any() else 0.0,
        },
    }


def render_channel(obj, channel: int, out_path=None) -> bytes:
    """8-bit binary PGM of one channel, min-max scaled over occupied cells.

    ``obj`` is a CompactGrid (channel = gene id) or a PatchSample (channel =
    position among its selected genes). Unoccupied cells are 0; a constant
    channel renders occupied cells at 128.
    """
    if isinstance(obj, (CompactGrid, PatchSample)):
        tensor = obj.expr if isinstance(obj, CompactGrid) else obj.values
        occupied = obj.occupied
    else:
        raise TypeError("render_channel needs a CompactGrid or PatchSample")
    if not 0 <= channel < tensor.shape[2]:
        raise ValueError(f"channel {channel} out of range [0, {tensor.shape[2]})")
    img = np.asarray(tensor[:, :, channel], dtype=np.float64)
    pixels = np.zeros(img.shape, dtype=np.uint8)
    if occupied.any():
        vals = img[occupied]
        lo, hi = vals.min(), vals.max()
        if hi == lo:
            pixels[occupied] = 128
        else:
            pixels[occupied] = np.floor((vals - lo) / (hi - lo) * 255 + 0.5).astype(np.uint8)
    height, width = img.shape
    data = f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes()
    if out_path is not None:
        Path(out_path).write_bytes(data)
    return data
