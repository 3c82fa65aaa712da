"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .compact import rasterize
from .core import ConfigError, DataError
from .evaluation import (
    DEFAULT_K,
    DEFAULT_N_SPLITS,
    DEFAULT_REPLICATES,
    DEFAULT_TRAIN_FRAC,
    domain_detection_report,
    reconstruction_score,
    region_reconstruction_eval,
)
from .genesel import DEFAULT_EPSILON, MODES
from .losses import (
    DEFAULT_KNN,
    MacroPartition,
    build_knn_graph,
    grid_macro_partition,
    loss_mspot,
    loss_patch,
    loss_slice,
    loss_spot,
)
from .mask import sample_region_mask, sample_uniform_mask
from .matio import read_labels, read_matrix
from .pipeline import BuildConfig, build_dataset, build_spot_dataset, load_source, render_channel, stats
from .seeding import MASK, derive_rng
from .shard import read_shards

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

log = logging.getLogger("stpatch")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_build_flags(p: argparse.ArgumentParser, *, patches: bool) -> None:
    p.add_argument("--config", help="JSON build config; flags override its keys")
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.add_argument("--csv", action="append", default=[], metavar="PATH", help="dense CSV slice (repeatable)")
    p.add_argument("--triplet", action="append", nargs=3, default=[], metavar=("GENES", "SPOTS", "MATRIX"),
                   help="gene list, spot table and MatrixMarket matrix (repeatable)")
    if patches:
        p.add_argument("--h", type=int)
        p.add_argument("--w", type=int)
        p.add_argument("--n-s", dest="n_s", type=int, help="windows per slice")
    p.add_argument("--m", type=int, help="channels per sample")
    p.add_argument("--select", choices=MODES)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--records-per-shard", type=int)
    p.add_argument("--mask-ratio", type=float)
    p.add_argument("--region-s", type=int)
    p.add_argument("--loss-on-holes", action="store_true", default=None)
    p.add_argument("--log1p", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stpatch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"stpatch {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build", help="build a patch dataset")
    _add_build_flags(p, patches=True)
    p = sub.add_parser("build-spot", help="build the one-record-per-spot baseline dataset")
    _add_build_flags(p, patches=False)

    p = sub.add_parser("stats", help="summarize a built dataset")
    p.add_argument("manifest")

    p = sub.add_parser("render", help="write one channel as an 8-bit PGM")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest", help="render a record from a dataset")
    src.add_argument("--csv", help="render the compacted grid of a dense CSV slice")
    p.add_argument("--record", type=int, default=0)
    p.add_argument("--channel", type=int, help="channel position (record) or gene index (grid)")
    p.add_argument("--gene", help="gene name (grid rendering only)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-domain", help="kNN spatial-domain classification (Acc / ARI)")
    p.add_argument("--embeddings", required=True, help="n x d matrix (.csv or binary)")
    p.add_argument("--labels", required=True, help="one label per line")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--train-frac", type=float, default=DEFAULT_TRAIN_FRAC)
    p.add_argument("--n-splits", type=int, default=DEFAULT_N_SPLITS)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval-recon", help="masked-region reconstruction error")
    p.add_argument("--truth", help="truth matrix")
    p.add_argument("--pred", help="prediction matrix")
    p.add_argument("--manifest", help="run the region protocol with the context-mean baseline")
    p.add_argument("--region-s", type=int)
    p.add_argument("--replicates", type=int, default=DEFAULT_REPLICATES)
    p.add_argument("--limit", type=int, default=256, help="records used from the dataset")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("loss-oracle", help="reference value of a pretraining objective")
    p.add_argument("--kind", required=True, choices=("spot", "mspot", "slice", "patch"))
    p.add_argument("--targets", help="N x genes targets (spot/mspot/slice)")
    p.add_argument("--pred", help="N x genes predictions (spot)")
    p.add_argument("--mask", help="N x genes 0/1 masked-entry matrix (default: all)")
    p.add_argument("--gene-emb", help="genes x d gene embeddings")
    p.add_argument("--spot-emb", help="N x d spot embeddings (mspot/slice)")
    p.add_argument("--coords", help="N x 2 coordinates (mspot/slice)")
    p.add_argument("--knn", type=int, default=DEFAULT_KNN)
    p.add_argument("--allow-isolated", action="store_true")
    p.add_argument("--domains", type=int, default=1, help="macro-domain count (slice)")
    p.add_argument("--partition", help="per-spot domain ids, one per line (slice)")
    p.add_argument("--manifest", help="dataset holding the patch (patch)")
    p.add_argument("--record", type=int, default=0)
    p.add_argument("--site-features", help="(h*w) x d encoder outputs, row-major sites (patch)")
    p.add_argument("--mask-ratio", type=float, default=0.3)
    p.add_argument("--region-s", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loss-on-holes", action="store_true")
    return parser


def _build_config(args) -> BuildConfig:
    keys = ("out_dir", "h", "w", "m", "n_s", "select", "epsilon", "seed", "records_per_shard",
            "mask_ratio", "region_s", "loss_on_holes", "log1p")
    overrides = {k: getattr(args, k, None) for k in keys}
    extra = [{"format": "csv", "path": p} for p in args.csv]
    extra += [{"format": "triplet", "genes": g, "spots": s, "matrix": m} for g, s, m in args.triplet]
    if args.config:
        cfg = BuildConfig.from_file(args.config, **overrides)
    else:
        cfg = BuildConfig(**{k: v for k, v in overrides.items() if v is not None})
    cfg.slices = list(cfg.slices) + extra
    return cfg


def _need(args, *names):
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _record(manifest, index: int):
    for i, sample in enumerate(read_shards(manifest)):
        if i == index:
            return sample
    raise DataError(f"record {index} not found")


def cmd_build(args) -> int:
    cfg = _build_config(args)
    builder = build_spot_dataset if args.command == "build-spot" else build_dataset
    manifest = builder(cfg)
    skipped = manifest.config.get("skipped_slices", 0)
    print(f"wrote {manifest.record_count} records in {len(manifest.shards)} shard(s) to {cfg.out_dir}"
          + (f" ({skipped} slice(s) skipped)" if skipped else ""))
    return EXIT_OK


def cmd_stats(args) -> int:
    print(json.dumps(stats(args.manifest), indent=2))
    return EXIT_OK


def cmd_render(args) -> int:
    if args.manifest:
        _need(args, "channel")
        obj = _record(args.manifest, args.record)
        channel = args.channel
    else:
        slc = load_source({"format": "csv", "path": args.csv})
        obj = rasterize(slc)
        if args.gene is not None:
            if args.gene not in slc.vocab:
                raise DataError(f"gene {args.gene!r} not in slice")
            channel = slc.vocab[args.gene]
        else:
            _need(args, "channel")
            channel = args.channel
    render_channel(obj, channel, args.out)
    return EXIT_OK


def cmd_eval_domain(args) -> int:
    X = read_matrix(args.embeddings)
    y = read_labels(args.labels)
    if len(y) != X.shape[0]:
        raise DataError(f"{X.shape[0]} embeddings but {len(y)} labels")
    report = domain_detection_report(X, y, k=args.k, train_frac=args.train_frac,
                                     n_splits=args.n_splits, seed=args.seed)
    sys.stdout.write(report.to_tsv())
    return EXIT_OK


def cmd_eval_recon(args) -> int:
    if args.manifest:
        _need(args, "region_s")
        samples = []
        for sample in read_shards(args.manifest):
            samples.append(sample)
            if len(samples) >= args.limit:
                break
        report = region_reconstruction_eval(samples, args.region_s, n_replicates=args.replicates, seed=args.seed)
        print(f"S\t{args.region_s}\nreplicates\t{len(report.mse)}\n"
              f"mse\t{report.mean_mse:.6f}\nmae\t{report.mean_mae:.6f}")
        return EXIT_OK
    _need(args, "truth", "pred")
    mse, mae = reconstruction_score(read_matrix(args.truth), read_matrix(args.pred))
    print(f"mse\t{mse:.6f}\nmae\t{mae:.6f}")
    return EXIT_OK


def cmd_loss_oracle(args) -> int:
    kind = args.kind
    if kind == "patch":
        _need(args, "manifest", "gene_emb", "site_features")
        sample = _record(args.manifest, args.record)
        h, w, m = sample.shape
        rng = derive_rng(args.seed, sample.slice_id, args.record, MASK)
        if args.region_s is not None:
            spec = sample_region_mask(h, w, m, args.region_s, rng)
        else:
            spec = sample_uniform_mask(h, w, m, args.mask_ratio, rng)
        feats = read_matrix(args.site_features)
        if feats.shape[0] != h * w:
            raise DataError(f"site features have {feats.shape[0]} rows, expected {h * w}")
        value = loss_patch(sample, spec, read_matrix(args.gene_emb), feats.reshape(h, w, -1),
                           loss_on_holes=args.loss_on_holes)
    else:
        _need(args, "targets")
        targets = read_matrix(args.targets)
        mask = read_matrix(args.mask) != 0 if args.mask else None
        if kind == "spot":
            _need(args, "pred")
            value = loss_spot(targets, read_matrix(args.pred), mask)
        else:
            _need(args, "gene_emb", "spot_emb")
            genes, emb = read_matrix(args.gene_emb), read_matrix(args.spot_emb)
            if kind == "mspot":
                _need(args, "coords")
                graph = build_knn_graph(read_matrix(args.coords), args.knn)
                value = loss_mspot(targets, genes, emb, graph, mask, allow_isolated=args.allow_isolated)
            else:
                if args.partition:
                    labels = read_labels(args.partition).astype(np.int64)
                    partition = MacroPartition(labels, int(labels.max()) + 1)
                else:
                    _need(args, "coords")
                    partition = grid_macro_partition(read_matrix(args.coords), args.domains)
                value = loss_slice(targets, genes, emb, partition, mask)
    print(f"{value:.10g}")
    return EXIT_OK


COMMANDS = {
    "build": cmd_build,
    "build-spot": cmd_build,
    "stats": cmd_stats,
    "render": cmd_render,
    "eval-domain": cmd_eval_domain,
    "eval-recon": cmd_eval_recon,
    "loss-oracle": cmd_loss_oracle,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"stpatch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError, OSError) as exc:
        print(f"stpatch: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
