"""Binary patch shards plus a JSON manifest.

Shard layout (all integers little-endian u32)::

    header   magic "STPZ", version, h, w, m, K, record_count, value_type
    record   len(slice_id), slice_id (UTF-8), o_x, o_y,
             genes[m] (ascending), occupancy bitmask ceil(h*w/8) bytes
             (row-major, LSB first), values h*w*m float32 ordered [row][col][channel]
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from . import __version__
from .core import DataError, GeneVocabulary, PatchSample, build_vocabulary

MAGIC = b"STPZ"
VERSION = 1
VALUE_F32_LE = 0
HEADER = struct.Struct("<4s7I")
U32 = struct.Struct("<I")
MANIFEST_NAME = "manifest.json"
VOCAB_NAME = "genes.txt"
DEFAULT_RECORDS_PER_SHARD = 1024


class ShardError(DataError):
    def __init__(self, message: str, path=None, offset: int | None = None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if offset is not None:
                loc += f" @ byte {offset}"
            loc += ": "
        super().__init__(loc + message)
        self.path = path
        self.offset = offset


@dataclass(frozen=True)
class ShardHeader:
    h: int
    w: int
    m: int
    K: int
    record_count: int
    version: int = VERSION
    value_type: int = VALUE_F32_LE

    def pack(self) -> bytes:
        return HEADER.pack(MAGIC, self.version, self.h, self.w, self.m, self.K,
                           self.record_count, self.value_type)

    @classmethod
    def unpack(cls, raw: bytes, path=None) -> "ShardHeader":
        if len(raw) < HEADER.size:
            raise ShardError("truncated header", path, 0)
        magic, version, h, w, m, K, count, vtype = HEADER.unpack(raw[:HEADER.size])
        if magic != MAGIC:
            raise ShardError(f"bad magic {magic!r}", path, 0)
        if version != VERSION:
            raise ShardError(f"unsupported version {version}", path, 4)
        if vtype != VALUE_F32_LE:
            raise ShardError(f"unsupported value type {vtype}", path, 28)
        return cls(h, w, m, K, count, version, vtype)


def record_size(h: int, w: int, m: int, slice_id: str) -> int:
    return 4 + len(slice_id.encode("utf-8")) + 8 + 4 * m + (h * w + 7) // 8 + 4 * h * w * m


def encode_record(sample: PatchSample) -> bytes:
    sid = sample.slice_id.encode("utf-8")
    bits = np.packbits(sample.occupied.reshape(-1), bitorder="little")
    return b"".join((
        U32.pack(len(sid)),
        sid,
        struct.pack("<2I", *sample.origin),
        sample.genes.astype("<u4").tobytes(),
        bits.tobytes(),
        np.ascontiguousarray(sample.values, dtype="<f4").tobytes(),
    ))


@dataclass
class Manifest:
    """Build provenance plus the shard list. Serialized as JSON."""

    h: int
    w: int
    m: int
    K: int
    vocab_digest: str
    shards: list[dict] = field(default_factory=list)
    seed: int | None = None
    config: dict = field(default_factory=dict)
    toolkit_version: str = __version__
    vocab_file: str | None = None
    format_version: int = VERSION

    @property
    def record_count(self) -> int:
        return sum(s["records"] for s in self.shards)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        data = json.loads(text)
        return cls(**data)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Manifest":
        try:
            return cls.from_json(Path(path).read_text(encoding="utf-8"))
        except (json.JSONDecodeError, TypeError) as exc:
            raise ShardError(f"invalid manifest: {exc}", path) from None


def file_digest(path, chunk: int = 1 << 20) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while True:
            block = fh.read(chunk)
            if not block:
                break
            h.update(block)
    return h.hexdigest()


class ShardWriter:
    """Stream records into one shard file; the header count is patched on close."""

    def __init__(self, path, h: int, w: int, m: int, K: int):
        self.path = Path(path)
        self.shape = (h, w, m)
        self.K = K
        self.count = 0
        self._fh = open(self.path, "wb")
        self._fh.write(ShardHeader(h, w, m, K, 0).pack())

    def write(self, sample: PatchSample) -> None:
        if sample.shape != self.shape:
            raise DataError(f"sample shape {sample.shape} does not match shard shape {self.shape}")
        if sample.genes.size and sample.genes.max() >= self.K:
            raise DataError(f"gene id {sample.genes.max()} out of range for K={self.K}")
        self._fh.write(encode_record(sample))
        self.count += 1

    def close(self) -> None:
        if self._fh.closed:
            return
        h, w, m = self.shape
        self._fh.seek(0)
        self._fh.write(ShardHeader(h, w, m, self.K, self.count).pack())
        self._fh.close()

    def abort(self) -> None:
        self._fh.close()
        self.path.unlink(missing_ok=True)


def write_shards(samples: Iterable[PatchSample], out_dir, records_per_shard: int = DEFAULT_RECORDS_PER_SHARD,
                 *, vocab: GeneVocabulary | None = None, shape: tuple[int, int, int] | None = None,
                 K: int | None = None, seed: int | None = None, config: dict | None = None,
                 prefix: str = "shard") -> Manifest:
    """Write samples in order into numbered shard files and a manifest.

    The shard shape comes from ``shape`` or the first sample. On any error
    every shard written by this call is removed.
    """
    if records_per_shard < 1:
        raise ValueError("records_per_shard must be positive")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if vocab is not None:
        K = vocab.K if K is None else K
        if K != vocab.K:
            raise ValueError("K disagrees with the vocabulary")
    if K is None:
        raise ValueError("write_shards needs the vocabulary size (pass vocab or K)")

    written: list[Path] = []
    entries: list[dict] = []
    writer: ShardWriter | None = None

    def open_next():
        path = out / f"{prefix}-{len(written):05d}.stpz"
        written.append(path)
        return ShardWriter(path, *shape, K)

    def finish(wr: ShardWriter):
        wr.close()
        entries.append({
            "file": wr.path.name,
            "records": wr.count,
            "bytes": wr.path.stat().st_size,
            "sha256": file_digest(wr.path),
        })

    try:
        for sample in samples:
            if shape is None:
                shape = sample.shape
            if writer is None:
                writer = open_next()
            elif writer.count >= records_per_shard:
                finish(writer)
                writer = open_next()
            writer.write(sample)
        if writer is None:
            shape = shape or (0, 0, 0)
            writer = open_next()
        finish(writer)
    except BaseException:
        if writer is not None:
            writer.abort()
        for path in written:
            path.unlink(missing_ok=True)
        raise

    vocab_file = None
    if vocab is not None:
        vocab_file = VOCAB_NAME
        (out / VOCAB_NAME).write_text("".join(n + "\n" for n in vocab.names), encoding="utf-8")
    manifest = Manifest(
        h=shape[0], w=shape[1], m=shape[2], K=K,
        vocab_digest=vocab.digest() if vocab is not None else "",
        shards=entries, seed=seed, config=dict(config or {}), vocab_file=vocab_file,
    )
    manifest.save(out / MANIFEST_NAME)
    return manifest


def _resolve_manifest(path) -> tuple[Manifest, Path]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise ShardError("manifest not found", path)
    return Manifest.load(path), path.parent


def load_vocabulary(manifest_path) -> GeneVocabulary | None:
    manifest, root = _resolve_manifest(manifest_path)
    if manifest.vocab_file is None:
        return None
    names = (root / manifest.vocab_file).read_text(encoding="utf-8").splitlines()
    vocab = build_vocabulary(names)
    if vocab.digest() != manifest.vocab_digest:
        raise ShardError("gene vocabulary digest mismatch", root / manifest.vocab_file)
    return vocab


def verify_manifest(manifest_path) -> Manifest:
    """Check every shard's SHA-256 and header against the manifest."""
    manifest, root = _resolve_manifest(manifest_path)
    for entry in manifest.shards:
        path = root / entry["file"]
        if not path.exists():
            raise ShardError("shard file missing", path)
        if file_digest(path) != entry["sha256"]:
            raise ShardError("content digest mismatch", path)
    return manifest


def read_shard_file(path, expected_records: int | None = None) -> Iterator[PatchSample]:
    """Stream records from one shard file without loading it whole."""
    path = Path(path)
    with open(path, "rb") as fh:
        header = ShardHeader.unpack(fh.read(HEADER.size), path)
        if expected_records is not None and header.record_count != expected_records:
            raise ShardError(
                f"header declares {header.record_count} records, manifest {expected_records}", path, 24
            )
        h, w, m = header.h, header.w, header.m
        n_bits = (h * w + 7) // 8
        n_vals = h * w * m
        offset = HEADER.size

        def take(n: int) -> bytes:
            nonlocal offset
            raw = fh.read(n)
            if len(raw) != n:
                raise ShardError(f"truncated record (wanted {n} bytes, got {len(raw)})", path, offset)
            offset += n
            return raw

        for _ in range(header.record_count):
            start = offset
            (sid_len,) = U32.unpack(take(4))
            try:
                slice_id = take(sid_len).decode("utf-8")
            except UnicodeDecodeError:
                raise ShardError("slice id is not valid UTF-8", path, start + 4) from None
            o_x, o_y = struct.unpack("<2I", take(8))
            genes = np.frombuffer(take(4 * m), dtype="<u4").astype(np.int64)
            occ = np.unpackbits(np.frombuffer(take(n_bits), dtype=np.uint8), count=h * w, bitorder="little")
            values = np.frombuffer(take(4 * n_vals), dtype="<f4").astype(np.float32).reshape(h, w, m)
            try:
                yield PatchSample(values, genes, (o_x, o_y), slice_id, occ.reshape(h, w).astype(bool))
            except DataError as exc:
                raise ShardError(f"invalid record: {exc}", path, start) from None
        if fh.read(1):
            raise ShardError("trailing bytes after last record", path, offset)


def read_shards(manifest_path, *, verify: bool = True) -> Iterator[PatchSample]:
    """Stream all records in manifest order. Each shard's digest is checked before it is read."""
    manifest, root = _resolve_manifest(manifest_path)
    for entry in manifest.shards:
        path = root / entry["file"]
        if not path.exists():
            raise ShardError("shard file missing", path)
        if verify and file_digest(path) != entry["sha256"]:
            raise ShardError("content digest mismatch", path)
        yield from read_shard_file(path, entry["records"])


def remove_shards(out_dir, prefix: str = "shard") -> None:
    for path in Path(out_dir).glob(f"{prefix}-*.stpz"):
        os.remove(path)
