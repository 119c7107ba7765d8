"""On-disk embedding store: binary record files, dataset manifests, stratified splits.

File layout (all integers little-endian):

    header   magic (8 bytes) | version u32 | L u32 | D u32 | record_count u64 | index_offset u64
    records  one variable-length block per record, back to back
    index    record_count entries of (offset u64, byte_length u64)

Record block:

    id_len u16 | domain u8 | emotion u8 | tag_len u16 | T u32
    | utterance_id (utf-8) | model_tag (utf-8) | payload (L*T*D float32)

L and D are fixed per file; T may vary per record. The header is written
last (patched in place), so records stream out in one pass and any record
is reachable with a single seek through the tail index.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptFileError,
    DataValidationError,
    DimensionMismatchError,
    DuplicateKeyError,
    FileFormatError,
    StoreIOError,
)
from .numerics import derive_rng

DOMAINS = ("speech", "music")
EMOTIONS = ("neutral", "calm", "happy", "sad", "angry", "fearful")
SPLITS = ("train", "val", "test")

SMALL_STRATUM_SIZE = 5

MAGIC = b"XEMB\r\n\x1a\n"
FORMAT_VERSION = 1
HEADER = struct.Struct("<8sIIIQQ")
INDEX_ENTRY = struct.Struct("<QQ")
RECORD_HEAD = struct.Struct("<HBBHI")


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass
class EmbeddingRecord:
    """One utterance's per-layer, per-frame features plus metadata.

    ``layers`` has shape (L, T, D): L encoder layers, T frames, D feature dims.
    Stored as float32; all layer slices share T and D by construction.
    """

    utterance_id: str
    domain: str
    emotion: str
    layers: np.ndarray
    model_tag: str = ""

    def validate(self) -> None:
        if self.domain not in DOMAINS:
            raise DataValidationError(
                f"record '{self.utterance_id}': unknown domain '{self.domain}'"
            )
        if self.emotion not in EMOTIONS:
            raise DataValidationError(
                f"record '{self.utterance_id}': unknown emotion '{self.emotion}'"
            )
        if self.layers.ndim != 3:
            raise DimensionMismatchError(
                f"record '{self.utterance_id}': layers must be (L, T, D), "
                f"got shape {self.layers.shape}"
            )
        if min(self.layers.shape) < 1:
            raise DimensionMismatchError(
                f"record '{self.utterance_id}': L, T, D must all be >= 1, "
                f"got shape {self.layers.shape}"
            )
        if not np.all(np.isfinite(self.layers)):
            raise DataValidationError(
                f"record '{self.utterance_id}': non-finite values in payload"
            )

    @property
    def num_layers(self) -> int:
        return self.layers.shape[0]

    @property
    def num_frames(self) -> int:
        return self.layers.shape[1]

    @property
    def dim(self) -> int:
        return self.layers.shape[2]


def _encode_record(rec: EmbeddingRecord) -> bytes:
    id_bytes = rec.utterance_id.encode("utf-8")
    tag_bytes = rec.model_tag.encode("utf-8")
    if len(id_bytes) > 0xFFFF or len(tag_bytes) > 0xFFFF:
        raise DataValidationError(f"record '{rec.utterance_id}': id/tag too long")
    head = RECORD_HEAD.pack(
        len(id_bytes),
        DOMAINS.index(rec.domain),
        EMOTIONS.index(rec.emotion),
        len(tag_bytes),
        rec.num_frames,
    )
    payload = np.ascontiguousarray(rec.layers, dtype="<f4").tobytes()
    return head + id_bytes + tag_bytes + payload


def _decode_record(blob: bytes, num_layers: int, dim: int) -> EmbeddingRecord:
    if len(blob) < RECORD_HEAD.size:
        raise CorruptFileError("record block shorter than its fixed header")
    id_len, domain_idx, emotion_idx, tag_len, frames = RECORD_HEAD.unpack_from(blob, 0)
    if domain_idx >= len(DOMAINS) or emotion_idx >= len(EMOTIONS):
        raise CorruptFileError("record block has out-of-range domain/emotion code")
    pos = RECORD_HEAD.size
    try:
        utterance_id = blob[pos : pos + id_len].decode("utf-8")
        pos += id_len
        model_tag = blob[pos : pos + tag_len].decode("utf-8")
        pos += tag_len
    except UnicodeDecodeError as exc:
        raise CorruptFileError(f"record block has undecodable id/tag: {exc}") from exc
    expected = num_layers * frames * dim * 4
    if len(blob) - pos != expected:
        raise CorruptFileError(
            f"record '{utterance_id}': payload is {len(blob) - pos} bytes, "
            f"expected {expected}"
        )
    flat = np.frombuffer(blob, dtype="<f4", count=num_layers * frames * dim, offset=pos)
    layers = flat.reshape(num_layers, frames, dim).copy()
    if not np.all(np.isfinite(layers)):
        raise DataValidationError(
            f"record '{utterance_id}': non-finite values in payload"
        )
    return EmbeddingRecord(
        utterance_id=utterance_id,
        domain=DOMAINS[domain_idx],
        emotion=EMOTIONS[emotion_idx],
        layers=layers,
        model_tag=model_tag,
    )


def write_embedding_file(records, path) -> list[int]:
    """Write records to ``path``; returns each record's file offset (write order).

    All records must share L and D and carry unique utterance ids. Round-trip
    through :func:`read_embedding_file` is bit-exact on tensor payloads.
    """
    path = Path(path)
    records = list(records)
    seen: set[str] = set()
    for rec in records:
        rec.validate()
        if rec.utterance_id in seen:
            raise DuplicateKeyError(f"duplicate utterance_id '{rec.utterance_id}'")
        seen.add(rec.utterance_id)
    if records:
        num_layers, dim = records[0].num_layers, records[0].dim
        for rec in records:
            if rec.num_layers != num_layers or rec.dim != dim:
                raise DimensionMismatchError(
                    f"record '{rec.utterance_id}' has (L={rec.num_layers}, D={rec.dim}), "
                    f"file is (L={num_layers}, D={dim})"
                )
    else:
        num_layers, dim = 0, 0

    offsets: list[int] = []
    try:
        with open(path, "wb") as fh:
            fh.write(HEADER.pack(MAGIC, FORMAT_VERSION, num_layers, dim, 0, 0))
            entries: list[tuple[int, int]] = []
            for rec in records:
                blob = _encode_record(rec)
                offset = fh.tell()
                fh.write(blob)
                entries.append((offset, len(blob)))
                offsets.append(offset)
            index_offset = fh.tell()
            for offset, length in entries:
                fh.write(INDEX_ENTRY.pack(offset, length))
            fh.seek(0)
            fh.write(
                HEADER.pack(
                    MAGIC, FORMAT_VERSION, num_layers, dim, len(records), index_offset
                )
            )
    except OSError as exc:
        raise StoreIOError(f"writing '{path}': {exc}") from exc
    return offsets


def _read_header(data: bytes, path: Path) -> tuple[int, int, int, int]:
    if len(data) < HEADER.size:
        raise CorruptFileError(f"'{path}': file shorter than header")
    magic, version, num_layers, dim, count, index_offset = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FileFormatError(f"'{path}': bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FileFormatError(f"'{path}': unsupported format version {version}")
    if not HEADER.size <= index_offset <= len(data):
        raise CorruptFileError(f"'{path}': index offset {index_offset} outside file")
    if index_offset + count * INDEX_ENTRY.size > len(data):
        raise CorruptFileError(f"'{path}': index truncated")
    return num_layers, dim, count, index_offset


def read_embedding_file(path) -> list[EmbeddingRecord]:
    """Read all records; raises on bad magic, truncation, or non-finite payloads."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise StoreIOError(f"reading '{path}': {exc}") from exc
    num_layers, dim, count, index_offset = _read_header(data, path)
    records = []
    for i in range(count):
        offset, length = INDEX_ENTRY.unpack_from(
            data, index_offset + i * INDEX_ENTRY.size
        )
        if offset < HEADER.size or offset + length > index_offset:
            raise CorruptFileError(f"'{path}': index entry {i} out of bounds")
        records.append(_decode_record(data[offset : offset + length], num_layers, dim))
    return records


def validate_embedding_file(path) -> tuple[dict, list[str]]:
    """Lint a file without raising; returns (info, errors).

    ``info`` carries header fields plus whatever could be decoded; ``errors``
    is empty for a clean file.
    """
    path = Path(path)
    info: dict = {"path": str(path)}
    errors: list[str] = []
    try:
        data = path.read_bytes()
    except OSError as exc:
        return info, [f"cannot read '{path}': {exc}"]
    try:
        num_layers, dim, count, index_offset = _read_header(data, path)
    except (FileFormatError, CorruptFileError) as exc:
        return info, [str(exc)]
    info.update(record_count=count, num_layers=num_layers, dim=dim)
    seen: set[str] = set()
    tags: set[str] = set()
    for i in range(count):
        offset, length = INDEX_ENTRY.unpack_from(
            data, index_offset + i * INDEX_ENTRY.size
        )
        if offset < HEADER.size or offset + length > index_offset:
            errors.append(f"index entry {i} out of bounds")
            continue
        try:
            rec = _decode_record(data[offset : offset + length], num_layers, dim)
        except (CorruptFileError, DataValidationError) as exc:
            errors.append(f"record {i}: {exc}")
            continue
        if rec.utterance_id in seen:
            errors.append(f"record {i}: duplicate utterance_id '{rec.utterance_id}'")
        seen.add(rec.utterance_id)
        tags.add(rec.model_tag)
    info["model_tags"] = sorted(tags)
    return info, errors


# ---------------------------------------------------------------------------
# Manifest and splits
# ---------------------------------------------------------------------------


@dataclass
class RecordMeta:
    utterance_id: str
    domain: str
    emotion: str
    file_offset: int = 0


@dataclass
class DatasetManifest:
    """Record index plus deterministic train/val/test assignment."""

    records: list[RecordMeta]
    split: dict[str, str]
    seed: int
    counts: dict[str, dict[str, int]]
    warnings: list[str] = field(default_factory=list)

    def ids(self, split: str, domain: str | None = None) -> list[str]:
        out = []
        for meta in self.records:
            if self.split[meta.utterance_id] != split:
                continue
            if domain is not None and meta.domain != domain:
                continue
            out.append(meta.utterance_id)
        return out

    def to_json(self) -> str:
        obj = {
            "seed": self.seed,
            "counts": self.counts,
            "split": self.split,
            "warnings": self.warnings,
            "records": [
                {
                    "utterance_id": m.utterance_id,
                    "domain": m.domain,
                    "emotion": m.emotion,
                    "file_offset": m.file_offset,
                }
                for m in self.records
            ],
        }
        return json.dumps(obj, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        try:
            obj = json.loads(text)
            return cls(
                records=[RecordMeta(**entry) for entry in obj["records"]],
                split=obj["split"],
                seed=obj["seed"],
                counts=obj["counts"],
                warnings=obj.get("warnings", []),
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataValidationError(f"malformed manifest JSON: {exc}") from exc

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise StoreIOError(f"reading manifest '{path}': {exc}") from exc
        return cls.from_json(text)


def _as_meta(record) -> RecordMeta:
    return RecordMeta(
        utterance_id=record.utterance_id,
        domain=record.domain,
        emotion=record.emotion,
        file_offset=getattr(record, "file_offset", 0),
    )


def split_sizes(n: int) -> tuple[int, int, int]:
    """60/20/20 with floor rounding; the remainder goes to test.

    Integer arithmetic, so floor(0.6n) is exact for every n.
    """
    n_train = (6 * n) // 10
    n_val = (2 * n) // 10
    return n_train, n_val, n - n_train - n_val


def make_stratified_split(records, seed: int) -> DatasetManifest:
    """Assign every record to train/val/test, stratified by (domain, emotion).

    Each stratum is shuffled with its own seed-derived generator, so the
    assignment depends only on (the set of ids in the stratum, seed) and not
    on record order or on other strata. Every domain present in the input
    must contain all six emotions.
    """
    metas = [_as_meta(r) for r in records]
    if not metas:
        raise DataValidationError("cannot split an empty record list")
    for meta in metas:
        if meta.domain not in DOMAINS:
            raise DataValidationError(f"unknown domain '{meta.domain}'")
        if meta.emotion not in EMOTIONS:
            raise DataValidationError(f"unknown emotion '{meta.emotion}'")

    strata: dict[tuple[str, str], list[str]] = {}
    for meta in metas:
        strata.setdefault((meta.domain, meta.emotion), []).append(meta.utterance_id)
    present_domains = sorted({d for d, _ in strata}, key=DOMAINS.index)
    for domain in present_domains:
        for emotion in EMOTIONS:
            if (domain, emotion) not in strata:
                raise DataValidationError(f"empty stratum {domain}/{emotion}")

    split: dict[str, str] = {}
    counts: dict[str, dict[str, int]] = {d: {} for d in present_domains}
    warnings: list[str] = []
    for domain in present_domains:
        for emotion in EMOTIONS:
            ids = sorted(strata[(domain, emotion)])
            if len(ids) != len(set(ids)):
                raise DuplicateKeyError(f"duplicate ids in stratum {domain}/{emotion}")
            if len(ids) < SMALL_STRATUM_SIZE:
                warnings.append(
                    f"stratum {domain}/{emotion} has only {len(ids)} records"
                )
            rng = derive_rng(seed, "split", domain, emotion)
            order = rng.permutation(len(ids))
            n_train, n_val, _ = split_sizes(len(ids))
            for rank, idx in enumerate(order):
                if rank < n_train:
                    split[ids[idx]] = "train"
                elif rank < n_train + n_val:
                    split[ids[idx]] = "val"
                else:
                    split[ids[idx]] = "test"
            counts[domain][emotion] = len(ids)

    return DatasetManifest(
        records=metas, split=split, seed=seed, counts=counts, warnings=warnings
    )
