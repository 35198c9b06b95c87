"""Data model and on-disk formats for representation records.

A record holds one sample's penultimate-layer features and pre-softmax
logits as produced by the classifier-under-protection. Two interchangeable
file formats are supported:

``text-table``
    Delimited text with a header row ``id,feat_0..feat_{m-1},logit_0..logit_{C-1}``
    followed by one row per record. Floats are written with ``repr`` so a
    round trip is bitwise exact.

``binary-v1``
    Little-endian binary: magic ``D3R1``, u32 version (=1), u32 m, u32 C,
    u64 count, an id table (per record: u32 byte length + UTF-8 bytes), then
    the payload of count x (m + C) float64 values row-major, each row being
    the features followed by the logits. See README for a worked byte-level
    example.

Probabilities are never stored; they are recomputed from logits on demand.
Loaded datasets are treated as immutable and can be shared read-only across
parallel workers; loading itself is single-threaded per file.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

BINARY_MAGIC = b"D3R1"
BINARY_VERSION = 1

TEXT_FORMAT = "text-table"
BINARY_FORMAT = "binary-v1"
FORMATS = (TEXT_FORMAT, BINARY_FORMAT)

#: manifest roles a dataset file can play in a run
ROLES = ("InD-calibration", "InD-test", "OoD-test", "feature-bank")


@dataclass(eq=False)
class RepresentationRecord:
    """One sample's features (length m) and logits (length C)."""

    id: str
    features: np.ndarray
    logits: np.ndarray

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.logits = np.asarray(self.logits, dtype=np.float64)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def n_classes(self) -> int:
        return self.logits.shape[0]

    def validate(self) -> None:
        if self.features.ndim != 1 or self.logits.ndim != 1:
            raise DataError(f"record {self.id!r}: features and logits must be 1-D")
        if self.m < 1 or self.n_classes < 2:
            raise DataError(f"record {self.id!r}: need m >= 1 and C >= 2")
        if not np.all(np.isfinite(self.features)) or not np.all(np.isfinite(self.logits)):
            raise DataError(f"record {self.id!r}: non-finite value")


@dataclass(eq=False)
class PairedRecord:
    """An input record and its diffusion-generation record; the unit of scoring."""

    input: RepresentationRecord
    generation: RepresentationRecord
    label: int | None = None

    def __post_init__(self) -> None:
        if self.input.m != self.generation.m or self.input.n_classes != self.generation.n_classes:
            raise DataError(
                f"pair {self.input.id!r}: input is ({self.input.m}, {self.input.n_classes}) "
                f"but generation is ({self.generation.m}, {self.generation.n_classes})"
            )


@dataclass(eq=False)
class ClassifierHead:
    """Last linear layer of the classifier-under-protection.

    ``weights`` has shape (m, C) and ``bias`` shape (C,), so that
    ``logits = features @ weights + bias``.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise DataError("head: weights must be (m, C) and bias (C,)")
        if self.weights.shape[1] != self.bias.shape[0]:
            raise DataError(
                f"head: weights are {self.weights.shape} but bias has length {self.bias.shape[0]}"
            )

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights.shape[1]

    def logits(self, features: np.ndarray) -> np.ndarray:
        """Project features (m,) or a batch (n, m) through the layer."""
        features = np.asarray(features, dtype=np.float64)
        if features.shape[-1] != self.m:
            raise DataError(f"head expects m={self.m}, got feature length {features.shape[-1]}")
        return features @ self.weights + self.bias

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": self.bias.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierHead":
        return cls(np.array(d["weights"], dtype=np.float64), np.array(d["bias"], dtype=np.float64))


@dataclass
class DatasetManifest:
    """Provenance entry for one record file."""

    name: str
    role: str
    path: str
    m: int
    n_classes: int
    count: int
    checksum: str
    format: str = TEXT_FORMAT

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "role": self.role,
            "path": self.path,
            "m": self.m,
            "C": self.n_classes,
            "count": self.count,
            "checksum": self.checksum,
            "format": self.format,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(
            name=d["name"],
            role=d["role"],
            path=d["path"],
            m=int(d["m"]),
            n_classes=int(d["C"]),
            count=int(d["count"]),
            checksum=d["checksum"],
            format=d.get("format", TEXT_FORMAT),
        )


def _check_uniform_dims(records: list[RepresentationRecord]) -> tuple[int, int]:
    m, n_classes = records[0].m, records[0].n_classes
    for i, rec in enumerate(records):
        if rec.m != m or rec.n_classes != n_classes:
            raise DataError(
                f"row {i} (id {rec.id!r}): dimensions ({rec.m}, {rec.n_classes}) "
                f"differ from ({m}, {n_classes})"
            )
    return m, n_classes


def save_records(records: list[RepresentationRecord], path: str | Path, format: str = TEXT_FORMAT) -> None:
    """Write records to ``path``; reloading yields equal field values."""
    path = Path(path)
    if format not in FORMATS:
        raise DataError(f"unknown format {format!r}; expected one of {FORMATS}")
    if records:
        for rec in records:
            rec.validate()
        m, n_classes = _check_uniform_dims(records)
    else:
        m, n_classes = 1, 2  # header of an empty file still needs dimensions
    if format == TEXT_FORMAT:
        _save_text(records, path, m, n_classes)
    else:
        _save_binary(records, path, m, n_classes)


def load_records(path: str | Path, format: str = TEXT_FORMAT) -> list[RepresentationRecord]:
    """Load records, rejecting malformed rows with their index reported."""
    path = Path(path)
    if format not in FORMATS:
        raise DataError(f"unknown format {format!r}; expected one of {FORMATS}")
    if not path.exists():
        raise DataError(f"no such file: {path}")
    records = _load_text(path) if format == TEXT_FORMAT else _load_binary(path)
    for i, rec in enumerate(records):
        try:
            rec.validate()
        except DataError as exc:
            raise DataError(f"{path}: row {i}: {exc}") from None
    if records:
        _check_uniform_dims(records)
    return records


def sniff_format(path: str | Path) -> str:
    """Infer the format of an existing record file from its first bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    return BINARY_FORMAT if head == BINARY_MAGIC else TEXT_FORMAT


def _save_text(records, path: Path, m: int, n_classes: int) -> None:
    cols = ["id"] + [f"feat_{j}" for j in range(m)] + [f"logit_{j}" for j in range(n_classes)]
    lines = [",".join(cols)]
    for rec in records:
        if "," in rec.id or "\n" in rec.id:
            raise DataError(f"record id {rec.id!r} contains a delimiter")
        values = [repr(float(v)) for v in rec.features] + [repr(float(v)) for v in rec.logits]
        lines.append(",".join([rec.id] + values))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_text(path: Path) -> list[RepresentationRecord]:
    text = path.read_text(encoding="utf-8")
    lines = [ln for ln in text.split("\n") if ln != ""]
    if not lines:
        raise DataError(f"{path}: empty file, missing header")
    header = lines[0].split(",")
    m = sum(1 for c in header if c.startswith("feat_"))
    n_classes = sum(1 for c in header if c.startswith("logit_"))
    if header[0] != "id" or m < 1 or n_classes < 2 or len(header) != 1 + m + n_classes:
        raise DataError(f"{path}: malformed header {lines[0]!r}")
    records = []
    for i, line in enumerate(lines[1:]):
        parts = line.split(",")
        if len(parts) != 1 + m + n_classes:
            raise DataError(f"{path}: row {i}: expected {1 + m + n_classes} columns, got {len(parts)}")
        try:
            values = np.array([float(v) for v in parts[1:]], dtype=np.float64)
        except ValueError:
            raise DataError(f"{path}: row {i}: unparseable numeric value") from None
        records.append(RepresentationRecord(parts[0], values[:m], values[m:]))
    return records


def _save_binary(records, path: Path, m: int, n_classes: int) -> None:
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<III", BINARY_VERSION, m, n_classes))
        fh.write(struct.pack("<Q", len(records)))
        for rec in records:
            raw = rec.id.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        if records:
            payload = np.concatenate(
                [np.concatenate([rec.features, rec.logits]) for rec in records]
            ).astype("<f8")
            fh.write(payload.tobytes())


def _load_binary(path: Path) -> list[RepresentationRecord]:
    data = path.read_bytes()
    if data[:4] != BINARY_MAGIC:
        raise DataError(f"{path}: bad magic bytes (not a binary-v1 record file)")
    try:
        version, m, n_classes = struct.unpack_from("<III", data, 4)
        (count,) = struct.unpack_from("<Q", data, 16)
        offset = 24
        ids = []
        for _ in range(count):
            (length,) = struct.unpack_from("<I", data, offset)
            offset += 4
            ids.append(data[offset : offset + length].decode("utf-8"))
            offset += length
        payload = np.frombuffer(data, dtype="<f8", count=count * (m + n_classes), offset=offset)
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated or corrupt binary file ({exc})") from None
    if version != BINARY_VERSION:
        raise DataError(f"{path}: unsupported binary version {version}")
    rows = payload.reshape(count, m + n_classes)
    return [
        RepresentationRecord(ids[i], rows[i, :m].copy(), rows[i, m:].copy()) for i in range(count)
    ]


def pair_datasets(
    inputs: list[RepresentationRecord],
    generations: list[RepresentationRecord],
    labels: list[int] | np.ndarray | None = None,
) -> list[PairedRecord]:
    """Align inputs with their generations one-to-one by id, in input order."""
    if len(inputs) != len(generations):
        raise DataError(f"length mismatch: {len(inputs)} inputs vs {len(generations)} generations")
    if labels is not None and len(labels) != len(inputs):
        raise DataError(f"length mismatch: {len(inputs)} inputs vs {len(labels)} labels")
    by_id: dict[str, RepresentationRecord] = {}
    for gen in generations:
        if gen.id in by_id:
            raise DataError(f"duplicate generation id {gen.id!r}")
        by_id[gen.id] = gen
    pairs = []
    for k, rec in enumerate(inputs):
        gen = by_id.get(rec.id)
        if gen is None:
            raise DataError(f"id mismatch at index {k}: no generation for input id {rec.id!r}")
        pairs.append(PairedRecord(rec, gen, None if labels is None else int(labels[k])))
    return pairs


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def make_manifest(name: str, role: str, path: str | Path, format: str) -> DatasetManifest:
    """Build a manifest entry by inspecting an existing record file."""
    if role not in ROLES:
        raise DataError(f"unknown role {role!r}; expected one of {ROLES}")
    records = load_records(path, format)
    if records:
        m, n_classes = records[0].m, records[0].n_classes
    else:
        m, n_classes = 0, 0
    return DatasetManifest(
        name=name,
        role=role,
        path=Path(path).name,
        m=m,
        n_classes=n_classes,
        count=len(records),
        checksum=sha256_file(path),
        format=format,
    )


def verify_manifest(manifest: DatasetManifest, root: str | Path) -> list[RepresentationRecord]:
    """Load the referenced file and check count and checksum against the manifest."""
    path = Path(root) / manifest.path
    if not path.exists():
        raise DataError(f"manifest {manifest.name!r}: missing file {path}")
    if sha256_file(path) != manifest.checksum:
        raise DataError(f"manifest {manifest.name!r}: checksum mismatch for {path}")
    records = load_records(path, manifest.format)
    if len(records) != manifest.count:
        raise DataError(
            f"manifest {manifest.name!r}: count {manifest.count} but file holds {len(records)}"
        )
    return records


def write_benchmark_manifest(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_benchmark_manifest(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such manifest: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid manifest ({exc})") from None
