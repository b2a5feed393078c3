"""Feature datasets: binary/CSV I/O, instance-disjoint splits, synthetic
benchmarks, sequence manifests, and the access-logged views the trainer
reads through (the rehearsal-free audit trail).

Binary layout ("FCL1", little-endian, documented in docs/formats.md):
magic "FCL1", u32 version=1, u32 feature_dim, u64 n_examples, then per
example u64 example_id, u32 instance_id, u32 category_id, feature_dim * f32.

Features are stored as f32 (matching typical backbone dumps) and widened to
f64 when handed to the trainer.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .nnmath import make_rng

FEATURE_MAGIC = b"FCL1"
FEATURE_VERSION = 1

# rng stream ids so the per-purpose draws never collide
_STREAM_CENTERS = 0
_STREAM_INSTANCES = 1
_STREAM_NOISE = 2
_STREAM_SPLIT = 3
_STREAM_MANIFEST = 4


@dataclass
class FeatureDataset:
    feature_dim: int
    example_ids: np.ndarray  # (n,) u64
    instance_ids: np.ndarray  # (n,) u32
    category_ids: np.ndarray  # (n,) u32
    features: np.ndarray  # (n, feature_dim) f32

    def __post_init__(self):
        n = len(self.example_ids)
        if not (len(self.instance_ids) == len(self.category_ids) == self.features.shape[0] == n):
            raise ValidationError("dataset arrays disagree on example count")
        if self.features.ndim != 2 or self.features.shape[1] != self.feature_dim:
            raise ValidationError(
                f"features shape {self.features.shape} != (n, {self.feature_dim})"
            )
        if len(np.unique(self.example_ids)) != n:
            raise ValidationError("example ids must be unique")
        if n and not np.all(np.isfinite(self.features)):
            raise ValidationError("non-finite feature value in dataset")

    def __len__(self) -> int:
        return len(self.example_ids)

    def categories(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.category_ids))

    def subset(self, mask_or_indices) -> "FeatureDataset":
        return FeatureDataset(
            self.feature_dim,
            self.example_ids[mask_or_indices],
            self.instance_ids[mask_or_indices],
            self.category_ids[mask_or_indices],
            self.features[mask_or_indices],
        )


def _example_dtype(feature_dim: int) -> np.dtype:
    return np.dtype(
        [
            ("example_id", "<u8"),
            ("instance_id", "<u4"),
            ("category_id", "<u4"),
            ("features", "<f4", (feature_dim,)),
        ]
    )


def write_feature_file(dataset: FeatureDataset, path) -> None:
    records = np.empty(len(dataset), dtype=_example_dtype(dataset.feature_dim))
    records["example_id"] = dataset.example_ids
    records["instance_id"] = dataset.instance_ids
    records["category_id"] = dataset.category_ids
    records["features"] = dataset.features
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IIQ", FEATURE_VERSION, dataset.feature_dim, len(dataset)))
        fh.write(records.tobytes())


def read_feature_file(path) -> FeatureDataset:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
        header = fh.read(16)
        if len(header) != 16:
            raise FormatError(f"{path}: truncated header at byte {4 + len(header)}")
        version, feature_dim, n = struct.unpack("<IIQ", header)
        if version != FEATURE_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        dtype = _example_dtype(feature_dim)
        payload = fh.read(dtype.itemsize * n)
        if len(payload) != dtype.itemsize * n:
            raise FormatError(
                f"{path}: truncated at byte {20 + len(payload)}, "
                f"expected {dtype.itemsize * n} payload bytes"
            )
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after {n} examples")
    records = np.frombuffer(payload, dtype=dtype)
    return FeatureDataset(
        feature_dim,
        records["example_id"].copy(),
        records["instance_id"].copy(),
        records["category_id"].copy(),
        records["features"].reshape(n, feature_dim).copy(),
    )


def write_csv_feature_file(dataset: FeatureDataset, path) -> None:
    header = ["example_id", "instance_id", "category_id"] + [
        f"f{i}" for i in range(dataset.feature_dim)
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(dataset)):
            row = [int(dataset.example_ids[i]), int(dataset.instance_ids[i]), int(dataset.category_ids[i])]
            row += [str(v) for v in dataset.features[i]]  # f32 shortest round-trip repr
            writer.writerow(row)


def read_csv_feature_file(path) -> FeatureDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty CSV") from None
        if header[:3] != ["example_id", "instance_id", "category_id"]:
            raise FormatError(f"{path}: unexpected CSV header {header[:3]}")
        feature_dim = len(header) - 3
        expected = [f"f{i}" for i in range(feature_dim)]
        if header[3:] != expected:
            raise FormatError(f"{path}: feature columns must be f0..f{feature_dim - 1}")
        ex, inst, cat, feats = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            ex.append(int(row[0]))
            inst.append(int(row[1]))
            cat.append(int(row[2]))
            feats.append(np.array(row[3:], dtype="<f4"))
    n = len(ex)
    return FeatureDataset(
        feature_dim,
        np.array(ex, dtype="<u8"),
        np.array(inst, dtype="<u4"),
        np.array(cat, dtype="<u4"),
        np.array(feats, dtype="<f4").reshape(n, feature_dim),
    )


def split_by_instance(dataset: FeatureDataset, val_fraction: float, seed: int):
    """Partition instance ids into train/val; no instance straddles the split.

    Per category the validation set gets max(1, round(fraction * instances))
    instances, capped at instances - 1 so training never goes empty.
    """
    if not 0 < val_fraction < 1:
        raise ValidationError(f"val_fraction must be in (0, 1), got {val_fraction}")
    val_instances: set[int] = set()
    for cat in dataset.categories():
        inst = np.unique(dataset.instance_ids[dataset.category_ids == cat])
        if len(inst) < 2:
            raise ValidationError(f"category {cat} has only {len(inst)} instance(s); need >= 2 to split")
        n_val = int(np.floor(val_fraction * len(inst) + 0.5))  # half-away-from-zero
        n_val = min(max(1, n_val), len(inst) - 1)
        order = make_rng(seed, _STREAM_SPLIT, cat).permutation(len(inst))
        val_instances.update(int(i) for i in inst[order[:n_val]])
    mask = np.isin(dataset.instance_ids, sorted(val_instances))
    return dataset.subset(~mask), dataset.subset(mask)


@dataclass(frozen=True)
class SyntheticSpec:
    categories: int
    instances_per_category: int
    samples_per_instance: int
    feature_dim: int
    category_spread: float = 10.0
    instance_spread: float = 3.0
    noise_spread: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if min(self.categories, self.instances_per_category, self.samples_per_instance, self.feature_dim) < 1:
            raise ValidationError("all synthetic counts must be >= 1")
        if not self.category_spread > self.instance_spread > self.noise_spread > 0:
            raise ValidationError(
                "spreads must satisfy category > instance > noise > 0, got "
                f"{self.category_spread}:{self.instance_spread}:{self.noise_spread}"
            )


def generate_synthetic(spec: SyntheticSpec) -> FeatureDataset:
    """Hierarchical Gaussian blobs: category center -> instance center -> sample."""
    d = spec.feature_dim
    centers = spec.category_spread * make_rng(spec.seed, _STREAM_CENTERS).standard_normal(
        (spec.categories, d)
    )
    inst_offsets = spec.instance_spread * make_rng(spec.seed, _STREAM_INSTANCES).standard_normal(
        (spec.categories, spec.instances_per_category, d)
    )
    noise = spec.noise_spread * make_rng(spec.seed, _STREAM_NOISE).standard_normal(
        (spec.categories, spec.instances_per_category, spec.samples_per_instance, d)
    )
    samples = centers[:, None, None, :] + inst_offsets[:, :, None, :] + noise
    n = spec.categories * spec.instances_per_category * spec.samples_per_instance
    cat_idx, inst_idx, _ = np.meshgrid(
        np.arange(spec.categories),
        np.arange(spec.instances_per_category),
        np.arange(spec.samples_per_instance),
        indexing="ij",
    )
    return FeatureDataset(
        d,
        np.arange(n, dtype="<u8"),
        (cat_idx * spec.instances_per_category + inst_idx).reshape(n).astype("<u4"),
        cat_idx.reshape(n).astype("<u4"),
        samples.reshape(n, d).astype("<f4"),
    )


@dataclass
class SequenceManifest:
    sequences: list[list[int]]
    train_path: str
    val_path: str
    notes: str = ""

    def __post_init__(self):
        seen: set[int] = set()
        for i, cats in enumerate(self.sequences):
            overlap = seen & set(cats)
            if overlap:
                raise ValidationError(f"sequence {i} repeats categories {sorted(overlap)}")
            if len(set(cats)) != len(cats):
                raise ValidationError(f"sequence {i} lists a category twice")
            seen.update(cats)

    def all_categories(self) -> set[int]:
        return {c for cats in self.sequences for c in cats}


def save_manifest(manifest: SequenceManifest, path) -> None:
    payload = {
        "sequences": [[int(c) for c in cats] for cats in manifest.sequences],
        "train": manifest.train_path,
        "val": manifest.val_path,
        "notes": manifest.notes,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_manifest(path) -> SequenceManifest:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid manifest JSON ({exc})") from None
    for key in ("sequences", "train", "val"):
        if key not in payload:
            raise FormatError(f"{path}: manifest missing key {key!r}")
    return SequenceManifest(
        sequences=[[int(c) for c in cats] for cats in payload["sequences"]],
        train_path=payload["train"],
        val_path=payload["val"],
        notes=payload.get("notes", ""),
    )


LAYOUT_HOWS_STANDARD = "hows-standard"
LAYOUT_HOWS_LONG = "hows-long"


def sequence_sizes(layout: str, n_categories: int) -> list[int]:
    """Categories per sequence for a layout string: equal:K | hows-standard
    | hows-long."""
    if layout == LAYOUT_HOWS_STANDARD:
        if n_categories != 25:
            raise ValidationError(f"hows-standard needs exactly 25 categories, got {n_categories}")
        return [5] * 5
    if layout == LAYOUT_HOWS_LONG:
        if n_categories != 25:
            raise ValidationError(f"hows-long needs exactly 25 categories, got {n_categories}")
        return [3] + [2] * 11
    if layout.startswith("equal:"):
        try:
            k = int(layout.split(":", 1)[1])
        except ValueError:
            raise ValidationError(f"bad layout {layout!r}") from None
        if k < 1 or n_categories % k != 0:
            raise ValidationError(f"equal:{k} does not divide {n_categories} categories")
        return [k] * (n_categories // k)
    raise ValidationError(f"unknown sequence layout {layout!r}")


def make_manifest(
    dataset: FeatureDataset, layout: str, seed: int, train_path: str = "", val_path: str = ""
) -> SequenceManifest:
    """Assign the dataset's categories to sequences by seeded shuffle."""
    cats = dataset.categories()
    sizes = sequence_sizes(layout, len(cats))
    order = make_rng(seed, _STREAM_MANIFEST).permutation(len(cats))
    shuffled = [cats[i] for i in order]
    sequences, at = [], 0
    for size in sizes:
        sequences.append(shuffled[at : at + size])
        at += size
    return SequenceManifest(sequences, train_path, val_path)


class AccessLog:
    """Record of which example ids each sequence's training loop touched."""

    def __init__(self):
        self.touched: dict[int, set[int]] = {}

    def record(self, sequence: int, example_ids: np.ndarray) -> None:
        self.touched.setdefault(sequence, set()).update(int(i) for i in example_ids)


@dataclass
class SequenceDataView:
    """The trainer's only handle on training data: every array it serves is
    logged, so rehearsal-freedom is auditable after the fact."""

    dataset: FeatureDataset
    sequence_index: int
    log: AccessLog = field(default_factory=AccessLog)

    def __len__(self) -> int:
        return len(self.dataset)

    @property
    def example_ids(self) -> np.ndarray:
        return self.dataset.example_ids

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(features as f64, category ids); logs the access."""
        self.log.record(self.sequence_index, self.dataset.example_ids)
        return self.dataset.features.astype(np.float64), self.dataset.category_ids.astype(np.int64)


def sequence_view(
    dataset: FeatureDataset, category_ids, sequence_index: int, log: AccessLog
) -> SequenceDataView:
    """Restrict a dataset to one sequence's categories, wired to the audit log."""
    mask = np.isin(dataset.category_ids, [int(c) for c in category_ids])
    return SequenceDataView(dataset.subset(mask), sequence_index, log)


def audit_rehearsal_free(log: AccessLog, allowed: dict[int, set[int]]) -> list[str]:
    """Return one violation string per sequence that touched foreign examples."""
    violations = []
    for s, ids in sorted(log.touched.items()):
        extra = ids - allowed.get(s, set())
        if extra:
            violations.append(f"sequence {s} read {len(extra)} foreign example(s): {sorted(extra)[:5]}")
    return violations
