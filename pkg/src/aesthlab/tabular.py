"""Attribute tables: dataset type, CSV ingestion, benchmark adapters, splits.

The canonical on-disk format is a UTF-8 CSV with a header row in which the
column named ``overall`` holds the target and every other column is a numeric
attribute score.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    BadGeneratorSpec,
    CountsExceedN,
    EmptyTable,
    EmptyVoteList,
    MissingTargetColumn,
    NonNumericCell,
    OutOfScaleVote,
    RangeViolation,
    WrongColumnSet,
)

TARGET = "overall"
SCHEMAS = ("generic", "aadb", "eva", "para")

AADB_FEATURES = (
    "balancing_elements",
    "colour_harmony",
    "content",
    "depth_of_field",
    "light",
    "motion_blur",
    "object_emphasis",
    "repetition",
    "rule_of_thirds",
    "symmetry",
    "vivid_colour",
)
AADB_UNSIGNED = ("repetition", "symmetry")

EVA_FEATURES = ("light_and_colour", "composition_and_depth", "quality", "semantics")

PARA_FEATURES = (
    "quality",
    "composition",
    "colour",
    "depth_of_field",
    "light",
    "content",
    "object_emphasis",
)

# Column spellings found in the released annotation files.
_ALIASES = {
    "balacingelements": "balancing_elements",
    "balancingelements": "balancing_elements",
    "balancing_element": "balancing_elements",
    "colorharmony": "colour_harmony",
    "color_harmony": "colour_harmony",
    "interesting_content": "content",
    "dof": "depth_of_field",
    "shallow_depth_of_field": "depth_of_field",
    "good_lighting": "light",
    "motionblur": "motion_blur",
    "object": "object_emphasis",
    "objectemphasis": "object_emphasis",
    "ruleofthirds": "rule_of_thirds",
    "vividcolor": "vivid_colour",
    "vivid_color": "vivid_colour",
    "color": "colour",
    "light_and_color": "light_and_colour",
}


def canonical_name(name: str) -> str:
    key = name.strip().lower().replace(" ", "_").replace("-", "_")
    return _ALIASES.get(key, key)


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix with named attribute columns and one target per row.

    A zero-row dataset is allowed so that degenerate splits have a value; files
    and adapters refuse empty input.
    """

    feature_names: tuple
    rows: np.ndarray
    targets: np.ndarray
    schema_tag: str = "generic"
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        names = tuple(str(n) for n in self.feature_names)
        rows = np.array(self.rows, dtype=float, copy=True)
        targets = np.array(self.targets, dtype=float, copy=True).reshape(-1)
        if rows.ndim == 1 and rows.size == 0:
            rows = rows.reshape(0, len(names))
        if rows.ndim != 2:
            raise ValueError("rows must be a 2-d matrix")
        if not names:
            raise ValueError("at least one feature is required")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate feature names in {names}")
        if rows.shape[1] != len(names):
            raise ValueError(f"rows have {rows.shape[1]} columns, expected {len(names)}")
        if rows.shape[0] != targets.shape[0]:
            raise ValueError("rows and targets differ in length")
        if not (np.all(np.isfinite(rows)) and np.all(np.isfinite(targets))):
            raise ValueError("dataset contains non-finite values")
        if self.schema_tag not in SCHEMAS:
            raise ValueError(f"unknown schema tag {self.schema_tag!r}")
        rows.flags.writeable = False
        targets.flags.writeable = False
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "targets", targets)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            self.feature_names, self.rows[idx], self.targets[idx], self.schema_tag, dict(self.metadata)
        )

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.feature_names.index(name)]


def load_table(path, schema_tag: str = "generic") -> LabeledDataset:
    """Read a canonical CSV. Feature order follows the header, minus ``overall``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyTable(f"{path}: no header row") from None
        if TARGET not in header:
            raise MissingTargetColumn(f"{path}: no {TARGET!r} column in {header}")
        t_col = header.index(TARGET)
        names = [h for i, h in enumerate(header) if i != t_col]
        rows, targets = [], []
        for r, record in enumerate(reader, start=1):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise NonNumericCell(r, "<row length>", record)
            values = []
            for col, cell in zip(header, record):
                try:
                    v = float(cell)
                except ValueError:
                    raise NonNumericCell(r, col, cell) from None
                if not math.isfinite(v):
                    raise NonNumericCell(r, col, cell)
                values.append(v)
            targets.append(values.pop(t_col))
            rows.append(values)
    if not rows:
        raise EmptyTable(f"{path}: header only")
    return LabeledDataset(tuple(names), np.array(rows), np.array(targets), schema_tag)


def write_table(dataset: LabeledDataset, path) -> None:
    """Write ``dataset`` as canonical CSV; floats use shortest round-trip repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*dataset.feature_names, TARGET])
        for row, y in zip(dataset.rows.tolist(), dataset.targets.tolist()):
            w.writerow([repr(v) for v in row] + [repr(y)])


def _project(raw: LabeledDataset, wanted: Sequence[str]) -> np.ndarray:
    lookup = {}
    for i, name in enumerate(raw.feature_names):
        lookup.setdefault(canonical_name(name), i)
    missing = [w for w in wanted if w not in lookup]
    if missing:
        raise WrongColumnSet(f"missing columns {missing}; have {list(raw.feature_names)}")
    return raw.rows[:, [lookup[w] for w in wanted]]


def _check_range(name, values, lo, hi):
    bad = np.flatnonzero((values < lo) | (values > hi))
    if bad.size:
        raise RangeViolation(name, float(values[bad[0]]), lo, hi)


def adapt_aadb(raw: LabeledDataset) -> LabeledDataset:
    """Validate an AADB table: target and repetition/symmetry in [0, 1], others in [-1, 1]."""
    extra = {canonical_name(n) for n in raw.feature_names} - set(AADB_FEATURES)
    if extra or raw.d != len(AADB_FEATURES):
        raise WrongColumnSet(f"AADB expects {AADB_FEATURES}; got {raw.feature_names}")
    rows = _project(raw, AADB_FEATURES)
    _check_range(TARGET, raw.targets, 0.0, 1.0)
    for j, name in enumerate(AADB_FEATURES):
        lo = 0.0 if name in AADB_UNSIGNED else -1.0
        _check_range(name, rows[:, j], lo, 1.0)
    return LabeledDataset(AADB_FEATURES, rows, raw.targets, "aadb", dict(raw.metadata))


EVA_OVERALL_SCALE = (0.0, 10.0)
EVA_ATTRIBUTE_SCALE = (0.0, 4.0)
EVA_MIN_VOTES = 30


def adapt_eva(votes: Mapping[str, Mapping[str, Sequence[float]]]) -> LabeledDataset:
    """Average per-rater EVA votes into one row per image.

    ``votes`` maps image id to ``{"overall": [...], "<attribute>": [...], ...}``.
    Images with fewer than 30 overall votes are kept; their ids are listed under
    ``metadata["low_vote_images"]``.
    """
    if not votes:
        raise EmptyVoteList("no images")
    ids, rows, targets, counts, low = [], [], [], {}, []
    for image_id, per_image in votes.items():
        per_image = {canonical_name(k): v for k, v in per_image.items()}
        missing = [k for k in (TARGET, *EVA_FEATURES) if k not in per_image]
        if missing:
            raise WrongColumnSet(f"image {image_id}: missing {missing}")
        means = []
        for key in (TARGET, *EVA_FEATURES):
            v = np.asarray(per_image[key], dtype=float)
            if v.size == 0:
                raise EmptyVoteList(f"image {image_id}: no {key} votes")
            lo, hi = EVA_OVERALL_SCALE if key == TARGET else EVA_ATTRIBUTE_SCALE
            if np.any(~np.isfinite(v)) or np.any((v < lo) | (v > hi)):
                raise OutOfScaleVote(f"image {image_id}: {key} vote outside [{lo}, {hi}]")
            means.append(float(np.mean(v)))
        n_votes = len(per_image[TARGET])
        if n_votes < EVA_MIN_VOTES:
            low.append(str(image_id))
        counts[str(image_id)] = n_votes
        ids.append(str(image_id))
        targets.append(means[0])
        rows.append(means[1:])
    if low:
        warnings.warn(f"{len(low)} EVA image(s) have fewer than {EVA_MIN_VOTES} votes", stacklevel=2)
    meta = {"image_ids": ids, "rater_counts": counts, "low_vote_images": low}
    return LabeledDataset(EVA_FEATURES, np.array(rows), np.array(targets), "eva", meta)


def load_eva_votes(path) -> dict:
    """Read long-format votes: one CSV row per (image_id, rater) with score columns.

    Blank cells are skipped, so attribute and overall vote counts may differ.
    """
    votes: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for r, rec in enumerate(csv.DictReader(fh), start=1):
            image = votes.setdefault(rec["image_id"], {})
            for key, cell in rec.items():
                if key in ("image_id", "rater", "rater_id") or cell is None or not cell.strip():
                    continue
                try:
                    image.setdefault(key, []).append(float(cell))
                except ValueError:
                    raise NonNumericCell(r, key, cell) from None
    return votes


def adapt_para(raw: LabeledDataset) -> LabeledDataset:
    """Project a PARA table onto its seven image-oriented attributes.

    Human-oriented columns (emotion, willingness to share, ...) are dropped.
    ``object_emphasis`` stays on its mean-of-binary-labels scale in [0, 1].
    """
    rows = _project(raw, PARA_FEATURES)
    _check_range(TARGET, raw.targets, 1.0, 5.0)
    for j, name in enumerate(PARA_FEATURES):
        lo, hi = (0.0, 1.0) if name == "object_emphasis" else (1.0, 5.0)
        _check_range(name, rows[:, j], lo, hi)
    return LabeledDataset(PARA_FEATURES, rows, raw.targets, "para", dict(raw.metadata))


ADAPTERS = {"aadb": adapt_aadb, "para": adapt_para}


# ---------------------------------------------------------------- splitting


@dataclass(frozen=True)
class SplitSpec:
    """How to partition a dataset.

    ``kind`` is ``"official_counts"`` (``counts=(train, val, test)``; ``test`` may
    be omitted), ``"fraction"`` (``train_frac`` in (0, 1]) or ``"indices"``
    (explicit ``train``/``val``/``test`` index lists).
    """

    kind: str = "fraction"
    train_frac: float = 0.8
    counts: tuple = ()
    indices: tuple = ()
    seed: int = 0

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "SplitSpec":
        """``fraction:0.8``, ``counts:3500,570`` or ``counts:8500,500,1000``."""
        kind, _, arg = text.partition(":")
        if kind == "fraction":
            return cls("fraction", train_frac=float(arg), seed=seed)
        if kind in ("counts", "official_counts"):
            return cls("official_counts", counts=tuple(int(c) for c in arg.split(",")), seed=seed)
        raise ValueError(f"unrecognised split {text!r}")

    def describe(self) -> str:
        if self.kind == "fraction":
            return f"fraction:{self.train_frac!r}"
        if self.kind == "official_counts":
            return "counts:" + ",".join(str(c) for c in self.counts)
        return "indices"


@dataclass(frozen=True)
class Split:
    train: LabeledDataset
    val: LabeledDataset | None
    test: LabeledDataset
    train_idx: np.ndarray
    val_idx: np.ndarray | None
    test_idx: np.ndarray


def split_dataset(data: LabeledDataset, spec: SplitSpec) -> Split:
    n = data.n
    perm = np.random.default_rng(spec.seed).permutation(n)
    val_idx = None
    if spec.kind == "fraction":
        if not 0.0 < spec.train_frac <= 1.0:
            raise ValueError(f"train fraction {spec.train_frac} not in (0, 1]")
        n_train = int(round(spec.train_frac * n))
        train_idx, test_idx = perm[:n_train], perm[n_train:]
    elif spec.kind == "official_counts":
        counts = list(spec.counts)
        if len(counts) not in (2, 3) or min(counts) < 0:
            raise ValueError(f"counts must be (train, test) or (train, val, test); got {counts}")
        if sum(counts) > n:
            raise CountsExceedN(f"counts {counts} exceed n={n}")
        n_train = counts[0]
        train_idx = perm[:n_train]
        if len(counts) == 3:
            val_idx = perm[n_train : n_train + counts[1]]
            test_idx = perm[n_train + counts[1] : n_train + counts[1] + counts[2]]
        else:
            test_idx = perm[n_train : n_train + counts[1]]
    elif spec.kind == "indices":
        parts = [np.asarray(p, dtype=np.int64) for p in spec.indices]
        if len(parts) not in (2, 3):
            raise ValueError("indices split needs (train, test) or (train, val, test)")
        joined = np.concatenate(parts)
        if joined.size > n:
            raise CountsExceedN(f"{joined.size} indices for n={n}")
        if joined.size and (joined.min() < 0 or joined.max() >= n or np.unique(joined).size != joined.size):
            raise ValueError("split indices must be distinct and within range")
        train_idx, test_idx = parts[0], parts[-1]
        val_idx = parts[1] if len(parts) == 3 else None
    else:
        raise ValueError(f"unknown split kind {spec.kind!r}")
    return Split(
        data.subset(train_idx),
        data.subset(val_idx) if val_idx is not None else None,
        data.subset(test_idx),
        train_idx,
        val_idx,
        test_idx,
    )


def export_split(split: Split, directory, spec: SplitSpec | None = None) -> dict:
    """Write train/val/test CSVs plus a ``split.json`` sidecar; returns written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in ("train", "val", "test"):
        part = getattr(split, name)
        if part is None:
            continue
        paths[name] = directory / f"{name}.csv"
        write_table(part, paths[name])
    meta = {
        "schema_tag": split.train.schema_tag,
        "rater_counts": split.train.metadata.get("rater_counts"),
        "split": spec.describe() if spec else None,
        "seed": spec.seed if spec else None,
        "indices": {
            "train": split.train_idx.tolist(),
            "val": None if split.val_idx is None else split.val_idx.tolist(),
            "test": split.test_idx.tolist(),
        },
    }
    paths["meta"] = directory / "split.json"
    paths["meta"].write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return paths


# ---------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class LinearGenerator:
    weights: tuple
    intercept: float = 0.0
    noise_sd: float = 0.0

    def target(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (X.shape[1],):
            raise BadGeneratorSpec(f"{w.size} weights for d={X.shape[1]}")
        return X @ w + self.intercept


@dataclass(frozen=True)
class ProductPairsGenerator:
    pairs: tuple
    noise_sd: float = 0.0

    def target(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        d = X.shape[1]
        if not self.pairs:
            raise BadGeneratorSpec("empty pair list")
        y = np.zeros(X.shape[0])
        for i, j in self.pairs:
            if not (0 <= i < d and 0 <= j < d):
                raise BadGeneratorSpec(f"pair ({i}, {j}) out of range for d={d}")
            y = y + X[:, i] * X[:, j]
        return y


def synth_dataset(n: int, d: int, generator, seed: int = 0) -> LabeledDataset:
    """Uniform [0, 1] features with a linear or pairwise-product target plus Gaussian noise."""
    if n < 1 or d < 1:
        raise BadGeneratorSpec(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    if not isinstance(generator, (LinearGenerator, ProductPairsGenerator)):
        raise BadGeneratorSpec(f"unknown generator {generator!r}")
    if generator.noise_sd < 0:
        raise BadGeneratorSpec("noise_sd must be >= 0")
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(n, d))
    y = generator.target(X)
    noise = rng.normal(0.0, 1.0, size=n) * generator.noise_sd
    names = tuple(f"f{j + 1}" for j in range(d))
    return LabeledDataset(names, X, y + noise, "generic")


# ---------------------------------------------------------------- summaries


@dataclass(frozen=True)
class AttributeDistribution:
    feature_names: tuple
    negative: tuple
    null: tuple
    positive: tuple

    def as_rows(self):
        return list(zip(self.feature_names, self.negative, self.null, self.positive))


def attribute_distribution(data: LabeledDataset) -> AttributeDistribution:
    """Count negative, exactly-zero and positive ratings per attribute."""
    X = data.rows
    return AttributeDistribution(
        data.feature_names,
        tuple(int(c) for c in (X < 0).sum(axis=0)),
        tuple(int(c) for c in (X == 0).sum(axis=0)),
        tuple(int(c) for c in (X > 0).sum(axis=0)),
    )
