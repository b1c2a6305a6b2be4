"""Dataset manifests: loading, stratified splitting, class weights, rebalance plans.

Manifest files are comma-separated UTF-8 text with a `path,label[,split[,mask]]`
header. Label order comes from an optional leading `# labels: a,b,c` comment
or from first-seen order in the data. All operations are pure functions of
their inputs.
"""

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .util import rng_for

SPLITS = ("train", "val", "test", "unassigned")


class ManifestError(ValueError):
    """Raised for malformed or inconsistent manifest files."""


@dataclass(frozen=True)
class LabelMap:
    names: tuple

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ManifestError(f"duplicate label names: {self.names}")
        if len(self.names) < 2:
            raise ManifestError(f"at least 2 classes required, got {list(self.names)}")

    @property
    def k(self) -> int:
        return len(self.names)

    def id_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ManifestError(f"unknown label name {name!r}") from None


@dataclass(frozen=True)
class Sample:
    image_path: str
    label_id: int
    split: str = "unassigned"
    mask_path: str = ""


@dataclass(frozen=True)
class DatasetManifest:
    samples: tuple
    label_map: LabelMap

    @property
    def counts(self) -> np.ndarray:
        c = np.zeros(self.label_map.k, dtype=np.int64)
        for s in self.samples:
            c[s.label_id] += 1
        return c

    @property
    def n(self) -> int:
        return len(self.samples)

    def subset(self, split: str) -> tuple:
        return tuple(s for s in self.samples if s.split == split)

    def split_counts(self, split: str) -> np.ndarray:
        c = np.zeros(self.label_map.k, dtype=np.int64)
        for s in self.samples:
            if s.split == split:
                c[s.label_id] += 1
        return c


@dataclass(frozen=True)
class SplitFractions:
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2

    def __post_init__(self):
        for name, f in (("train", self.train), ("val", self.val), ("test", self.test)):
            if not 0.0 < f < 1.0:
                raise ManifestError(f"split fraction {name}={f} must lie in (0,1)")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ManifestError(
                f"split fractions must sum to 1, got {self.train}+{self.val}+{self.test}")


def load_manifest(path, label_order: str = "auto") -> DatasetManifest:
    """Parse a manifest file.

    label_order: 'declared' requires a leading `# labels:` comment, 'first_seen'
    ignores it, 'auto' uses the comment when present.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()

    declared = None
    lineno = 0
    while lines and lines[0].lstrip().startswith("#"):
        comment = lines[0].lstrip().lstrip("#").strip()
        if declared is None and comment.lower().startswith("labels:"):
            declared = tuple(n.strip() for n in comment[len("labels:"):].split(",") if n.strip())
        lines = lines[1:]
        lineno += 1
    if label_order == "declared" and declared is None:
        raise ManifestError(f"{path}: label_order=declared but no '# labels:' comment")
    if label_order == "first_seen":
        declared = None

    rows = list(csv.reader(lines))
    if not rows:
        raise ManifestError(f"{path}: empty manifest")
    header = [h.strip() for h in rows[0]]
    allowed = ["path", "label", "split", "mask"]
    if header[:2] != ["path", "label"] or header != allowed[: len(header)]:
        raise ManifestError(f"{path}: header must be path,label[,split[,mask]], got {header}")
    has_split = "split" in header
    has_mask = "mask" in header

    raw = []
    names = list(declared) if declared else []
    for offset, row in enumerate(rows[1:], start=2):
        line = offset + lineno
        if not row or all(not f.strip() for f in row):
            continue
        if len(row) != len(header):
            raise ManifestError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
        p = row[0].strip()
        label = row[1].strip()
        if not p or not label:
            raise ManifestError(f"{path}:{line}: empty path or label")
        if "," in p:
            raise ManifestError(f"{path}:{line}: image path may not contain commas")
        if declared is not None:
            if label not in names:
                raise ManifestError(f"{path}:{line}: unknown label name {label!r} "
                                    f"(declared: {','.join(names)})")
        elif label not in names:
            names.append(label)
        split = row[header.index("split")].strip() if has_split else ""
        split = split or "unassigned"
        if split not in SPLITS:
            raise ManifestError(f"{path}:{line}: invalid split {split!r}")
        mask = row[header.index("mask")].strip() if has_mask else ""
        raw.append((p, label, split, mask))

    if not raw:
        raise ManifestError(f"{path}: empty manifest")
    label_map = LabelMap(tuple(names))
    samples = tuple(Sample(p, label_map.id_of(label), split, mask)
                    for p, label, split, mask in raw)
    m = DatasetManifest(samples, label_map)
    if (m.counts == 0).any():
        missing = [label_map.names[i] for i in np.flatnonzero(m.counts == 0)]
        raise ManifestError(f"{path}: declared labels with no samples: {missing}")
    return m


def write_manifest(path, m: DatasetManifest, note: str = ""):
    """Write a manifest with the split column filled (same format as input)."""
    has_mask = any(s.mask_path for s in m.samples)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# labels: {','.join(m.label_map.names)}\n")
        if note:
            fh.write(f"# {note}\n")
        writer = csv.writer(fh, lineterminator="\n")
        header = ["path", "label", "split"] + (["mask"] if has_mask else [])
        writer.writerow(header)
        for s in m.samples:
            row = [s.image_path, m.label_map.names[s.label_id], s.split]
            if has_mask:
                row.append(s.mask_path)
            writer.writerow(row)


def _largest_remainder(n: int, fractions) -> list:
    """Round n*f_i to integers summing to n; ties and leftovers favor earlier entries."""
    ideal = [n * f for f in fractions]
    base = [math.floor(v) for v in ideal]
    leftover = n - sum(base)
    order = sorted(range(len(fractions)),
                   key=lambda i: (-(ideal[i] - base[i]), i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def stratified_split(m: DatasetManifest, f: SplitFractions = SplitFractions(),
                     seed: int = 0) -> DatasetManifest:
    """Assign train/val/test per class with largest-remainder rounding.

    Leftover tie-breaks favor train. The assignment is a pure function of
    (manifest order, seed); per-class counts differ from n_c*f by < 1.
    """
    counts = m.counts
    for cid, n_c in enumerate(counts):
        if n_c < 3:
            raise ManifestError(
                f"class {m.label_map.names[cid]!r} has {n_c} samples; "
                f"need >= 3 to place one in each split")
    assignment = {}
    for cid in range(m.label_map.k):
        idx = [i for i, s in enumerate(m.samples) if s.label_id == cid]
        n_train, n_val, n_test = _largest_remainder(len(idx), (f.train, f.val, f.test))
        perm = rng_for(seed, "split", cid).permutation(len(idx))
        shuffled = [idx[j] for j in perm]
        for i in shuffled[:n_train]:
            assignment[i] = "train"
        for i in shuffled[n_train:n_train + n_val]:
            assignment[i] = "val"
        for i in shuffled[n_train + n_val:]:
            assignment[i] = "test"
    samples = tuple(replace(s, split=assignment[i]) for i, s in enumerate(m.samples))
    return DatasetManifest(samples, m.label_map)


def compute_class_weights(m: DatasetManifest) -> np.ndarray:
    """Per-class loss weights w_c = N / (K * n_c); inverse to class frequency."""
    counts = m.counts
    if (counts == 0).any():
        zero = [m.label_map.names[i] for i in np.flatnonzero(counts == 0)]
        raise ManifestError(f"zero-count classes: {zero}")
    return m.n / (m.label_map.k * counts.astype(np.float64))


def rebalance_plan(m: DatasetManifest, cap_ratio: float = math.inf) -> np.ndarray:
    """Per-class counts of synthetic training samples to schedule.

    Targets min(max_count, ceil(cap_ratio * n_c)) per class against the train
    split (all samples if no split is assigned yet); the majority class gets 0.
    """
    if cap_ratio < 1:
        raise ManifestError(f"cap_ratio must be >= 1, got {cap_ratio}")
    counts = m.split_counts("train")
    if counts.sum() == 0:
        counts = m.counts
    max_count = int(counts.max())
    plan = np.zeros(m.label_map.k, dtype=np.int64)
    for cid, n_c in enumerate(counts.tolist()):
        if n_c == 0:
            continue
        target = max_count if math.isinf(cap_ratio) else min(max_count, math.ceil(cap_ratio * n_c))
        plan[cid] = max(target - n_c, 0)
    return plan
