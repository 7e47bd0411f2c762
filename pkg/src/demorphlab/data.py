"""Manifest-driven dataset handling: loading, subject-disjoint splitting,
preprocessing, and batching.

Sample manifests are CSV with header
`input_path,gt1_path,gt2_path,label,subject1_id,subject2_id`. Paths resolve
relative to the manifest's directory. Non-morphed rows follow the duplicate
convention: both ground-truth paths equal the input path.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import ManifestError, SplitError, StructuralError
from .image_io import load_image

SAMPLE_MANIFEST_HEADER = [
    "input_path",
    "gt1_path",
    "gt2_path",
    "label",
    "subject1_id",
    "subject2_id",
]

LABELS = ("morphed", "non_morphed")


@dataclass(frozen=True)
class SampleRecord:
    input_path: Path
    gt1_path: Path
    gt2_path: Path
    label: str  # "morphed" | "non_morphed"
    subject_ids: tuple

    def __post_init__(self):
        if self.label not in LABELS:
            raise ManifestError(f"unknown label {self.label!r}")
        if self.label == "morphed" and self.subject_ids[0] == self.subject_ids[1]:
            raise ManifestError(
                f"morphed sample {self.input_path} must have distinct subject ids"
            )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    seed: int = 0


def load_manifest(path) -> list:
    """Parse a sample manifest into SampleRecords."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != SAMPLE_MANIFEST_HEADER:
            raise ManifestError(
                f"{path}: header must be {','.join(SAMPLE_MANIFEST_HEADER)}"
            )
        for idx, row in enumerate(reader, start=1):
            try:
                label = row["label"].strip()
                input_path = (base / row["input_path"]).resolve()
                gt1 = row["gt1_path"].strip()
                gt2 = row["gt2_path"].strip()
                if label == "non_morphed":
                    # duplicate convention: blanks fall back to the input
                    gt1_path = (base / gt1).resolve() if gt1 else input_path
                    gt2_path = (base / gt2).resolve() if gt2 else input_path
                else:
                    if not gt1 or not gt2:
                        raise ManifestError("morphed row missing ground-truth path")
                    gt1_path = (base / gt1).resolve()
                    gt2_path = (base / gt2).resolve()
                record = SampleRecord(
                    input_path=input_path,
                    gt1_path=gt1_path,
                    gt2_path=gt2_path,
                    label=label,
                    subject_ids=(row["subject1_id"].strip(), row["subject2_id"].strip()),
                )
            except ManifestError as exc:
                raise ManifestError(f"{path}: row {idx}: {exc}") from exc
            except (KeyError, TypeError, AttributeError) as exc:
                raise ManifestError(f"{path}: malformed row {idx}") from exc
            records.append(record)
    return records


def write_manifest(records, path) -> None:
    """Write SampleRecords back out, relativizing paths where possible."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()

    def rel(p: Path) -> str:
        try:
            return str(Path(p).resolve().relative_to(base))
        except ValueError:
            return str(p)

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SAMPLE_MANIFEST_HEADER)
        for r in records:
            writer.writerow(
                [rel(r.input_path), rel(r.gt1_path), rel(r.gt2_path), r.label,
                 r.subject_ids[0], r.subject_ids[1]]
            )


def record_subjects(record: SampleRecord) -> set:
    return set(record.subject_ids)


def subject_disjoint_split(records, spec: SplitSpec):
    """Partition records so train and test share no subject identity.

    Subjects are shuffled by seed; the first `train_fraction` form the train
    pool. Straddling morphs go to test, and the contamination is closed
    transitively: every record touching a subject that appears in any
    test-bound record is pushed to test too, so the partitions end up
    strictly subject-disjoint (the conservative reading of the protocol).
    """
    subjects = sorted({s for r in records for s in record_subjects(r)})
    if len(subjects) < 2:
        raise SplitError(f"need at least 2 subjects to split, got {len(subjects)}")
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(subjects))
    n_train = int(round(spec.train_fraction * len(subjects)))
    train_pool = {subjects[i] for i in order[:n_train]}

    test_subjects = set(subjects) - train_pool
    changed = True
    while changed:
        changed = False
        for r in records:
            subs = record_subjects(r)
            if subs & test_subjects and not subs <= test_subjects:
                test_subjects |= subs
                changed = True
    train = [r for r in records if not record_subjects(r) & test_subjects]
    test = [r for r in records if record_subjects(r) & test_subjects]
    return train, test


def split_summary(train, test) -> str:
    """Plain-text per-partition counts (split x label x subjects x images)."""
    lines = ["split,kind,subjects,images"]
    for name, part in (("train", train), ("test", test)):
        for label in LABELS:
            rows = [r for r in part if r.label == label]
            subjects = {s for r in rows for s in record_subjects(r)}
            lines.append(f"{name},{label},{len(subjects)},{len(rows)}")
    return "\n".join(lines) + "\n"


def bilinear_resize(img: np.ndarray, target_size) -> np.ndarray:
    """Bilinear resize with the half-pixel (align_corners=False) convention."""
    th, tw = target_size
    h, w = img.shape[:2]
    if (h, w) == (th, tw):
        return img.copy()
    ys = (np.arange(th, dtype=np.float64) + 0.5) * (h / th) - 0.5
    xs = (np.arange(tw, dtype=np.float64) + 0.5) * (w / tw) - 0.5
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    ty = (ys - y0)[:, None, None]
    tx = (xs - x0)[None, :, None]
    y0i = np.clip(y0.astype(np.int64), 0, h - 1)
    y1i = np.clip(y0.astype(np.int64) + 1, 0, h - 1)
    x0i = np.clip(x0.astype(np.int64), 0, w - 1)
    x1i = np.clip(x0.astype(np.int64) + 1, 0, w - 1)
    top = img[np.ix_(y0i, x0i)] * (1 - tx) + img[np.ix_(y0i, x1i)] * tx
    bot = img[np.ix_(y1i, x0i)] * (1 - tx) + img[np.ix_(y1i, x1i)] * tx
    return top * (1 - ty) + bot * ty


def preprocess(img: np.ndarray, target_size, crop_box=None, crop_hook=None) -> np.ndarray:
    """Optionally crop (explicit box or pluggable hook), then resize.

    `crop_box` is (top, left, height, width) in pixels. `crop_hook` is a
    callable image -> crop_box; it stands in for an external face detector
    and defaults to no cropping.
    """
    img = np.asarray(img, dtype=np.float64)
    if crop_box is None and crop_hook is not None:
        crop_box = crop_hook(img)
    if crop_box is not None:
        top, left, ch, cw = (int(v) for v in crop_box)
        h, w = img.shape[:2]
        if top < 0 or left < 0 or ch <= 0 or cw <= 0 or top + ch > h or left + cw > w:
            raise StructuralError(f"crop box {crop_box} outside image {h}x{w}")
        img = img[top : top + ch, left : left + cw]
    out = bilinear_resize(img, target_size)
    return np.clip(out, 0.0, 1.0)


@dataclass
class Batch:
    inputs: torch.Tensor  # (B, 3, H, W)
    gt1: torch.Tensor
    gt2: torch.Tensor
    labels: list

    def __post_init__(self):
        if not (self.inputs.shape == self.gt1.shape == self.gt2.shape):
            raise StructuralError("batch stacks must share shape")


def load_sample_tensors(record: SampleRecord, image_size, crop_hook=None):
    """Read one record's images as (3, H, W) float32 tensors."""
    def prep(path):
        arr = preprocess(load_image(path), image_size, crop_hook=crop_hook)
        return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).float()

    return prep(record.input_path), prep(record.gt1_path), prep(record.gt2_path)


def iter_batches(records, batch_size, image_size, order=None, crop_hook=None):
    """Yield Batches covering every record exactly once.

    `order` is an optional permutation of record indices; iteration order is
    fully determined by it, independent of any worker pool a caller might
    layer on top.
    """
    if order is None:
        order = range(len(records))
    buf = []
    for idx in order:
        record = records[idx]
        buf.append((load_sample_tensors(record, image_size, crop_hook), record.label))
        if len(buf) == batch_size:
            yield _stack_batch(buf)
            buf = []
    if buf:
        yield _stack_batch(buf)


def _stack_batch(buf):
    inputs = torch.stack([tensors[0] for tensors, _ in buf])
    gt1 = torch.stack([tensors[1] for tensors, _ in buf])
    gt2 = torch.stack([tensors[2] for tensors, _ in buf])
    return Batch(inputs=inputs, gt1=gt1, gt2=gt2, labels=[label for _, label in buf])
