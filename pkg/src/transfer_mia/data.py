"""Dataset loading and the target/shadow split protocol.

Two on-disk layouts are supported:

* a directory of class subdirectories holding ``.png``/``.jpg`` images, class
  indices assigned by lexicographic class-name order;
* a packed ``.npz`` archive with ``features`` (N x H x W x C, uint8),
  ``labels`` (N ints) and a JSON ``metadata`` record
  (``num_classes``, ``name``).

Membership ground truth is defined over sample ids, never positions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
DEFAULT_RESOLUTION = 32


class DataError(ValueError):
    """Raised for malformed corpora or invalid split requests."""


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    label: int
    id: str


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """An ordered, immutable collection of labeled images.

    Samples are stored column-wise (``features`` is N x H x W x C float32 in
    [0, 1]) so that model code can batch without restacking.
    """

    features: np.ndarray
    labels: np.ndarray
    ids: tuple[str, ...]
    num_classes: int
    name: str = "dataset"
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64)
        ids = tuple(str(i) for i in self.ids)
        if features.ndim != 4:
            raise DataError(f"features must be N x H x W x C, got shape {features.shape}")
        if not (len(features) == len(labels) == len(ids)):
            raise DataError("features, labels and ids differ in length")
        if len(set(ids)) != len(ids):
            raise DataError(f"duplicate sample ids in {self.name!r}")
        if len(labels) and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DataError(f"label outside [0, {self.num_classes}) in {self.name!r}")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "_index", {sid: i for i, sid in enumerate(ids)})

    @classmethod
    def from_samples(cls, samples: Sequence[LabeledSample], num_classes: int, name: str = "dataset"):
        if not samples:
            raise DataError("cannot build a dataset from zero samples")
        shapes = {s.features.shape for s in samples}
        if len(shapes) != 1:
            raise DataError(f"inconsistent image shapes: {sorted(shapes)}")
        return cls(
            features=np.stack([s.features for s in samples]),
            labels=np.array([s.label for s in samples]),
            ids=tuple(s.id for s in samples),
            num_classes=num_classes,
            name=name,
        )

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[LabeledSample]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> LabeledSample:
        return LabeledSample(self.features[i], int(self.labels[i]), self.ids[i])

    @property
    def samples(self) -> list[LabeledSample]:
        return list(self)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.features.shape[1:])

    def subset(self, ids: Iterable[str], name: str | None = None) -> "LabeledDataset":
        """Return the samples with the given ids, in the order given."""
        try:
            rows = np.array([self._index[str(i)] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"unknown sample id {exc.args[0]!r}") from None
        return LabeledDataset(
            features=self.features[rows],
            labels=self.labels[rows],
            ids=tuple(self.ids[r] for r in rows),
            num_classes=self.num_classes,
            name=name or self.name,
        )

    def same_as(self, other: "LabeledDataset") -> bool:
        return (
            self.ids == other.ids
            and self.num_classes == other.num_classes
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.features, other.features)
        )


@dataclass(frozen=True)
class SplitBundle:
    target_train: LabeledDataset
    target_test: LabeledDataset
    shadow_train: LabeledDataset
    shadow_test: LabeledDataset
    seed: int

    @property
    def partitions(self) -> dict[str, LabeledDataset]:
        return {
            "target_train": self.target_train,
            "target_test": self.target_test,
            "shadow_train": self.shadow_train,
            "shadow_test": self.shadow_test,
        }

    @property
    def target_half(self) -> LabeledDataset:
        return _concat(self.target_train, self.target_test)

    @property
    def shadow_half(self) -> LabeledDataset:
        return _concat(self.shadow_train, self.shadow_test)


def _concat(a: LabeledDataset, b: LabeledDataset) -> LabeledDataset:
    return LabeledDataset(
        features=np.concatenate([a.features, b.features]),
        labels=np.concatenate([a.labels, b.labels]),
        ids=a.ids + b.ids,
        num_classes=a.num_classes,
        name=a.name,
    )


def _halve(ids: Sequence[str]) -> tuple[list[str], list[str]]:
    # extra element goes to the first half
    cut = (len(ids) + 1) // 2
    return list(ids[:cut]), list(ids[cut:])


def split_dataset(dataset: LabeledDataset, seed: int) -> SplitBundle:
    """Evenly split ``dataset`` into target/shadow halves, each into train/test.

    The permutation is drawn over the sorted ids, so the result depends only on
    the id set and ``seed``. Odd counts give the extra sample to the target half
    and, within a half, to the train partition.
    """
    if len(dataset) < 4:
        raise DataError(f"dataset too small to split: {len(dataset)} samples (need >= 4)")
    ordered = sorted(dataset.ids)
    perm = np.random.default_rng(seed).permutation(len(ordered))
    shuffled = [ordered[i] for i in perm]
    target_ids, shadow_ids = _halve(shuffled)
    t_train, t_test = _halve(target_ids)
    s_train, s_test = _halve(shadow_ids)
    name = dataset.name
    return SplitBundle(
        target_train=dataset.subset(t_train, f"{name}/target_train"),
        target_test=dataset.subset(t_test, f"{name}/target_test"),
        shadow_train=dataset.subset(s_train, f"{name}/shadow_train"),
        shadow_test=dataset.subset(s_test, f"{name}/shadow_test"),
        seed=seed,
    )


def chunk(dataset: LabeledDataset, parts: int) -> list[LabeledDataset]:
    """Divide ``dataset`` into ``parts`` contiguous, near-equal, disjoint pieces."""
    if parts < 1 or parts > len(dataset):
        raise DataError(f"cannot divide {len(dataset)} samples into {parts} parts")
    bounds = np.linspace(0, len(dataset), parts + 1).round().astype(int)
    return [
        dataset.subset(dataset.ids[lo:hi], f"{dataset.name}[{i}]")
        for i, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:]))
    ]


def _resize(img: np.ndarray, resolution: int | None) -> np.ndarray:
    """uint8 H x W x C -> float32 resolution x resolution x C in [0, 1]."""
    if resolution is not None and img.shape[:2] != (resolution, resolution):
        channels = img.shape[2]
        pil = Image.fromarray(img[..., 0] if channels == 1 else img)
        pil = pil.resize((resolution, resolution), Image.BILINEAR)
        img = np.asarray(pil).reshape(resolution, resolution, channels)
    return img.astype(np.float32) / 255.0


def _limit(dataset: LabeledDataset, limit: int | None) -> LabeledDataset:
    if limit is None or limit >= len(dataset):
        return dataset
    if limit < 1:
        raise DataError(f"limit must be positive, got {limit}")
    ordered = sorted(dataset.ids)
    # evenly strided over sorted ids so every class keeps representation
    picks = np.linspace(0, len(ordered) - 1, limit).round().astype(int)
    return dataset.subset([ordered[i] for i in picks])


def _load_directory(root: Path, resolution: int | None) -> LabeledDataset:
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DataError(f"empty class: no class subdirectories under {root}")
    samples = []
    for label, class_dir in enumerate(class_dirs):
        files = sorted(p for p in class_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise DataError(f"empty class: {class_dir} holds no images")
        for f in files:
            with Image.open(f) as im:
                arr = np.asarray(im.convert("RGB"))
            samples.append(LabeledSample(_resize(arr, resolution), label, f"{class_dir.name}/{f.name}"))
    return LabeledDataset.from_samples(samples, num_classes=len(class_dirs), name=root.name)


def _load_packed(path: Path, resolution: int | None) -> LabeledDataset:
    with np.load(path, allow_pickle=False) as archive:
        raw = archive["features"]
        labels = archive["labels"].astype(np.int64)
        meta = json.loads(str(archive["metadata"]))
        ids = archive["ids"].astype(str) if "ids" in archive.files else None
    if raw.dtype != np.uint8 or raw.ndim != 4:
        raise DataError(f"{path}: features must be uint8 N x H x W x C")
    num_classes = int(meta["num_classes"])
    name = str(meta.get("name", path.stem))
    counts = np.bincount(labels, minlength=num_classes)
    if len(counts) > num_classes:
        raise DataError(f"{path}: label outside [0, {num_classes})")
    if (counts == 0).any():
        raise DataError(f"empty class: {path} has no samples of class {int(np.argmin(counts))}")
    if ids is None:
        ids = [f"{name}-{i:06d}" for i in range(len(labels))]
    features = np.stack([_resize(img, resolution) for img in raw])
    return LabeledDataset(features, labels, tuple(ids), num_classes, name)


def load_dataset(
    source: str | Path, limit: int | None = None, resolution: int | None = DEFAULT_RESOLUTION
) -> LabeledDataset:
    """Load a corpus from a class-directory tree or a packed ``.npz`` file.

    Images are resized to ``resolution`` x ``resolution`` (pass ``None`` to keep
    the stored size). ``limit`` keeps a deterministic, evenly strided subset of
    the sorted ids.
    """
    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    if path.is_dir():
        dataset = _load_directory(path, resolution)
    elif path.suffix == ".npz":
        dataset = _load_packed(path, resolution)
    else:
        raise DataError(f"unsupported dataset layout: {path}")
    return _limit(dataset, limit)


def save_packed(dataset_or_arrays, path: str | Path, num_classes: int | None = None, name: str | None = None):
    """Write the packed layout. Accepts a LabeledDataset or a (uint8 features, labels) pair."""
    if isinstance(dataset_or_arrays, LabeledDataset):
        ds = dataset_or_arrays
        features = np.clip(np.round(ds.features * 255), 0, 255).astype(np.uint8)
        labels, ids = ds.labels, np.array(ds.ids)
        num_classes = ds.num_classes if num_classes is None else num_classes
        name = ds.name if name is None else name
    else:
        features, labels = dataset_or_arrays
        ids = None
    meta = json.dumps({"num_classes": int(num_classes), "name": name})
    arrays = {"features": np.asarray(features, dtype=np.uint8), "labels": np.asarray(labels, dtype=np.int64),
              "metadata": np.array(meta)}
    if ids is not None:
        arrays["ids"] = ids
    np.savez_compressed(path, **arrays)
