"""Corpus ingestion and deterministic train/validation/test splitting.

The corpus lives on disk as one directory per class
(``<root>/Uninfected/*.png``, ``<root>/Parasitized/*.png``, matched
case-insensitively) with the global label convention uninfected=0,
parasitized=1. All published split sizes are expressed as fractions of the
canonical corpus so the same schemes work on any corpus size; the absolute
published counts fall out exactly when the corpus matches.
"""

from __future__ import annotations

import enum
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .metrics import CLASS_NAMES

log = logging.getLogger(__name__)

NIH_CITATION_URL = "https://lhncbc.nlm.nih.gov/LHC-research/LHC-projects/image-processing/malaria-datasheet.html"

# Canonical corpus accounting used to derive split fractions: 13,779 images
# per class, 8,000/class to train and 3,000/class to validation for the
# transfer scheme.
_CANONICAL_PER_CLASS = 13779
_TRANSFER_TRAIN_PER_CLASS = 8000
_TRANSFER_VAL_PER_CLASS = 3000


class SplitScheme(enum.Enum):
    SVM_SCHEME = "svm"
    CNN_SCHEME = "cnn"
    TRANSFER_SCHEME = "transfer"

    @classmethod
    def parse(cls, text: str) -> "SplitScheme":
        for scheme in cls:
            if scheme.value == text or scheme.name == text:
                return scheme
        raise ValueError(f"unknown split scheme {text!r}")


class CorpusLayoutError(Exception):
    """The on-disk corpus is missing a class directory."""


@dataclass
class LabeledImage:
    """A cell image plus its binary label. Pixels decode lazily from
    source_path unless the instance was built from an in-memory array."""

    source_path: str
    label: int
    _pixels: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")

    @classmethod
    def from_array(cls, pixels: np.ndarray, label: int, source_path: str) -> "LabeledImage":
        pixels = np.asarray(pixels)
        if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ValueError(f"expected an (H, W, 3) image, got shape {pixels.shape}")
        return cls(source_path=source_path, label=label, _pixels=pixels)

    @property
    def pixels(self) -> np.ndarray:
        if self._pixels is not None:
            return self._pixels
        with Image.open(self.source_path) as im:
            return np.asarray(im.convert("RGB"))

    @property
    def class_name(self) -> str:
        return CLASS_NAMES[self.label]


@dataclass
class IngestionSummary:
    per_class: dict[str, int]
    skipped: list[tuple[str, str]]  # (path, reason)

    @property
    def total(self) -> int:
        return sum(self.per_class.values())


def _class_directories(root_dir: Path) -> dict[int, Path]:
    """Case-insensitive lookup of the two class directories."""
    if not root_dir.is_dir():
        raise CorpusLayoutError(f"corpus root {root_dir} is not a directory")
    found: dict[int, Path] = {}
    for entry in root_dir.iterdir():
        if entry.is_dir() and entry.name.lower() in {n.lower() for n in CLASS_NAMES}:
            label = CLASS_NAMES.index(entry.name.lower())
            found[label] = entry
    missing = [CLASS_NAMES[i] for i in (0, 1) if i not in found]
    if missing:
        raise CorpusLayoutError(
            f"missing class director{'y' if len(missing) == 1 else 'ies'} "
            f"{missing} under {root_dir}; expected <root>/Uninfected and <root>/Parasitized"
        )
    return found


def _verify_decodable(path: Path) -> str | None:
    try:
        with Image.open(path) as im:
            im.verify()
        return None
    except Exception as exc:  # PIL raises a zoo of types for broken files
        return f"{type(exc).__name__}: {exc}"


def ingest_corpus(
    root_dir, limit_per_class: int | None = None, workers: int = 4
) -> tuple[list[LabeledImage], IngestionSummary]:
    """Scan the class-per-directory corpus into labeled references.

    Files are checked for decodability (in parallel); broken ones are
    skipped with a warning and counted in the summary. The returned list is
    ordered lexicographically by source path, so it is deterministic before
    any seeded shuffling.
    """
    root_dir = Path(root_dir)
    dirs = _class_directories(root_dir)

    images: list[LabeledImage] = []
    skipped: list[tuple[str, str]] = []
    per_class = {name: 0 for name in CLASS_NAMES}
    for label in (0, 1):
        paths = sorted(p for p in dirs[label].iterdir() if p.suffix.lower() == ".png")
        if limit_per_class is not None:
            paths = paths[:limit_per_class]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_verify_decodable, paths))
        for path, problem in zip(paths, results):
            if problem is not None:
                log.warning("skipping undecodable image %s (%s)", path, problem)
                skipped.append((str(path), problem))
                continue
            images.append(LabeledImage(source_path=str(path), label=label))
            per_class[CLASS_NAMES[label]] += 1

    images.sort(key=lambda im: im.source_path)
    return images, IngestionSummary(per_class=per_class, skipped=skipped)


@dataclass
class DatasetSplit:
    train: list[LabeledImage]
    validation: list[LabeledImage]
    test: list[LabeledImage]
    seed: int
    scheme: SplitScheme

    def parts(self) -> dict[str, list[LabeledImage]]:
        return {"train": self.train, "validation": self.validation, "test": self.test}

    def per_class_counts(self) -> dict[str, dict[str, int]]:
        out = {}
        for part, images in self.parts().items():
            counts = {name: 0 for name in CLASS_NAMES}
            for im in images:
                counts[im.class_name] += 1
            out[part] = counts
        return out

    def sizes(self) -> tuple[int, int, int]:
        return (len(self.train), len(self.validation), len(self.test))


def _fraction_counts(n: int, train_frac: float, val_frac: float) -> tuple[int, int, int]:
    """Floor train and validation; the remainder goes to test so the test
    set is never smaller than intended."""
    n_train = int(n * train_frac)
    n_val = int(n * val_frac)
    return n_train, n_val, n - n_train - n_val


def make_split(corpus: list[LabeledImage], scheme: SplitScheme, seed: int) -> DatasetSplit:
    """Partition the corpus under one of the three published schemes.

    - SVM_SCHEME: 70/15/15 fractions.
    - CNN_SCHEME: 85% train, remainder halved into validation/test.
    - TRANSFER_SCHEME: class-balanced train and validation; 8,000 and
      3,000 per class on the canonical corpus, scaled down fractionally
      (with a warning) when the corpus is smaller; remainder to test.

    Shuffling is driven entirely by ``seed``: identical inputs give
    identical splits.
    """
    if not corpus:
        raise ValueError("cannot split an empty corpus")
    ordered = sorted(corpus, key=lambda im: im.source_path)
    rng = np.random.default_rng(seed)

    if scheme is SplitScheme.TRANSFER_SCHEME:
        pools: dict[int, list[LabeledImage]] = {0: [], 1: []}
        for im in ordered:
            pools[im.label].append(im)
        if not pools[0] or not pools[1]:
            raise ValueError("TRANSFER_SCHEME needs samples from both classes to balance")
        min_class = min(len(pools[0]), len(pools[1]))
        if min_class >= _TRANSFER_TRAIN_PER_CLASS + _TRANSFER_VAL_PER_CLASS + 1:
            n_train_pc, n_val_pc = _TRANSFER_TRAIN_PER_CLASS, _TRANSFER_VAL_PER_CLASS
        else:
            n_train_pc = int(min_class * _TRANSFER_TRAIN_PER_CLASS / _CANONICAL_PER_CLASS)
            n_val_pc = int(min_class * _TRANSFER_VAL_PER_CLASS / _CANONICAL_PER_CLASS)
            log.warning(
                "corpus too small for the fixed transfer counts; using %d train / %d val per class",
                n_train_pc,
                n_val_pc,
            )
        if n_train_pc < 1 or n_val_pc < 1:
            raise ValueError(
                f"corpus too small for a balanced transfer split "
                f"(smallest class has {min_class} images)"
            )
        train: list[LabeledImage] = []
        val: list[LabeledImage] = []
        test: list[LabeledImage] = []
        for label in (0, 1):
            pool = pools[label]
            order = rng.permutation(len(pool))
            shuffled = [pool[i] for i in order]
            train.extend(shuffled[:n_train_pc])
            val.extend(shuffled[n_train_pc : n_train_pc + n_val_pc])
            test.extend(shuffled[n_train_pc + n_val_pc :])
        return DatasetSplit(train=train, validation=val, test=test, seed=seed, scheme=scheme)

    if scheme is SplitScheme.SVM_SCHEME:
        n_train, n_val, _ = _fraction_counts(len(ordered), 0.70, 0.15)
    elif scheme is SplitScheme.CNN_SCHEME:
        n_train = int(len(ordered) * 0.85)
        remainder = len(ordered) - n_train
        n_val = remainder // 2
    else:  # pragma: no cover - exhaustive enum
        raise ValueError(f"unknown scheme {scheme}")

    order = rng.permutation(len(ordered))
    shuffled = [ordered[i] for i in order]
    return DatasetSplit(
        train=shuffled[:n_train],
        validation=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
        seed=seed,
        scheme=scheme,
    )


def balanced_subset(corpus: list[LabeledImage], total: int, seed: int) -> list[LabeledImage]:
    """Seeded subsample with per-class counts as equal as possible
    (difference at most one when ``total`` is odd)."""
    pools: dict[int, list[LabeledImage]] = {0: [], 1: []}
    for im in sorted(corpus, key=lambda im: im.source_path):
        pools[im.label].append(im)
    want = {0: total // 2, 1: total - total // 2}
    for label in (0, 1):
        if len(pools[label]) < want[label]:
            raise ValueError(
                f"class {CLASS_NAMES[label]} has {len(pools[label])} images, "
                f"need {want[label]} for a balanced subset of {total}"
            )
    rng = np.random.default_rng(seed)
    out: list[LabeledImage] = []
    for label in (0, 1):
        order = rng.permutation(len(pools[label]))
        out.extend(pools[label][i] for i in order[: want[label]])
    out.sort(key=lambda im: im.source_path)
    return out


def write_manifest(split: DatasetSplit, path) -> None:
    obj = {
        "scheme": split.scheme.value,
        "seed": split.seed,
        "train": [im.source_path for im in split.train],
        "validation": [im.source_path for im in split.validation],
        "test": [im.source_path for im in split.test],
    }
    with open(path, "w") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")


def read_manifest(path) -> DatasetSplit:
    """Rebuild a split from its manifest; labels re-derive from the class
    directory each path sits in."""
    with open(path) as f:
        obj = json.load(f)

    def build(paths: list[str]) -> list[LabeledImage]:
        out = []
        for p in paths:
            parent = Path(p).parent.name.lower()
            if parent not in {n.lower() for n in CLASS_NAMES}:
                raise CorpusLayoutError(f"manifest path {p} is not under a class directory")
            out.append(LabeledImage(source_path=p, label=CLASS_NAMES.index(parent)))
        return out

    return DatasetSplit(
        train=build(obj["train"]),
        validation=build(obj["validation"]),
        test=build(obj["test"]),
        seed=obj["seed"],
        scheme=SplitScheme.parse(obj["scheme"]),
    )
