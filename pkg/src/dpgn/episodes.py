"""Dataset sources and N-way K-shot episode sampling.

A :class:`DatasetSource` is a read-only mapping from class name to a list of
sample references plus a loader that turns a reference into an array.  Three
backings are supported:

* in-memory arrays (synthetic clusters / synthetic images),
* a directory per class (``root/<class>/<file>``, ``.npy`` or image files),
* a flat feature archive (``root/features.bin`` + ``root/index.txt``).

Episodes are laid out class-major: support position ``i`` in
``[c*K, (c+1)*K)`` holds a shot of episode class ``c``.  The distribution
graph initialisation relies on that ordering.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

SPLITS = ("train", "val", "test")
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif"}


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass
class DatasetSource:
    """Class-indexed samples with a train/val/test assignment per class."""

    classes: list[str]
    split: dict[str, str]
    index: dict[str, Sequence[Any]]
    loader: Callable[[Any], np.ndarray]
    sample_shape: tuple[int, ...]
    root: Path | None = None

    def __post_init__(self):
        for name in self.classes:
            if len(self.index[name]) == 0:
                raise ValueError(f"empty class: {name}")
        for name, part in self.split.items():
            if name not in self.index:
                raise ValueError(f"split references unknown class: {name}")
            if part not in SPLITS:
                raise ValueError(f"unknown split {part!r} for class {name}")

    def classes_in(self, split: str) -> list[str]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return [c for c in self.classes if self.split.get(c) == split]

    def num_samples(self, name: str) -> int:
        return len(self.index[name])

    def load(self, name: str, positions: Sequence[int]) -> np.ndarray:
        refs = self.index[name]
        if isinstance(refs, np.ndarray) and self.loader is _identity:
            return np.asarray(refs[np.asarray(positions)], dtype=np.float32)
        out = [self.loader(refs[int(p)]) for p in positions]
        return np.stack(out).astype(np.float32, copy=False)


def _identity(x):
    return np.asarray(x, dtype=np.float32)


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int = 5
    k_shot: int = 1
    n_query: int = 5
    labeled_ratio: float = 1.0
    transductive: bool = True
    balanced_queries: bool = True

    def __post_init__(self):
        if self.n_way < 2:
            raise ValueError("n_way must be >= 2")
        if self.k_shot < 1:
            raise ValueError("k_shot must be >= 1")
        if self.n_query < 1:
            raise ValueError("n_query must be >= 1")
        if not 0.0 < self.labeled_ratio <= 1.0:
            raise ValueError("labeled_ratio must lie in (0, 1]")

    @property
    def num_support(self) -> int:
        return self.n_way * self.k_shot

    @property
    def num_samples(self) -> int:
        return self.num_support + self.n_query

    @property
    def labeled_per_class(self) -> int:
        """floor(ratio * K), clamped to at least one labeled shot per class."""
        count = math.floor(self.labeled_ratio * self.k_shot + 1e-9)
        if count < 1:
            warnings.warn(
                f"labeled_ratio={self.labeled_ratio} with K={self.k_shot} leaves no "
                "labeled shot; clamping to 1 per class",
                stacklevel=2,
            )
            count = 1
        return count


@dataclass
class Episode:
    support_x: np.ndarray
    support_y: np.ndarray
    labeled: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    classes: list[str] = field(default_factory=list)

    @property
    def n_way(self) -> int:
        return len(self.classes)

    @property
    def k_shot(self) -> int:
        return len(self.support_y) // len(self.classes)

    @property
    def num_samples(self) -> int:
        return len(self.support_y) + len(self.query_y)

    def samples(self) -> np.ndarray:
        """All T samples, supports first."""
        return np.concatenate([self.support_x, self.query_x], axis=0)


def sample_episode(
    src: DatasetSource,
    spec: EpisodeSpec,
    rng,
    split: str = "train",
) -> Episode:
    rng = _as_rng(rng)
    pool = src.classes_in(split)
    n, k = spec.n_way, spec.k_shot
    if len(pool) < n:
        raise ValueError(f"split {split!r} has {len(pool)} classes, need {n}")

    chosen = [pool[i] for i in rng.choice(len(pool), size=n, replace=False)]
    if spec.balanced_queries:
        per_class = np.full(n, spec.n_query // n)
        extra = spec.n_query - per_class.sum()
        if extra:
            per_class[rng.choice(n, size=extra, replace=False)] += 1
    else:
        per_class = np.bincount(rng.integers(0, n, spec.n_query), minlength=n)

    n_labeled = spec.labeled_per_class
    support_x, query_x, query_y = [], [], []
    for c, name in enumerate(chosen):
        need = k + int(per_class[c])
        have = src.num_samples(name)
        if have < need:
            raise ValueError(f"class {name} has {have} samples, episode needs {need}")
        picks = rng.choice(have, size=need, replace=False)
        support_x.append(src.load(name, picks[:k]))
        if per_class[c]:
            query_x.append(src.load(name, picks[k:]))
            query_y.extend([c] * int(per_class[c]))

    query_x = np.concatenate(query_x, axis=0)
    query_y = np.asarray(query_y, dtype=np.int64)
    order = rng.permutation(spec.n_query)

    labeled = np.zeros((n, k), dtype=bool)
    labeled[:, :n_labeled] = True
    return Episode(
        support_x=np.concatenate(support_x, axis=0),
        support_y=np.repeat(np.arange(n, dtype=np.int64), k),
        labeled=labeled.reshape(-1),
        query_x=query_x[order],
        query_y=query_y[order],
        classes=chosen,
    )


class EpisodeStream:
    """Reproducible sequence of episodes from one seed."""

    def __init__(self, src: DatasetSource, spec: EpisodeSpec, seed: int, split: str = "train"):
        self.src = src
        self.spec = spec
        self.split = split
        self.rng = np.random.default_rng(seed)

    def __iter__(self):
        return self

    def __next__(self) -> Episode:
        return sample_episode(self.src, self.spec, self.rng, self.split)

    def take(self, count: int) -> list[Episode]:
        return [next(self) for _ in range(count)]


# --------------------------------------------------------------------------
# Split handling and on-disk layouts


def _resolve_split(classes: Sequence[str], split_spec) -> dict[str, str]:
    if split_spec is None:
        return {c: "train" for c in classes}
    if isinstance(split_spec, (str, Path)):
        return read_split_manifest(split_spec)
    if isinstance(split_spec, Mapping):
        return dict(split_spec)
    counts = tuple(int(v) for v in split_spec)
    if len(counts) != 3 or sum(counts) > len(classes):
        raise ValueError(f"split counts {counts} do not fit {len(classes)} classes")
    out = {}
    names = iter(classes)
    for part, count in zip(SPLITS, counts):
        for _ in range(count):
            out[next(names)] = part
    return out


def read_split_manifest(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1] not in SPLITS:
            raise ValueError(f"{path}:{lineno}: expected '<class_name> <train|val|test>'")
        out[parts[0]] = parts[1]
    return out


def write_split_manifest(split: Mapping[str, str], path) -> None:
    Path(path).write_text("".join(f"{c} {s}\n" for c, s in split.items()))


def _load_image(path: Path, size: int) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        img = img.convert("L").resize((size, size))
        arr = np.asarray(img, dtype=np.float32) / 255.0
    return arr[None]


def load_dataset(root, split_spec=None, image_size: int = 28) -> DatasetSource:
    """Read a dataset root.

    ``split_spec`` is a manifest path, a ``{class: split}`` mapping, or a
    ``(train, val, test)`` count tuple assigned in sorted class order.
    Classes absent from the split are kept but belong to no split.
    """
    root = Path(root)
    if not root.exists():
        raise FileNotFoundError(f"dataset root not found: {root}")

    if (root / "features.bin").exists() and (root / "index.txt").exists():
        src = _load_feature_archive(root)
    else:
        src = _load_class_dirs(root, image_size)
    src.split = _resolve_split(src.classes, split_spec)
    src.__post_init__()
    return src


def _load_class_dirs(root: Path, image_size: int) -> DatasetSource:
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not classes:
        raise ValueError(f"no class directories under {root}")
    index = {}
    for name in classes:
        files = sorted(
            p for p in (root / name).iterdir()
            if p.suffix.lower() in IMAGE_SUFFIXES or p.suffix == ".npy"
        )
        if not files:
            raise ValueError(f"empty class: {name}")
        index[name] = files

    def loader(path: Path) -> np.ndarray:
        if path.suffix == ".npy":
            return np.load(path).astype(np.float32)
        return _load_image(path, image_size)

    shape = loader(index[classes[0]][0]).shape
    return DatasetSource(classes, {}, index, loader, tuple(shape), root)


def _load_feature_archive(root: Path) -> DatasetSource:
    """``index.txt`` lines are ``class_id<TAB>offset<TAB>length`` in bytes of
    little-endian float32 data inside ``features.bin``."""
    blob = np.fromfile(root / "features.bin", dtype="<f4")
    index: dict[str, list[tuple[int, int]]] = {}
    for lineno, line in enumerate((root / "index.txt").read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            name, offset, length = line.split("\t")
            ref = (int(offset), int(length))
        except ValueError:
            raise ValueError(f"{root / 'index.txt'}:{lineno}: malformed index line") from None
        if ref[0] % 4 or ref[1] % 4 or ref[0] + ref[1] > blob.nbytes:
            raise ValueError(f"{root / 'index.txt'}:{lineno}: record outside features.bin")
        index.setdefault(name, []).append(ref)

    def loader(ref: tuple[int, int]) -> np.ndarray:
        start = ref[0] // 4
        return blob[start:start + ref[1] // 4]

    classes = sorted(index)
    dims = {r[1] for refs in index.values() for r in refs}
    if len(dims) != 1:
        raise ValueError("feature records have differing lengths")
    return DatasetSource(classes, {}, index, loader, (dims.pop() // 4,), root)


def write_feature_archive(src: DatasetSource, root) -> Path:
    """Dump a vector-valued source as ``features.bin`` + ``index.txt`` + ``split.txt``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    offset = 0
    lines = []
    with open(root / "features.bin", "wb") as fh:
        for name in src.classes:
            data = src.load(name, range(src.num_samples(name))).reshape(src.num_samples(name), -1)
            for row in data.astype("<f4"):
                raw = row.tobytes()
                fh.write(raw)
                lines.append(f"{name}\t{offset}\t{len(raw)}\n")
                offset += len(raw)
    (root / "index.txt").write_text("".join(lines))
    write_split_manifest({c: src.split[c] for c in src.classes if c in src.split}, root / "split.txt")
    return root


# --------------------------------------------------------------------------
# Synthetic sources


def _default_counts(num_classes: int) -> tuple[int, int, int]:
    val = max(1, round(0.2 * num_classes)) if num_classes >= 3 else 0
    test = max(1, round(0.2 * num_classes)) if num_classes >= 3 else 0
    return num_classes - val - test, val, test


def _class_names(num_classes: int) -> list[str]:
    return [f"c{i:03d}" for i in range(num_classes)]


def make_synthetic_clusters(
    num_classes: int,
    dim: int,
    separation: float,
    rng=0,
    samples_per_class: int = 100,
    splits=None,
) -> DatasetSource:
    """Unit-covariance Gaussian clusters with pairwise mean distance >= ``separation``.

    Means are drawn with spread ``1.5 * separation / sqrt(2 * dim)`` per axis so a
    typical pair sits about 1.5 separations apart; draws closer than
    ``separation`` to an accepted mean are rejected.
    """
    if num_classes < 2 or dim < 2:
        raise ValueError("need num_classes >= 2 and dim >= 2")
    if not separation > 0:
        raise ValueError("separation must be positive")
    rng = _as_rng(rng)
    scale = 1.5 * separation / math.sqrt(2 * dim)
    means: list[np.ndarray] = []
    tries = 0
    while len(means) < num_classes:
        cand = rng.normal(0.0, scale, dim)
        if all(np.linalg.norm(cand - m) >= separation for m in means):
            means.append(cand)
        tries += 1
        if tries > 10000 * num_classes:
            scale *= 1.1
            tries = 0
    names = _class_names(num_classes)
    index = {
        name: (mu + rng.normal(size=(samples_per_class, dim))).astype(np.float32)
        for name, mu in zip(names, means)
    }
    counts = splits if splits is not None else _default_counts(num_classes)
    src = DatasetSource(names, _resolve_split(names, counts), index, _identity, (dim,))
    src.means = np.stack(means)
    return src


def make_synthetic_images(
    num_classes: int,
    rng=0,
    samples_per_class: int = 40,
    size: int = 28,
    noise: float = 0.25,
    splits=None,
) -> DatasetSource:
    """Grayscale ``1 x size x size`` images: a smooth random template per class,
    jittered by up to two pixels and corrupted with Gaussian pixel noise."""
    rng = _as_rng(rng)
    names = _class_names(num_classes)
    coarse = size // 4
    index = {}
    for name in names:
        template = rng.random((coarse, coarse)).repeat(4, 0).repeat(4, 1)
        template = np.pad(template, ((0, size - template.shape[0]),) * 2)
        imgs = np.empty((samples_per_class, 1, size, size), dtype=np.float32)
        for s in range(samples_per_class):
            dy, dx = rng.integers(-2, 3, 2)
            img = np.roll(template, (dy, dx), axis=(0, 1))
            imgs[s, 0] = np.clip(img + noise * rng.normal(size=img.shape), 0.0, 1.0)
        index[name] = imgs
    counts = splits if splits is not None else _default_counts(num_classes)
    return DatasetSource(names, _resolve_split(names, counts), index, _identity, (1, size, size))
