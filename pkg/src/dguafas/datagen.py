"""Synthetic multi-domain, multi-attack feature data and evaluation protocols.

Class 0 is the real face, classes 1..K are known attacks and anything above K
is an unknown attack that only ever appears in test splits. Each domain is an
invertible affine map (block rotation, scale, translation) followed by
additive sensor noise.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ParseError, ProtocolError, SchemaError
from .fileio import atomic_write_text

MODES = ("leave_one_out", "limited_source", "unknown_attack")


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    label: int
    domain: int
    tainted: bool = False


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    domains: np.ndarray
    tainted: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            self.features = self.features.reshape(len(self.labels), -1)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.domains = np.asarray(self.domains, dtype=np.int64)
        if self.tainted is None:
            self.tainted = np.zeros(len(self.labels), dtype=bool)
        self.tainted = np.asarray(self.tainted, dtype=bool)
        n = len(self.labels)
        if not (len(self.features) == len(self.domains) == len(self.tainted) == n):
            raise SchemaError("features, labels, domains and taint flags differ in length")
        if not np.all(np.isfinite(self.features)):
            raise SchemaError("features must be finite")
        if n and (self.labels.min() < 0 or self.domains.min() < 0):
            raise SchemaError("labels and domains must be non-negative")

    def __len__(self):
        return len(self.labels)

    def __iter__(self) -> Iterator[LabeledSample]:
        for i in range(len(self)):
            yield LabeledSample(self.features[i], int(self.labels[i]), int(self.domains[i]), bool(self.tainted[i]))

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "Dataset":
        return Dataset(self.features[index], self.labels[index], self.domains[index], self.tainted[index])

    @classmethod
    def from_samples(cls, samples: Sequence[LabeledSample], input_dim: int | None = None) -> "Dataset":
        if not samples:
            return cls(np.zeros((0, input_dim or 0)), np.zeros(0, np.int64), np.zeros(0, np.int64))
        return cls(
            np.stack([s.features for s in samples]),
            [s.label for s in samples],
            [s.domain for s in samples],
            [s.tainted for s in samples],
        )


@dataclass(frozen=True)
class DomainSpec:
    angle: float
    translation: tuple[float, ...]
    scale: float = 1.0
    noise_sigma: float = 0.1

    def __post_init__(self):
        if self.scale <= 0 or self.noise_sigma <= 0:
            raise ValueError("scale and noise_sigma must be positive")

    def rotation(self, dim: int) -> np.ndarray:
        # same angle in every (2i, 2i+1) coordinate plane
        R = np.eye(dim)
        c, s = math.cos(self.angle), math.sin(self.angle)
        for i in range(0, dim - 1, 2):
            R[i, i], R[i, i + 1], R[i + 1, i], R[i + 1, i + 1] = c, -s, s, c
        return R

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        R = self.rotation(x.shape[-1])
        return self.scale * x @ R.T + np.asarray(self.translation)

    def invert(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        R = self.rotation(y.shape[-1])
        return ((y - np.asarray(self.translation)) / self.scale) @ R


@dataclass(frozen=True)
class DataConfig:
    input_dim: int = 8
    n_domains: int = 4
    n_known: int = 2
    n_unknown: int = 2
    n_per_cell: int = 500
    radius: float = 3.0
    class_sigma: float = 0.6
    noise_sigma: float = 0.3
    domain_shift: float = 0.6
    seed: int = 0
    domains: tuple[DomainSpec, ...] | None = None

    @property
    def n_classes(self) -> int:
        return self.n_known + 1 + self.n_unknown

    def to_dict(self) -> dict:
        d = asdict(self)
        d["domains"] = None if self.domains is None else [asdict(s) for s in self.domains]
        return d


def class_means(input_dim: int, n_known: int, n_unknown: int, radius: float,
                unknown_axis_offset: int = 0) -> np.ndarray:
    """Known classes sit on the radius-r sphere along the first K+1 axes.

    Unknown classes alternate between two placements:

    * even u: inside the known hull, on the segment from the real mean toward
      an attack mean (30% of the way), cycling from attack K downwards;
    * odd u: outside the hull, one radius away from the real mean along an
      axis orthogonal to every known mean.

    Both kinds sit closer to the real class than to any attack, which is the
    hard case for a real-vs-spoof detector trained on known attacks only.
    """
    if input_dim < n_known + 2:
        raise ValueError(f"input_dim {input_dim} too small for {n_known} known classes")
    eye = np.eye(input_dim)
    means = [radius * eye[c] for c in range(n_known + 1)]
    free = input_dim - n_known - 1
    for u in range(n_unknown):
        k = u // 2
        if u % 2 == 0:
            attack = means[n_known - k % n_known]
            means.append(means[0] + 0.3 * (attack - means[0]))
        else:
            axis = n_known + 1 + (k + unknown_axis_offset) % free
            means.append(means[0] + radius * eye[axis])
    return np.array(means)


def default_domain_specs(n_domains: int, input_dim: int, seed: int = 0, shift: float = 1.0,
                         noise_sigma: float = 0.3) -> tuple[DomainSpec, ...]:
    rng = np.random.default_rng([seed, 7])
    specs = []
    for m in range(n_domains):
        angle = shift * 0.35 * (m - (n_domains - 1) / 2)
        translation = tuple(float(t) for t in shift * rng.normal(0.0, 0.8, size=input_dim))
        scale = float(np.exp(shift * rng.uniform(-0.2, 0.2)))
        specs.append(DomainSpec(angle, translation, scale, noise_sigma))
    return tuple(specs)


def generate(
    n_classes: int | None = None,
    n_domains: int | None = None,
    n_per_cell: int | None = None,
    specs: Sequence[DomainSpec] | None = None,
    seed: int | None = None,
    *,
    config: DataConfig | None = None,
) -> Dataset:
    """Draw ``n_per_cell`` samples for every (class, domain) cell.

    Positional arguments override the matching ``config`` fields;
    ``n_classes`` counts real + known + unknown classes.
    """
    cfg = config or DataConfig()
    n_domains = cfg.n_domains if n_domains is None else n_domains
    n_per_cell = cfg.n_per_cell if n_per_cell is None else n_per_cell
    seed = cfg.seed if seed is None else seed
    n_unknown = cfg.n_unknown
    if n_classes is not None:
        n_unknown = n_classes - cfg.n_known - 1
        if n_unknown < 0:
            raise ValueError(f"n_classes={n_classes} leaves no room for {cfg.n_known} known attacks")
    if specs is None:
        specs = cfg.domains or default_domain_specs(n_domains, cfg.input_dim, seed, cfg.domain_shift, cfg.noise_sigma)
    if len(specs) != n_domains:
        raise ValueError(f"{len(specs)} domain specs for {n_domains} domains")

    means = class_means(cfg.input_dim, cfg.n_known, n_unknown, cfg.radius)
    C, D = len(means), cfg.input_dim
    class_rng = np.random.default_rng([seed, 0])
    noise_rng = np.random.default_rng([seed, 1])
    feats, labels, domains = [], [], []
    for m, spec in enumerate(specs):
        for c in range(C):
            clean = means[c] + cfg.class_sigma * class_rng.standard_normal((n_per_cell, D))
            feats.append(spec.apply(clean) + spec.noise_sigma * noise_rng.standard_normal((n_per_cell, D)))
            labels.append(np.full(n_per_cell, c))
            domains.append(np.full(n_per_cell, m))
    return Dataset(np.concatenate(feats), np.concatenate(labels), np.concatenate(domains))


@dataclass(frozen=True)
class ProtocolSpec:
    mode: str
    train_domains: tuple[int, ...]
    test_domain: int
    known_k: int
    unknown_classes: tuple[int, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "train_domains", tuple(int(d) for d in self.train_domains))
        object.__setattr__(self, "unknown_classes", tuple(int(c) for c in self.unknown_classes))
        if self.mode not in MODES:
            raise ProtocolError(f"unknown protocol mode {self.mode!r}")
        if not self.train_domains:
            raise ProtocolError("no training domains")
        if self.test_domain in self.train_domains:
            raise ProtocolError(f"test domain {self.test_domain} is also a training domain")
        if any(c <= self.known_k for c in self.unknown_classes):
            raise ProtocolError(f"unknown classes {self.unknown_classes} overlap known labels 0..{self.known_k}")
        if self.unknown_classes and self.mode != "unknown_attack":
            raise ProtocolError(f"mode {self.mode} takes no unknown classes")

    @property
    def name(self) -> str:
        src = "&".join(str(d) for d in self.train_domains)
        return f"{src}->{self.test_domain}"

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "train_domains": list(self.train_domains),
            "test_domain": self.test_domain,
            "known_k": self.known_k,
            "unknown_classes": list(self.unknown_classes),
        }


def leave_one_out_protocols(n_domains: int, known_k: int, unknown_classes: Sequence[int] = ()) -> list[ProtocolSpec]:
    mode = "unknown_attack" if unknown_classes else "leave_one_out"
    return [
        ProtocolSpec(mode, tuple(d for d in range(n_domains) if d != t), t, known_k, tuple(unknown_classes))
        for t in range(n_domains)
    ]


def split_protocol(data: Dataset, protocol: ProtocolSpec) -> tuple[Dataset, Dataset]:
    """Train on source domains / known labels; test on the held-out domain.

    Test samples carry the taint flag so the trainer can refuse them.
    """
    present_domains = set(np.unique(data.domains).tolist())
    wanted = set(protocol.train_domains) | {protocol.test_domain}
    if not wanted <= present_domains:
        raise ProtocolError(f"domains {sorted(wanted - present_domains)} are not in the data")
    present_labels = set(np.unique(data.labels).tolist())
    missing = set(protocol.unknown_classes) - present_labels
    if missing:
        raise ProtocolError(f"unknown classes {sorted(missing)} are not in the data")

    known = data.labels <= protocol.known_k
    train_mask = np.isin(data.domains, protocol.train_domains) & known & ~data.tainted
    test_labels = known | np.isin(data.labels, protocol.unknown_classes)
    test_mask = (data.domains == protocol.test_domain) & test_labels
    if not train_mask.any():
        raise ProtocolError(f"protocol {protocol.name} leaves an empty training set")
    if not test_mask.any():
        raise ProtocolError(f"protocol {protocol.name} leaves an empty test set")
    train = data.subset(train_mask)
    test = data.subset(test_mask)
    test.tainted[:] = True
    return train, test


def batches(train: Dataset, batch_size: int, seed: int, epoch: int = 0) -> Iterator[Dataset]:
    """Stratified shuffle: each class is spread evenly across the epoch."""
    n_labels = len(np.unique(train.labels))
    if batch_size < n_labels:
        raise ValueError(f"batch_size {batch_size} is smaller than the {n_labels} classes present")
    rng = np.random.default_rng([seed, epoch, 0xBA7C])
    position = np.empty(len(train))
    for c in np.unique(train.labels):
        idx = np.flatnonzero(train.labels == c)
        perm = rng.permutation(idx)
        position[perm] = (np.arange(len(idx)) + rng.uniform(size=len(idx))) / len(idx)
    order = np.argsort(position, kind="stable")
    for start in range(0, len(order), batch_size):
        yield train.subset(order[start : start + batch_size])


# --- files -----------------------------------------------------------------


def save_feature_file(data: Dataset, path) -> None:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"f_{i}" for i in range(data.input_dim)] + ["label", "domain"])
    for x, y, d in zip(data.features, data.labels, data.domains):
        w.writerow([repr(float(v)) for v in x] + [int(y), int(d)])
    atomic_write_text(path, buf.getvalue())


def load_feature_file(path, *, max_label: int | None = None, n_domains: int | None = None) -> Dataset:
    """Read a ``f_0..f_{d-1},label,domain`` CSV."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("missing header", line=1) from None
        d = len(header) - 2
        expected = [f"f_{i}" for i in range(d)] + ["label", "domain"]
        if d < 1 or [h.strip() for h in header] != expected:
            raise SchemaError(f"header must be f_0..f_{{d-1}},label,domain; got {header}")
        feats, labels, domains = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 2:
                raise SchemaError(f"line {lineno}: expected {d + 2} fields, got {len(row)}")
            try:
                x = [float(v) for v in row[:d]]
                y, dom = int(row[d]), int(row[d + 1])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if not all(math.isfinite(v) for v in x):
                raise ParseError("non-finite feature", line=lineno)
            if y < 0 or (max_label is not None and y > max_label):
                raise ParseError(f"label {y} out of range", line=lineno)
            if dom < 0 or (n_domains is not None and dom >= n_domains):
                raise ParseError(f"domain {dom} out of range", line=lineno)
            feats.append(x)
            labels.append(y)
            domains.append(dom)
    if not feats:
        return Dataset(np.zeros((0, d)), np.zeros(0, np.int64), np.zeros(0, np.int64))
    return Dataset(np.array(feats), labels, domains)


def dataset_manifest(data: Dataset, config: DataConfig | None = None) -> dict:
    cells = {}
    for d in np.unique(data.domains):
        for c in np.unique(data.labels):
            n = int(np.sum((data.domains == d) & (data.labels == c)))
            if n:
                cells[f"{int(d)}:{int(c)}"] = n
    return {
        "n_samples": len(data),
        "input_dim": data.input_dim,
        "domains": sorted(int(d) for d in np.unique(data.domains)),
        "classes": sorted(int(c) for c in np.unique(data.labels)),
        "counts": cells,
        "seed": None if config is None else config.seed,
        "generator": None if config is None else config.to_dict(),
    }


def write_dataset_manifest(data: Dataset, path, config: DataConfig | None = None) -> None:
    atomic_write_text(path, json.dumps(dataset_manifest(data, config), indent=2, sort_keys=True) + "\n")
