"""Synthetic benchmarks for the two shift regimes.

``gen_subpop`` builds a label x attribute problem whose training contingency
table is skewed (one tiny minority cell) while the test split is balanced.
``gen_domains`` builds a multi-domain problem with in-distribution and held-out
(out-of-distribution) domains.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

SPLITS = ("train", "test_id", "test_ood1", "test_ood2")

# Table of the blond-hair / gender training split, ordered (y, a) =
# (0, 0), (0, 1), (1, 0), (1, 1) with a = 0 for male.
PAPER_SUBPOP_COUNTS = (66874, 71629, 1387, 22880)


@dataclass
class GroupedDataset:
    X: np.ndarray
    y: np.ndarray
    group: np.ndarray
    domain: np.ndarray
    split: np.ndarray
    n_groups: int
    n_domains: int

    def __post_init__(self):
        n = self.X.shape[0]
        for name in ("y", "group", "domain", "split"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have one entry per row of X")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.y.max()) + 1

    def split_names(self) -> list[str]:
        present = set(self.split.tolist())
        return [s for s in SPLITS if s in present] + sorted(present - set(SPLITS))

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == split)

    def subset(self, split: str) -> "GroupedDataset":
        idx = self.indices(split)
        return GroupedDataset(
            self.X[idx], self.y[idx], self.group[idx], self.domain[idx], self.split[idx], self.n_groups, self.n_domains
        )

    def to_csv(self, path) -> None:
        header = ["split", "domain", "group", "label"] + [f"x{j}" for j in range(self.dim)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(self)):
                w.writerow(
                    [self.split[i], int(self.domain[i]), int(self.group[i]), int(self.y[i])]
                    + [repr(float(v)) for v in self.X[i]]
                )

    @classmethod
    def from_csv(cls, path) -> "GroupedDataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:4] != ["split", "domain", "group", "label"] or len(header) < 5:
                raise ValueError(f"{path}: expected header split,domain,group,label,x0..")
            d = len(header) - 4
            if header[4:] != [f"x{j}" for j in range(d)]:
                raise ValueError(f"{path}: feature columns must be x0..x{d - 1}")
            rows = list(reader)
        split = np.array([r[0] for r in rows])
        domain = np.array([int(r[1]) for r in rows], dtype=np.int64)
        group = np.array([int(r[2]) for r in rows], dtype=np.int64)
        y = np.array([int(r[3]) for r in rows], dtype=np.int64)
        X = np.array([[float(v) for v in r[4:]] for r in rows], dtype=np.float64).reshape(len(rows), d)
        return cls(X, y, group, domain, split, int(group.max()) + 1, int(domain.max()) + 1)


def largest_remainder(weights: Sequence[int], total: int) -> list[int]:
    """Integer apportionment of ``total`` proportional to ``weights``.

    Remainder ties go to the lower index.
    """
    s = sum(weights)
    if s <= 0:
        raise ValueError("weights must have a positive sum")
    quotas = [Fraction(w * total, s) for w in weights]
    counts = [int(q) for q in quotas]
    short = total - sum(counts)
    order = sorted(range(len(weights)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


@dataclass
class SubpopConfig:
    """Label ``y`` lives on axis 0, attribute ``a`` on axis 1, ``noise_dims``
    pure-noise axes follow.  Group id is ``2 * y + a``."""

    # reference ratio scaled to 4000 training samples
    train_counts: tuple[int, int, int, int] = (1644, 1760, 34, 562)
    test_per_group: int = 500
    core_sep: float = 1.0
    spurious_sep: float = 1.0
    core_sigma: float = 0.7
    spurious_sigma: float = 0.1
    noise_dims: int = 20
    noise_sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.train_counts = tuple(int(c) for c in self.train_counts)
        if len(self.train_counts) != 4:
            raise ValueError("train_counts needs one entry per (y, a) group")
        if any(c < 0 for c in self.train_counts) or not any(self.train_counts) or self.test_per_group < 0:
            raise ValueError("counts must be >= 0 with at least one nonzero group")
        if self.core_sep <= 0 or self.spurious_sep <= 0:
            raise ValueError("separations must be > 0")
        if min(self.core_sigma, self.spurious_sigma, self.noise_sigma) < 0 or self.noise_dims < 0:
            raise ValueError("noise scales and dimensions must be >= 0")

    @classmethod
    def paper_ratio(cls, n_train: int = 8000, **kwargs) -> "SubpopConfig":
        return cls(train_counts=tuple(largest_remainder(PAPER_SUBPOP_COUNTS, n_train)), **kwargs)

    @property
    def dim(self) -> int:
        return 2 + self.noise_dims


def _subpop_block(cfg: SubpopConfig, y: int, a: int, n: int, rng: np.random.Generator) -> np.ndarray:
    x = np.empty((n, cfg.dim))
    x[:, 0] = (2 * y - 1) * cfg.core_sep + cfg.core_sigma * rng.standard_normal(n)
    x[:, 1] = (2 * a - 1) * cfg.spurious_sep + cfg.spurious_sigma * rng.standard_normal(n)
    x[:, 2:] = cfg.noise_sigma * rng.standard_normal((n, cfg.noise_dims))
    return x


def gen_subpop(cfg: SubpopConfig) -> GroupedDataset:
    if cfg.dim < 2:
        raise ValueError("need at least the core and spurious axes")
    rng = np.random.default_rng(cfg.seed)
    blocks, ys, gs, splits = [], [], [], []
    for split, counts in (("train", cfg.train_counts), ("test_id", (cfg.test_per_group,) * 4)):
        for g, n in enumerate(counts):
            y, a = divmod(g, 2)
            blocks.append(_subpop_block(cfg, y, a, n, rng))
            ys.append(np.full(n, y))
            gs.append(np.full(n, g))
            splits.append(np.full(n, split))
    X = np.concatenate(blocks)
    y = np.concatenate(ys).astype(np.int64)
    group = np.concatenate(gs).astype(np.int64)
    return GroupedDataset(X, y, group, np.zeros_like(y), np.concatenate(splits), 4, 1)


@dataclass
class DomainConfig:
    """Domains share class prototypes; each domain rotates them in a seeded
    random 2-plane and shifts them by a seeded offset.

    The last coordinate is replaced by a low-variance cue
    ``(2y - 1) * spurious_sep`` that holds in the ``train``/``test_id``
    domains and is reversed, with ``ood_spurious_sigma`` spread, in every
    ``test_ood*`` split.  Its inputs are small, so a network picks it up
    slowly and out-of-domain accuracy erodes as training goes on.  Set
    ``spurious_sep = 0`` to drop the cue.

    ``split_domains`` maps every split to the domains it draws from; the
    ``train`` and ``test_id`` splits must use the same domains and must be
    disjoint from every OOD split.
    """

    n_domains: int = 5
    split_domains: dict[str, tuple[int, ...]] = field(
        default_factory=lambda: {"train": (0, 3, 4), "test_id": (0, 3, 4), "test_ood1": (1,), "test_ood2": (2,)}
    )
    train_per_domain_class: int = 800
    test_per_domain_class: int = 200
    dim: int = 32
    class_sep: float = 1.5
    rotation_max: float = 0.8  # radians
    offset_scale: float = 1.0
    noise_sigma: float = 1.0
    spurious_sep: float = 0.1
    spurious_sigma: float = 0.1
    ood_spurious_sigma: float = 2.0
    seed: int = 0

    def __post_init__(self):
        self.split_domains = {k: tuple(int(d) for d in v) for k, v in self.split_domains.items()}
        if "train" not in self.split_domains:
            raise ValueError("a train split is required")
        train = set(self.split_domains["train"])
        for name, doms in self.split_domains.items():
            if any(not 0 <= d < self.n_domains for d in doms):
                raise ValueError(f"split {name} uses a domain outside [0, {self.n_domains})")
            if name.startswith("test_ood") and train & set(doms):
                raise ValueError(f"split {name} overlaps the training domains")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.class_sep <= 0:
            raise ValueError("class_sep must be > 0")
        if min(self.train_per_domain_class, self.test_per_domain_class) < 0:
            raise ValueError("sample counts must be >= 0")
        if min(self.spurious_sep, self.spurious_sigma, self.ood_spurious_sigma, self.noise_sigma) < 0:
            raise ValueError("separations and noise scales must be >= 0")


def _domain_transforms(cfg: DomainConfig, rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    for _ in range(cfg.n_domains):
        basis, _ = np.linalg.qr(rng.standard_normal((cfg.dim, 2)))
        angle = rng.uniform(-cfg.rotation_max, cfg.rotation_max)
        u, v = basis[:, 0], basis[:, 1]
        c, s = np.cos(angle), np.sin(angle)
        R = np.eye(cfg.dim) + (c - 1.0) * (np.outer(u, u) + np.outer(v, v)) + s * (np.outer(v, u) - np.outer(u, v))
        offset = cfg.offset_scale * rng.standard_normal(cfg.dim) / np.sqrt(cfg.dim)
        out.append((R, offset))
    return out


def gen_domains(cfg: DomainConfig) -> GroupedDataset:
    rng = np.random.default_rng(cfg.seed)
    prototypes = np.zeros((2, cfg.dim))
    prototypes[0, 0] = -cfg.class_sep
    prototypes[1, 0] = cfg.class_sep
    transforms = _domain_transforms(cfg, rng)
    blocks, ys, ds, splits = [], [], [], []
    for split in SPLITS:
        if split not in cfg.split_domains:
            continue
        n = cfg.train_per_domain_class if split == "train" else cfg.test_per_domain_class
        for d in cfg.split_domains[split]:
            R, offset = transforms[d]
            for y in (0, 1):
                mean = R @ prototypes[y] + offset
                x = mean + cfg.noise_sigma * rng.standard_normal((n, cfg.dim))
                if cfg.spurious_sep > 0:
                    ood = split.startswith("test_ood")
                    sign = -1.0 if ood else 1.0
                    sigma = cfg.ood_spurious_sigma if ood else cfg.spurious_sigma
                    x[:, -1] = sign * (2 * y - 1) * cfg.spurious_sep + sigma * rng.standard_normal(n)
                blocks.append(x)
                ys.append(np.full(n, y))
                ds.append(np.full(n, d))
                splits.append(np.full(n, split))
    X = np.concatenate(blocks)
    y = np.concatenate(ys).astype(np.int64)
    domain = np.concatenate(ds).astype(np.int64)
    group = cfg.n_domains * y + domain
    return GroupedDataset(X, y, group, domain, np.concatenate(splits), 2 * cfg.n_domains, cfg.n_domains)
