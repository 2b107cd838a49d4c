"""Accuracy breakdowns and a small PCA for embedding plots."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass
class MetricReport:
    split: str
    overall: float
    per_group: dict[int, float]
    worst_group: float
    per_domain: dict[int, float]
    empty_groups: list[int] = field(default_factory=list)


def accuracies(predictions, labels, groups, domains, split: str = "", all_groups=None) -> MetricReport:
    """Exact-count accuracy overall, per group, per domain and for the worst group.

    Groups listed in ``all_groups`` but absent from the data are reported in
    ``empty_groups`` and left out of the worst-group minimum.
    """
    pred = np.asarray(predictions)
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    domains = np.asarray(domains)
    n = pred.shape[0]
    if n < 1:
        raise ValueError("need at least one prediction")
    if not (labels.shape == groups.shape == domains.shape == pred.shape == (n,)):
        raise ValueError("predictions, labels, groups and domains must have equal lengths")
    correct = pred == labels

    def breakdown(keys):
        out = {}
        for k in np.unique(keys):
            sel = keys == k
            out[int(k)] = int(correct[sel].sum()) / int(sel.sum())
        return out

    per_group = breakdown(groups)
    per_domain = breakdown(domains)
    empty = sorted(set(int(g) for g in all_groups) - set(per_group)) if all_groups is not None else []
    return MetricReport(
        split=split,
        overall=int(correct.sum()) / n,
        per_group=per_group,
        worst_group=min(per_group.values()),
        per_domain=per_domain,
        empty_groups=empty,
    )


def pca_project(embeddings, k: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Project mean-centred rows onto the top-``k`` principal directions.

    Returns ``(coords, explained_variance_ratio)``.  Each direction is signed so
    that its largest-magnitude loading is positive.
    """
    Z = np.asarray(embeddings, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] < 2:
        raise ValueError("need an n x m matrix with n >= 2")
    if not 1 <= k <= Z.shape[1]:
        raise ValueError(f"k must lie in [1, {Z.shape[1]}]")
    centred = Z - Z.mean(axis=0)
    cov = centred.T @ centred / (Z.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    top = np.argmax(np.abs(evecs), axis=0)
    evecs = evecs * np.sign(evecs[top, np.arange(evecs.shape[1])])
    total = evals.sum()
    ratio = evals / total if total > 0 else np.zeros_like(evals)
    return centred @ evecs[:, :k], ratio[:k]


def write_embedding_dump(path, coords, split, domain, group, label, source: str = "backbone") -> None:
    """CSV with columns ``split,domain,group,label,pc1,pc2`` plus a leading
    ``# source=...`` comment naming which representation was projected."""
    coords = np.asarray(coords)
    with open(path, "w", newline="") as fh:
        fh.write(f"# source={source}\n")
        w = csv.writer(fh)
        w.writerow(["split", "domain", "group", "label", "pc1", "pc2"])
        for i in range(coords.shape[0]):
            w.writerow([split[i], int(domain[i]), int(group[i]), int(label[i]), repr(float(coords[i, 0])), repr(float(coords[i, 1]))])
