"""End-to-end training: classification loss (optionally group-DRO) plus the
queue-based contrastive loss, Adam with a scheduled learning rate, momentum
encoder upkeep and per-epoch evaluation on every test split."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import numpy as np

from .evaluate import MetricReport, accuracies
from .losses import DroKind, DroState, LossConfig, cvar_dro, per_sample_cross_entropy, robust_dro_step, supcon_batch_loss
from .moco import DESK_QUEUE_SIZE, MomentumQueue
from .net import NetworkParams, backward, forward, init_params
from .optim import AdamState, LRMode, TrainingFault, adam_step, scheduled_lr
from .shiftgen import DomainConfig, GroupedDataset, SubpopConfig, gen_domains, gen_subpop
from .simcore import SimilaritySpec

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    name: str = "run"
    task: str = "subpop"  # "subpop" | "domain" | "csv"
    subpop: SubpopConfig = field(default_factory=SubpopConfig)
    domain: DomainConfig = field(default_factory=DomainConfig)
    data_csv: Optional[str] = None
    hidden_dims: tuple[int, ...] = (64, 64)
    embed_dim: int = 16
    loss: LossConfig = field(default_factory=LossConfig)
    similarity: SimilaritySpec = field(default_factory=SimilaritySpec.cosine)
    queue_size: int = DESK_QUEUE_SIZE
    momentum: float = 0.999
    lr: float = 1e-3
    weight_decay: float = 0.0
    lr_mode: LRMode = LRMode.COSINE
    epochs: Optional[int] = None  # None -> 50 for subpop, 25 otherwise
    batch_size: int = 128
    eval_every: int = 1
    seed: int = 0

    def __post_init__(self):
        self.lr_mode = LRMode(self.lr_mode)
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.task not in ("subpop", "domain", "csv"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "csv" and not self.data_csv:
            raise ValueError("task 'csv' needs data_csv")
        if self.epochs is None:
            self.epochs = 50 if self.task == "subpop" else 25
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("epochs, batch_size and eval_every must be >= 1")
        if self.embed_dim < 1 or self.queue_size < 1:
            raise ValueError("embed_dim and queue_size must be >= 1")
        if self.loss.fixed_margin > 0 and self.similarity.heterogeneous:
            raise ValueError("fixed margin and heterogeneous kappa are competing mechanisms; pick one")
        if self.loss.fixed_margin > 0 and (self.similarity.kappa_p or self.similarity.kappa_n):
            raise ValueError("fixed margin is defined for cosine similarity only")
        if self.batch_size > self.queue_size and self.loss.supcon_weight > 0:
            raise ValueError("batch_size may not exceed queue_size")

    def make_data(self) -> GroupedDataset:
        if self.task == "subpop":
            return gen_subpop(self.subpop)
        if self.task == "domain":
            return gen_domains(self.domain)
        return GroupedDataset.from_csv(self.data_csv)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["similarity"] = {
            "kind": self.similarity.kind.value,
            "kappa_p": self.similarity.kappa_p,
            "kappa_n": self.similarity.kappa_n,
            "alpha": self.similarity.alpha,
        }
        d["loss"]["dro"] = self.loss.dro.value
        d["lr_mode"] = self.lr_mode.value
        return d


@dataclass
class EpochRecord:
    epoch: int
    reports: dict[str, MetricReport]
    loss_cls: float
    loss_supcon: float
    loss_total: float
    lr: float
    dro_weights: Optional[list[float]]
    skipped_anchors: int


@dataclass
class RunHistory:
    config_name: str
    seed: int
    records: list[EpochRecord] = field(default_factory=list)
    # per optimiser step: (loss_cls, loss_supcon, loss_total)
    step_losses: list[tuple[float, float, float]] = field(default_factory=list)
    # (step, target-network version used for the enqueued rows, version at enqueue time)
    enqueue_versions: list[tuple[int, int, int]] = field(default_factory=list)
    queue_reads: int = 0
    final_params: Optional[NetworkParams] = field(default=None, repr=False, compare=False)

    def series(self, split: str, metric: str = "worst_group") -> np.ndarray:
        return np.array([getattr(r.reports[split], metric) for r in self.records])

    def rows(self) -> list[tuple[int, str, str, float]]:
        out = []
        for r in self.records:
            for split, rep in r.reports.items():
                out.append((r.epoch, split, "overall", rep.overall))
                out.append((r.epoch, split, "worst_group", rep.worst_group))
                for g, v in rep.per_group.items():
                    out.append((r.epoch, split, f"group_{g}", v))
                for d, v in rep.per_domain.items():
                    out.append((r.epoch, split, f"domain_{d}", v))
            out.append((r.epoch, "train", "loss_cls", r.loss_cls))
            out.append((r.epoch, "train", "loss_supcon", r.loss_supcon))
            out.append((r.epoch, "train", "loss_total", r.loss_total))
            out.append((r.epoch, "train", "lr", r.lr))
            out.append((r.epoch, "train", "skipped_anchors", float(r.skipped_anchors)))
            for g, w in enumerate(r.dro_weights or []):
                out.append((r.epoch, "train", f"dro_weight_{g}", w))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "split", "metric", "value"])
        for epoch, split, metric, value in self.rows():
            w.writerow([epoch, split, metric, repr(float(value))])
        return buf.getvalue()

    def summary(self) -> dict[str, Any]:
        """Final and best value of ``overall`` and ``worst_group`` per split."""
        out: dict[str, Any] = {"config": self.config_name, "seed": self.seed, "splits": {}}
        if not self.records:
            return out
        for split in self.records[-1].reports:
            entry = {}
            for metric in ("overall", "worst_group"):
                s = self.series(split, metric)
                entry[f"final_{metric}"] = float(s[-1])
                entry[f"best_{metric}"] = float(s.max())
            out["splits"][split] = entry
        return out

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def resample_balanced(groups, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a group uniformly, then a member of it uniformly, ``batch_size`` times."""
    groups = np.asarray(groups)
    present = np.unique(groups)
    if present.size == 0:
        raise ValueError("no groups to sample from")
    members = [np.flatnonzero(groups == g) for g in present]
    which = rng.integers(0, present.size, size=batch_size)
    out = np.empty(batch_size, dtype=np.int64)
    for k, idx in enumerate(members):
        sel = which == k
        out[sel] = idx[rng.integers(0, idx.size, size=int(sel.sum()))]
    return out


def _epoch_batches(n: int, batch_size: int, groups, balanced: bool, rng: np.random.Generator) -> list[np.ndarray]:
    steps = math.ceil(n / batch_size)
    if balanced:
        return [resample_balanced(groups, batch_size, rng) for _ in range(steps)]
    perm = rng.permutation(n)
    return [perm[i * batch_size : (i + 1) * batch_size] for i in range(steps)]


def evaluate_splits(params: NetworkParams, data: GroupedDataset) -> dict[str, MetricReport]:
    reports = {}
    for split in data.split_names():
        if split == "train":
            continue
        idx = data.indices(split)
        pred = forward(params, data.X[idx]).logits.argmax(axis=1)
        reports[split] = accuracies(pred, data.y[idx], data.group[idx], data.domain[idx], split=split)
    return reports


def train(cfg: TrainConfig, data: GroupedDataset | None = None) -> RunHistory:
    if data is None:
        data = cfg.make_data()
    train_idx = data.indices("train")
    X, y, groups = data.X[train_idx], data.y[train_idx], data.group[train_idx]
    n = X.shape[0]
    if n == 0:
        raise ValueError("dataset has no training split")
    n_classes = max(2, data.n_classes)

    rng = np.random.default_rng(cfg.seed)
    online = init_params(data.dim, cfg.hidden_dims, n_classes, cfg.embed_dim, seed=int(rng.integers(2**63)))
    use_supcon = cfg.loss.supcon_weight > 0
    queue = MomentumQueue(cfg.queue_size, cfg.embed_dim, cfg.momentum, target=online.copy()) if use_supcon else None
    adam = AdamState(base_lr=cfg.lr, weight_decay=cfg.weight_decay)
    dro_kind = cfg.loss.dro
    dro_state = DroState.uniform(data.n_groups, cfg.loss.dro_step_size) if dro_kind is DroKind.ROBUST else None
    balanced = dro_kind is not DroKind.NONE
    if balanced:
        empty = sorted(set(range(data.n_groups)) - set(np.unique(groups).tolist()))
        if empty:
            log.warning("groups %s have no training samples; balancing over the rest", empty)

    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    lam = cfg.loss.supcon_weight
    tau = cfg.loss.temperature
    history = RunHistory(cfg.name, cfg.seed)
    step = 0

    for epoch in range(1, cfg.epochs + 1):
        sums = np.zeros(3)
        skipped = 0
        lr = cfg.lr
        for idx in _epoch_batches(n, cfg.batch_size, groups, balanced, rng):
            lr = scheduled_lr(cfg.lr_mode, step, total_steps, cfg.lr)
            xb, yb, gb = X[idx], y[idx], groups[idx]
            trace = forward(online, xb)

            losses, g_rows = per_sample_cross_entropy(trace.logits, yb)
            if dro_kind is DroKind.ROBUST:
                loss_cls, w, dro_state = robust_dro_step(losses, gb, dro_state)
            elif dro_kind is DroKind.CVAR:
                loss_cls, mask = cvar_dro(losses, cfg.loss.cvar_fraction)
                w = mask / mask.sum()
            else:
                loss_cls = float(losses.mean())
                w = np.full(losses.size, 1.0 / losses.size)
            g_logits = g_rows * w[:, None]

            loss_con = 0.0
            g_emb = None
            if use_supcon:
                q_emb, q_lab = queue.raw()
                history.queue_reads += 1
                res = supcon_batch_loss(trace.embedding, yb, q_emb, q_lab, cfg.similarity, tau, cfg.loss.fixed_margin)
                loss_con = res.loss
                skipped += res.n_skipped
                g_emb = lam * res.grad
            loss_total = loss_cls + lam * loss_con
            if not math.isfinite(loss_total):
                raise TrainingFault(f"non-finite loss at epoch {epoch}, step {step}")

            grads = backward(trace, g_logits, g_emb)
            try:
                adam_step(online.arrays(), grads.arrays(), adam, lr)
            except TrainingFault as exc:
                raise TrainingFault(f"epoch {epoch}, step {step}: {exc}") from exc
            online.touch()

            if use_supcon:
                queue.update_target(online)
                version = queue.target.version
                keys = forward(queue.target, xb).embedding
                keep = np.any(keys != 0.0, axis=1)  # directionless keys stay out of the queue
                queue.enqueue(keys[keep], yb[keep], target_version=version)
                history.enqueue_versions.append((step, version, queue.target.version))

            history.step_losses.append((loss_cls, loss_con, loss_total))
            sums += (loss_cls, loss_con, loss_total)
            step += 1

        if skipped and epoch == 1:
            log.info("%s seed %d: %d anchors skipped in epoch 1 (cold queue)", cfg.name, cfg.seed, skipped)
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            mean = sums / steps_per_epoch
            history.records.append(
                EpochRecord(
                    epoch=epoch,
                    reports=evaluate_splits(online, data),
                    loss_cls=float(mean[0]),
                    loss_supcon=float(mean[1]),
                    loss_total=float(mean[2]),
                    lr=lr,
                    dro_weights=dro_state.group_weights.tolist() if dro_state is not None else None,
                    skipped_anchors=skipped,
                )
            )
    history.final_params = online
    return history
