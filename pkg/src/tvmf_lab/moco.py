"""Momentum (target) encoder and the FIFO queue of its embeddings."""

from __future__ import annotations

import numpy as np

from .losses import UNIT_NORM_TOL
from .net import NetworkParams

PAPER_QUEUE_SIZE = 65536
DESK_QUEUE_SIZE = 4096


def ema_update(target: NetworkParams, online: NetworkParams, momentum: float) -> NetworkParams:
    """In place: ``target <- momentum * target + (1 - momentum) * online``."""
    if not 0.0 <= momentum <= 1.0:
        raise ValueError("momentum must lie in [0, 1]")
    t_arrays = target.arrays()
    o_arrays = online.arrays()
    if len(t_arrays) != len(o_arrays) or any(t.shape != o.shape for t, o in zip(t_arrays, o_arrays)):
        raise ValueError("target and online parameters differ in shape")
    for t, o in zip(t_arrays, o_arrays):
        t *= momentum
        t += (1.0 - momentum) * o
    target.touch()
    return target


class MomentumQueue:
    """Ring buffer of ``(embedding, label)`` pairs plus the momentum encoder.

    ``target`` may be ``None`` when the queue is used on its own.
    """

    def __init__(self, capacity: int, embed_dim: int, momentum: float = 0.999, target: NetworkParams | None = None):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        if not 0.0 <= momentum <= 1.0:
            raise ValueError("momentum must lie in [0, 1]")
        self.capacity = int(capacity)
        self.momentum = float(momentum)
        self.target = target
        self._emb = np.zeros((self.capacity, embed_dim))
        self._labels = np.zeros(self.capacity, dtype=np.int64)
        self.cursor = 0
        self.fill = 0
        # number of the target-network state that produced the last enqueued rows
        self.last_target_version: int | None = None

    def __len__(self) -> int:
        return self.fill

    @property
    def embed_dim(self) -> int:
        return self._emb.shape[1]

    def enqueue(self, embeddings, labels, target_version: int | None = None) -> None:
        E = np.asarray(embeddings, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        n = E.shape[0]
        if E.ndim != 2 or E.shape[1] != self.embed_dim or labels.shape != (n,):
            raise ValueError("embeddings must be n x embed_dim with n labels")
        if n > self.capacity:
            raise ValueError(f"batch of {n} exceeds queue capacity {self.capacity}")
        if n and np.any(np.abs(np.linalg.norm(E, axis=1) - 1.0) > UNIT_NORM_TOL):
            raise ValueError("queued embeddings must have unit norm")
        idx = (self.cursor + np.arange(n)) % self.capacity
        self._emb[idx] = E
        self._labels[idx] = labels
        self.cursor = (self.cursor + n) % self.capacity
        self.fill = min(self.fill + n, self.capacity)
        self.last_target_version = target_version

    def _filled(self) -> np.ndarray:
        """Slot indices from oldest to newest."""
        start = (self.cursor - self.fill) % self.capacity
        return (start + np.arange(self.fill)) % self.capacity

    def contents(self) -> tuple[np.ndarray, np.ndarray]:
        """Stored embeddings and labels, oldest first."""
        idx = self._filled()
        return self._emb[idx], self._labels[idx]

    def raw(self) -> tuple[np.ndarray, np.ndarray]:
        """Filled slots in storage order; cheaper than ``contents`` when order is irrelevant."""
        if self.fill == self.capacity:
            return self._emb, self._labels
        return self._emb[: self.fill], self._labels[: self.fill]

    def split_pos_neg(self, anchor_label: int) -> tuple[np.ndarray, np.ndarray]:
        """Positions (in ``contents`` order) of entries sharing / not sharing the label."""
        _, labels = self.contents()
        same = labels == anchor_label
        return np.flatnonzero(same), np.flatnonzero(~same)

    def update_target(self, online: NetworkParams) -> None:
        if self.target is None:
            raise ValueError("queue has no target network")
        ema_update(self.target, online, self.momentum)
