"""MLP backbone with a linear classification head and a 3-layer projection
head whose output is L2-normalised.  Forward keeps everything backward needs.

Weights follow the ``(out_features, in_features)`` convention, so a dense layer
computes ``x @ W.T + b``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

NORM_EPS = 1e-12
PROJECTOR_DEPTH = 3

Layer = tuple[np.ndarray, np.ndarray]

_version_counter = itertools.count()


@dataclass(eq=False)
class NetworkParams:
    backbone: list[Layer]
    classifier: Layer
    projector: list[Layer]
    version: int = field(default_factory=lambda: next(_version_counter), compare=False)

    def __post_init__(self):
        if len(self.projector) != PROJECTOR_DEPTH:
            raise ValueError(f"projector must have exactly {PROJECTOR_DEPTH} layers")
        width = None
        for name, (W, b) in self._layers():
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"{name}: bias/weight shape mismatch")
            if name.startswith("backbone") and width is not None and W.shape[1] != width:
                raise ValueError(f"{name}: expects {W.shape[1]} inputs, previous layer gives {width}")
            if name.startswith("backbone"):
                width = W.shape[0]
        feat = self.feature_dim
        if self.classifier[0].shape[1] != feat or self.projector[0][0].shape[1] != feat:
            raise ValueError("heads must consume the backbone output width")
        for (W1, _), (W2, _) in zip(self.projector, self.projector[1:]):
            if W2.shape[1] != W1.shape[0]:
                raise ValueError("projector layers do not chain")

    def _layers(self) -> Iterator[tuple[str, Layer]]:
        for i, layer in enumerate(self.backbone):
            yield f"backbone.{i}", layer
        yield "classifier", self.classifier
        for i, layer in enumerate(self.projector):
            yield f"projector.{i}", layer

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        for name, (W, b) in self._layers():
            yield f"{name}.weight", W
            yield f"{name}.bias", b

    def arrays(self) -> list[np.ndarray]:
        return [a for _, a in self.named_arrays()]

    @property
    def input_dim(self) -> int:
        if self.backbone:
            return self.backbone[0][0].shape[1]
        return self.classifier[0].shape[1]

    @property
    def feature_dim(self) -> int:
        if self.backbone:
            return self.backbone[-1][0].shape[0]
        return self.input_dim

    @property
    def num_classes(self) -> int:
        return self.classifier[0].shape[0]

    @property
    def embed_dim(self) -> int:
        return self.projector[-1][0].shape[0]

    def copy(self) -> "NetworkParams":
        dup = lambda layers: [(W.copy(), b.copy()) for W, b in layers]  # noqa: E731
        return NetworkParams(dup(self.backbone), dup([self.classifier])[0], dup(self.projector))

    def zeros_like(self) -> "NetworkParams":
        z = lambda layers: [(np.zeros_like(W), np.zeros_like(b)) for W, b in layers]  # noqa: E731
        return NetworkParams(z(self.backbone), z([self.classifier])[0], z(self.projector))

    def touch(self) -> None:
        """Mark the parameters as modified so older traces become stale."""
        self.version = next(_version_counter)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def save(self, path) -> None:
        """Write an ``.npz`` archive keyed by ``named_arrays`` names."""
        with open(path, "wb") as fh:
            np.savez(fh, **dict(self.named_arrays()))

    @classmethod
    def load(cls, path) -> "NetworkParams":
        with np.load(Path(path)) as data:
            arrays = {k: data[k] for k in data.files}
        n_backbone = sum(1 for k in arrays if k.startswith("backbone.") and k.endswith(".weight"))
        get = lambda name: (arrays[f"{name}.weight"], arrays[f"{name}.bias"])  # noqa: E731
        return cls(
            [get(f"backbone.{i}") for i in range(n_backbone)],
            get("classifier"),
            [get(f"projector.{i}") for i in range(PROJECTOR_DEPTH)],
        )


def init_params(
    input_dim: int,
    hidden_dims: Sequence[int],
    num_classes: int,
    embed_dim: int,
    seed: int,
) -> NetworkParams:
    """He-uniform weights ``U(-sqrt(6/fan_in), sqrt(6/fan_in))`` and zero biases."""
    dims = [input_dim, *hidden_dims, num_classes, embed_dim]
    if any(int(d) < 1 for d in dims):
        raise ValueError("all layer widths must be >= 1")
    rng = np.random.default_rng(seed)

    def dense(fan_in: int, fan_out: int) -> Layer:
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=(fan_out, fan_in)), np.zeros(fan_out)

    backbone = []
    width = input_dim
    for h in hidden_dims:
        backbone.append(dense(width, h))
        width = h
    classifier = dense(width, num_classes)
    projector = [dense(width, width), dense(width, width), dense(width, embed_dim)]
    return NetworkParams(backbone, classifier, projector)


@dataclass(eq=False)
class ForwardTrace:
    inputs: np.ndarray
    backbone_acts: list[np.ndarray]  # post-ReLU output of every backbone layer
    projector_acts: list[np.ndarray]  # post-ReLU output of projector layers 0 and 1
    features: np.ndarray
    logits: np.ndarray
    projection: np.ndarray  # pre-normalisation projector output
    projection_norm: np.ndarray
    embedding: np.ndarray  # unit rows; all-zero where the projection vanished
    params_version: int
    params: NetworkParams = field(repr=False)


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def forward(params: NetworkParams, X) -> ForwardTrace:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ValueError(f"expected an n x {params.input_dim} input, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input")
    h = X
    backbone_acts = []
    for W, b in params.backbone:
        h = _relu(h @ W.T + b)
        backbone_acts.append(h)
    Wc, bc = params.classifier
    logits = h @ Wc.T + bc
    p = h
    projector_acts = []
    for W, b in params.projector[:-1]:
        p = _relu(p @ W.T + b)
        projector_acts.append(p)
    W3, b3 = params.projector[-1]
    z = p @ W3.T + b3
    norm = np.linalg.norm(z, axis=1, keepdims=True)
    # rows are exactly unit length; a projection at or below the epsilon has no direction and maps to 0
    above = norm > NORM_EPS
    e = np.where(above, z / np.where(above, norm, 1.0), 0.0)
    return ForwardTrace(X, backbone_acts, projector_acts, h, logits, z, norm, e, params.version, params)


def predict(params: NetworkParams, X) -> np.ndarray:
    return forward(params, X).logits.argmax(axis=1)


def backward(trace: ForwardTrace, grad_logits=None, grad_embedding=None) -> NetworkParams:
    """Reverse-mode gradients of a scalar loss given its gradients with respect to
    the logits and the normalised embedding (either may be ``None`` for zero)."""
    if trace is None:
        raise ValueError("backward needs a forward trace")
    params = trace.params
    if trace.params_version != params.version:
        raise ValueError("stale trace: parameters changed after the forward pass")
    g_logits = np.zeros_like(trace.logits) if grad_logits is None else np.asarray(grad_logits, dtype=np.float64)
    g_e = np.zeros_like(trace.embedding) if grad_embedding is None else np.asarray(grad_embedding, dtype=np.float64)
    if g_logits.shape != trace.logits.shape or g_e.shape != trace.embedding.shape:
        raise ValueError("output gradients do not match the traced outputs")

    grads = params.zeros_like()
    h = trace.features

    # classifier head
    Wc, _ = params.classifier
    grads.classifier = (g_logits.T @ h, g_logits.sum(axis=0))
    g_h = g_logits @ Wc

    # normalisation: Jacobian (I - e e^T) / |z|, zero where the projection vanished
    e, r = trace.embedding, trace.projection_norm
    above = r > NORM_EPS
    g_z = np.where(above, (g_e - e * np.sum(e * g_e, axis=1, keepdims=True)) / np.where(above, r, 1.0), 0.0)

    # projector
    proj_inputs = [h, *trace.projector_acts]
    g = g_z
    for i in reversed(range(PROJECTOR_DEPTH)):
        W, _ = params.projector[i]
        x_in = proj_inputs[i]
        grads.projector[i] = (g.T @ x_in, g.sum(axis=0))
        g = g @ W
        if i > 0:
            g = g * (x_in > 0)
    g_h = g_h + g

    # backbone
    bb_inputs = [trace.inputs, *trace.backbone_acts[:-1]]
    g = g_h
    for i in reversed(range(len(params.backbone))):
        W, _ = params.backbone[i]
        g = g * (trace.backbone_acts[i] > 0)
        grads.backbone[i] = (g.T @ bb_inputs[i], g.sum(axis=0))
        g = g @ W
    return grads
