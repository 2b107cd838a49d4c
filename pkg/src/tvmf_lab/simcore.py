"""Closed-form similarity math: cosine, t-vMF, its derivative and inverse,
the single-parameter kappa mapping, and the angular margin between a
positive-side and a negative-side similarity curve.

Everything here is float64 and vectorised over numpy broadcasting where the
argument is a cosine or an angle.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


class SimilarityKind(str, enum.Enum):
    COSINE = "cosine"
    TVMF = "tvmf"


class KappaMapping(str, enum.Enum):
    """How ``alpha`` is turned into ``(kappa_p, kappa_n)``.

    ``SYMMETRIC`` solves the symmetry condition at pi/2 and reproduces the
    worked example alpha=0.4 -> (2.0, -0.4).  ``PRINTED`` is the alternative
    closed form alpha / (2 alpha + 1), kept only for comparison.
    """

    SYMMETRIC = "symmetric"
    PRINTED = "printed"


def _check_kappa(kappa) -> None:
    k = np.asarray(kappa, dtype=np.float64)
    if np.any(~np.isfinite(k)) or np.any(k <= -0.5):
        raise ValueError(f"kappa must be finite and > -1/2, got {kappa!r}")


def kappa_from_alpha(alpha: float, mapping: KappaMapping | str = KappaMapping.SYMMETRIC) -> tuple[float, float]:
    """Map ``alpha`` in [0, 1/2) to ``(kappa_p, kappa_n)``.

    kappa_n = -alpha, and kappa_p is chosen so that
    ``tvmf_from_cos(0, kappa_p) == -tvmf_from_cos(0, kappa_n)``.
    """
    alpha = float(alpha)
    if not (0.0 <= alpha < 0.5):
        raise ValueError(f"alpha must lie in [0, 1/2), got {alpha}")
    mapping = KappaMapping(mapping)
    if alpha == 0.0:
        kappa_p = 0.0
    elif mapping is KappaMapping.SYMMETRIC:
        # alpha / (1 - 2 alpha), arranged so that alpha = 0.4 gives exactly 2.0
        kappa_p = 1.0 / (1.0 / alpha - 2.0)
    else:
        kappa_p = alpha / (2.0 * alpha + 1.0)
    return kappa_p, -alpha


@dataclass(frozen=True)
class SimilaritySpec:
    """Which similarity the contrastive loss uses for positives and negatives."""

    kind: SimilarityKind = SimilarityKind.COSINE
    kappa_p: float = 0.0
    kappa_n: float = 0.0
    alpha: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SimilarityKind(self.kind))
        if self.kind is SimilarityKind.COSINE:
            if self.kappa_p != 0.0 or self.kappa_n != 0.0 or self.alpha not in (None, 0.0):
                raise ValueError("cosine similarity takes no kappa/alpha")
            object.__setattr__(self, "kappa_p", 0.0)
            object.__setattr__(self, "kappa_n", 0.0)
            return
        _check_kappa(self.kappa_p)
        _check_kappa(self.kappa_n)
        if self.alpha is not None:
            # any mapping is acceptable as origin, but it must be reproducible
            if (self.kappa_p, self.kappa_n) not in (
                kappa_from_alpha(self.alpha, KappaMapping.SYMMETRIC),
                kappa_from_alpha(self.alpha, KappaMapping.PRINTED),
            ):
                raise ValueError("kappa_p/kappa_n do not match alpha")

    @classmethod
    def cosine(cls) -> "SimilaritySpec":
        return cls(SimilarityKind.COSINE)

    @classmethod
    def tvmf(cls, kappa_p: float, kappa_n: float | None = None) -> "SimilaritySpec":
        return cls(SimilarityKind.TVMF, float(kappa_p), float(kappa_p if kappa_n is None else kappa_n))

    @classmethod
    def from_alpha(cls, alpha: float, mapping: KappaMapping | str = KappaMapping.SYMMETRIC) -> "SimilaritySpec":
        kp, kn = kappa_from_alpha(alpha, mapping)
        return cls(SimilarityKind.TVMF, kp, kn, float(alpha))

    @property
    def heterogeneous(self) -> bool:
        return self.kappa_p != self.kappa_n


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty vectors")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine of a zero-norm vector is undefined")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def tvmf_from_cos(c, kappa):
    """t-vMF similarity ``(1 + c) / (1 + kappa (1 - c)) - 1`` of a cosine ``c``."""
    _check_kappa(kappa)
    c = np.asarray(c, dtype=np.float64)
    k = np.asarray(kappa, dtype=np.float64)
    # exact identity at kappa = 0: (1 + c) - 1 is not bitwise c in floating point
    if k.ndim == 0 and k == 0.0:
        out = c.copy()
    else:
        out = (1.0 + c) / (1.0 + k * (1.0 - c)) - 1.0
        if np.any(k == 0.0):
            out = np.where(k == 0.0, c, out)
    return float(out) if out.ndim == 0 else out


def tvmf(a, b, kappa: float) -> float:
    return tvmf_from_cos(cosine(a, b), kappa)


def d_tvmf_dcos(c, kappa):
    _check_kappa(kappa)
    c = np.asarray(c, dtype=np.float64)
    out = (1.0 + 2.0 * kappa) / (1.0 + kappa * (1.0 - c)) ** 2
    return float(out) if out.ndim == 0 else out


def invert_tvmf(s, kappa):
    """Cosine ``c`` with ``tvmf_from_cos(c, kappa) == s``."""
    _check_kappa(kappa)
    s = np.asarray(s, dtype=np.float64)
    # same as ((s + 1)(1 + kappa) - 1) / (1 + (s + 1) kappa), but exact at s = +-1
    out = 1.0 - (1.0 - s) / (1.0 + (s + 1.0) * kappa)
    out = np.clip(out, -1.0, 1.0)
    return float(out) if out.ndim == 0 else out


def _check_angle(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=np.float64)
    if np.any(~np.isfinite(psi)) or np.any(psi < 0.0) or np.any(psi > math.pi):
        raise ValueError("angles must lie in [0, pi]")
    return psi


def delta(psi_p, psi_n, spec: SimilaritySpec):
    """Negative-side minus positive-side similarity at the given angles."""
    psi_p = _check_angle(psi_p)
    psi_n = _check_angle(psi_n)
    return tvmf_from_cos(np.cos(psi_n), spec.kappa_n) - tvmf_from_cos(np.cos(psi_p), spec.kappa_p)


def margin_epsilon(psi_p, spec: SimilaritySpec):
    """Angular gap ``eps`` such that ``delta(psi_p, psi_p + eps) == 0``.

    Requires ``kappa_p >= kappa_n``; zero when the two kappas coincide.
    """
    if spec.kappa_p < spec.kappa_n:
        raise ValueError("margin is only defined for kappa_p >= kappa_n")
    psi_p = _check_angle(psi_p)
    if spec.kappa_p == spec.kappa_n:
        out = np.zeros_like(psi_p)
        return float(out) if out.ndim == 0 else out
    s = tvmf_from_cos(np.cos(psi_p), spec.kappa_p)
    psi_n = np.arccos(invert_tvmf(s, spec.kappa_n))
    out = np.maximum(psi_n - psi_p, 0.0)
    return float(out) if out.ndim == 0 else out


def similarity_curve(kappas, resolution: int = 181) -> list[tuple[float, float, float]]:
    """Rows ``(angle_rad, kappa, similarity)`` on an even grid over [0, pi]."""
    angles = np.linspace(0.0, math.pi, int(resolution))
    rows = []
    for kappa in kappas:
        sims = tvmf_from_cos(np.cos(angles), float(kappa))
        rows.extend((float(a), float(kappa), float(s)) for a, s in zip(angles, sims))
    return rows


def margin_curve(pairs, resolution: int = 181) -> list[tuple[float, float, float, float]]:
    """Rows ``(psi_p_rad, kappa_p, kappa_n, epsilon)`` on an even grid over [0, pi]."""
    angles = np.linspace(0.0, math.pi, int(resolution))
    rows = []
    for kp, kn in pairs:
        eps = margin_epsilon(angles, SimilaritySpec.tvmf(kp, kn))
        rows.extend((float(a), float(kp), float(kn), float(e)) for a, e in zip(angles, eps))
    return rows
