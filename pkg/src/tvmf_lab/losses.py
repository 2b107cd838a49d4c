"""Training losses with hand-written gradients.

Contrastive losses take unit-norm embeddings and treat the cosine of two rows
as their dot product; the normalisation Jacobian is applied by the network's
backward pass, not here.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from .simcore import SimilaritySpec, d_tvmf_dcos, tvmf_from_cos

UNIT_NORM_TOL = 1e-9


class DroKind(str, enum.Enum):
    NONE = "none"
    ROBUST = "robust"
    CVAR = "cvar"


@dataclass
class LossConfig:
    temperature: float = 1.0
    supcon_weight: float = 1.0
    fixed_margin: float = 0.0
    dro: DroKind = DroKind.NONE
    dro_step_size: float = 0.01
    cvar_fraction: float = 0.5

    def __post_init__(self):
        self.dro = DroKind(self.dro)
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if self.supcon_weight < 0:
            raise ValueError("supcon_weight must be >= 0")
        if self.fixed_margin < 0:
            raise ValueError("fixed_margin must be >= 0")
        if not self.dro_step_size > 0:
            raise ValueError("dro_step_size must be > 0")
        if not 0 < self.cvar_fraction <= 1:
            raise ValueError("cvar_fraction must lie in (0, 1]")


class ContrastiveResult(NamedTuple):
    loss: float
    grad_anchor: np.ndarray
    grad_positives: np.ndarray
    grad_negatives: np.ndarray


class BatchContrastiveResult(NamedTuple):
    loss: float
    grad: np.ndarray  # w.r.t. batch embeddings; queue rows are gradient-stopped
    n_anchors: int
    n_skipped: int

    @property
    def no_positives(self) -> bool:
        return self.n_anchors == 0


def _as_unit_rows(x, name: str, allow_zero: bool = False) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.size:
        bad = np.abs(np.linalg.norm(x, axis=1) - 1.0) > UNIT_NORM_TOL
        if allow_zero:
            bad &= np.any(x != 0.0, axis=1)
        if np.any(bad):
            raise ValueError(f"{name} rows must have unit norm")
    return x


# ---------------------------------------------------------------------------
# similarity transforms on cosines
# ---------------------------------------------------------------------------


def _margin_cos(c: np.ndarray, margin: float) -> tuple[np.ndarray, np.ndarray]:
    """``cos(arccos(c) + margin)`` with the angle clamped to [0, pi], and its
    derivative with respect to ``c``."""
    theta = np.arccos(np.clip(c, -1.0, 1.0))
    shifted = theta + margin
    inside = shifted < math.pi
    value = np.where(inside, np.cos(np.minimum(shifted, math.pi)), -1.0)
    sin_theta = np.maximum(np.sin(theta), 1e-12)
    deriv = np.where(inside, np.sin(np.minimum(shifted, math.pi)) / sin_theta, 0.0)
    return value, deriv


def _positive_sim(c, spec: SimilaritySpec, margin: float):
    if margin > 0.0:
        if spec.kappa_p != 0.0 or spec.kappa_n != 0.0:
            raise ValueError("fixed margin and t-vMF kappas are mutually exclusive")
        return _margin_cos(c, margin)
    return tvmf_from_cos(c, spec.kappa_p), d_tvmf_dcos(c, spec.kappa_p)


def _negative_sim(c, spec: SimilaritySpec):
    return tvmf_from_cos(c, spec.kappa_n), d_tvmf_dcos(c, spec.kappa_n)


# ---------------------------------------------------------------------------
# single anchor
# ---------------------------------------------------------------------------


def contrastive_from_sims(pos_sims, neg_sims, tau: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean over positives of ``-log(e^{s_p/tau} / (e^{s_p/tau} + sum_n e^{s_n/tau}))``.

    Returns the loss and its derivatives with respect to the positive and the
    negative similarities.
    """
    pos = np.asarray(pos_sims, dtype=np.float64) / tau
    neg = np.asarray(neg_sims, dtype=np.float64) / tau
    if pos.size == 0:
        raise ValueError("at least one positive is required")
    lse_neg = logsumexp(neg) if neg.size else -np.inf
    # softplus(lse_neg - s_p) == log(1 + sum_n exp(s_n - s_p))
    gap = lse_neg - pos
    terms = np.logaddexp(0.0, gap)
    loss = float(terms.mean())
    w_neg = np.exp(gap - terms)  # 1 - sigmoid-probability of the positive
    n_pos = pos.size
    d_pos = -w_neg / (n_pos * tau)
    if neg.size:
        d_neg = softmax(neg) * (w_neg.sum() / (n_pos * tau))
    else:
        d_neg = np.zeros(0)
    return loss, d_pos, d_neg


def _single(anchor, positives, negatives, spec: SimilaritySpec, tau: float, margin: float) -> ContrastiveResult:
    a = _as_unit_rows(anchor, "anchor")[0]
    P = _as_unit_rows(positives, "positives")
    N = _as_unit_rows(negatives, "negatives") if np.size(negatives) else np.zeros((0, a.size))
    if P.shape[0] == 0:
        raise ValueError("at least one positive is required")
    if P.shape[1] != a.size or N.shape[1] != a.size:
        raise ValueError("dimension mismatch between anchor and comparison sets")
    cp = np.clip(P @ a, -1.0, 1.0)
    cn = np.clip(N @ a, -1.0, 1.0)
    sp, dsp = _positive_sim(cp, spec, margin)
    sn, dsn = _negative_sim(cn, spec)
    loss, g_sp, g_sn = contrastive_from_sims(sp, sn, tau)
    g_cp = g_sp * dsp
    g_cn = g_sn * dsn
    grad_anchor = g_cp @ P + g_cn @ N
    return ContrastiveResult(loss, grad_anchor, g_cp[:, None] * a, g_cn[:, None] * a)


def supcon_loss(anchor, positives, negatives, spec: SimilaritySpec, tau: float = 1.0) -> ContrastiveResult:
    """Contrastive loss of one anchor with t-vMF similarity, ``kappa_p`` on the
    positive side and ``kappa_n`` on the negative side."""
    return _single(anchor, positives, negatives, spec, tau, 0.0)


def fixed_margin_supcon(anchor, positives, negatives, margin: float, tau: float = 1.0) -> ContrastiveResult:
    """Cosine contrastive loss with the positive angle widened by ``margin``."""
    if margin < 0:
        raise ValueError("margin must be >= 0")
    return _single(anchor, positives, negatives, SimilaritySpec.cosine(), tau, float(margin))


# ---------------------------------------------------------------------------
# batch against a queue
# ---------------------------------------------------------------------------


def _sim_and_slope(C: np.ndarray, kappa) -> tuple[np.ndarray, np.ndarray]:
    """t-vMF value and d/dc of a cosine matrix; ``kappa`` may be a matrix."""
    if np.ndim(kappa) == 0 and kappa == 0.0:
        return C, np.ones_like(C)
    u = 1.0 - C
    den = 1.0 + kappa * u
    s = (2.0 - u) / den
    s -= 1.0
    slope = (1.0 + 2.0 * kappa) / (den * den)
    return s, slope


# Similarities scaled by 1/tau span at most 2/tau, so exp(S - row_max) stays
# above exp(-2/tau); the fast path needs that to be a normal float64.
_FAST_PATH_SPAN = 600.0


def _queue_terms_fast(S: np.ndarray, pos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-anchor sum over positives of log(1 + sum_n e^{S_n - S_p}) and the
    derivative of that sum with respect to every entry of ``S``."""
    P = np.exp(S - S.max(axis=1, keepdims=True))
    neg_sum = np.where(pos, 0.0, P).sum(axis=1, keepdims=True)
    ratio = neg_sum / P  # sum_n e^{S_n - S_p}, meaningful on positive entries
    terms = np.where(pos, np.log1p(ratio), 0.0)
    w_neg = np.where(pos, ratio / (1.0 + ratio), 0.0)
    neg_weight = np.divide(w_neg.sum(axis=1, keepdims=True), neg_sum, out=np.zeros_like(neg_sum), where=neg_sum > 0)
    g_c = np.where(pos, -w_neg, P * neg_weight)
    return g_c, terms.sum(axis=1)


def _queue_terms_stable(S: np.ndarray, pos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Same contract as ``_queue_terms_fast`` without the bounded-span assumption."""
    neg_logits = np.where(pos, -np.inf, S)
    row_max = neg_logits.max(axis=1, keepdims=True)
    row_max[~np.isfinite(row_max)] = 0.0
    neg_exp = np.exp(neg_logits - row_max)
    neg_sum = neg_exp.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        lse_neg = np.log(neg_sum) + row_max
    gap = np.where(pos, lse_neg - S, -np.inf)
    terms = np.logaddexp(0.0, gap)
    w_neg = np.exp(gap - terms)
    neg_weight = np.divide(w_neg.sum(axis=1, keepdims=True), neg_sum, out=np.zeros_like(neg_sum), where=neg_sum > 0)
    g_c = np.where(pos, -w_neg, neg_exp * neg_weight)
    return g_c, terms.sum(axis=1)


def supcon_batch_loss(
    embeddings,
    labels,
    queue_embeddings,
    queue_labels,
    spec: SimilaritySpec,
    tau: float = 1.0,
    margin: float = 0.0,
) -> BatchContrastiveResult:
    """Every batch row is an anchor; same-label queue rows are its positives and
    the rest its negatives.  Anchors without a queue positive are skipped and the
    loss is averaged over the remaining ones.

    An all-zero batch row (a projection with no direction, see ``net.forward``)
    is skipped the same way.
    """
    E = _as_unit_rows(embeddings, "embeddings", allow_zero=True)
    labels = np.asarray(labels)
    Q = np.asarray(queue_embeddings, dtype=np.float64)
    q_labels = np.asarray(queue_labels)
    n = E.shape[0]
    if Q.shape[0] == 0:
        return BatchContrastiveResult(0.0, np.zeros_like(E), 0, n)

    pos = labels[:, None] == q_labels[None, :]
    n_pos = pos.sum(axis=1)
    active = (n_pos > 0) & np.any(E != 0.0, axis=1)
    n_active = int(active.sum())
    if n_active == 0:
        return BatchContrastiveResult(0.0, np.zeros_like(E), 0, n)

    C = np.clip(E @ Q.T, -1.0, 1.0)
    if margin > 0.0:
        if spec.kappa_p != 0.0 or spec.kappa_n != 0.0:
            raise ValueError("fixed margin and t-vMF kappas are mutually exclusive")
        sp, dp = _margin_cos(C, margin)
        S = np.where(pos, sp, C)
        slope = np.where(pos, dp, 1.0)
    elif spec.kappa_p == spec.kappa_n:
        S, slope = _sim_and_slope(C, spec.kappa_p)
    else:
        S, slope = _sim_and_slope(C, np.where(pos, spec.kappa_p, spec.kappa_n))
    S = S / tau
    if 2.0 / tau < _FAST_PATH_SPAN:
        g_c, per_anchor = _queue_terms_fast(S, pos)
    else:
        g_c, per_anchor = _queue_terms_stable(S, pos)
    safe_npos = np.maximum(n_pos, 1)
    loss = float((per_anchor[active] / safe_npos[active]).sum() / n_active)
    coef = np.where(active, 1.0 / (safe_npos * tau * n_active), 0.0)[:, None]
    g_c *= slope
    g_c *= coef
    return BatchContrastiveResult(loss, g_c @ Q, n_active, n - n_active)


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


def per_sample_cross_entropy(logits, labels) -> tuple[np.ndarray, np.ndarray]:
    """Per-row negative log-softmax of the true class and its gradient rows."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ValueError("logits must be n x C with C >= 2")
    if labels.shape != (logits.shape[0],):
        raise ValueError("labels must have one entry per logits row")
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise ValueError("label out of range")
    logp = log_softmax(logits, axis=1)
    rows = np.arange(logits.shape[0])
    losses = -logp[rows, labels]
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return losses, grad


def cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    losses, grad = per_sample_cross_entropy(logits, labels)
    n = losses.size
    return float(losses.mean()), grad / n


@dataclass
class DroState:
    group_weights: np.ndarray
    step_size: float = 0.01

    def __post_init__(self):
        self.group_weights = np.asarray(self.group_weights, dtype=np.float64)
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if np.any(self.group_weights < 0) or abs(self.group_weights.sum() - 1.0) > 1e-12:
            raise ValueError("group weights must be nonnegative and sum to 1")

    @classmethod
    def uniform(cls, n_groups: int, step_size: float = 0.01) -> "DroState":
        return cls(np.full(n_groups, 1.0 / n_groups), step_size)


def robust_dro_step(per_sample_losses, groups, state: DroState) -> tuple[float, np.ndarray, DroState]:
    """One exponentiated-gradient ascent step on the group weights.

    Returns the group-weighted loss (with the updated weights), per-sample
    weights whose dot product with ``per_sample_losses`` equals that loss, and
    the new state.
    """
    losses = np.asarray(per_sample_losses, dtype=np.float64)
    groups = np.asarray(groups)
    if losses.size == 0:
        raise ValueError("at least one sample is required")
    G = state.group_weights.size
    counts = np.bincount(groups, minlength=G).astype(np.float64)
    sums = np.bincount(groups, weights=losses, minlength=G)
    present = counts > 0
    group_loss = np.zeros(G)
    group_loss[present] = sums[present] / counts[present]
    w = state.group_weights * np.exp(state.step_size * group_loss)
    w /= w.sum()
    weighted = float(np.dot(w[present], group_loss[present]))
    sample_w = np.zeros(G)
    sample_w[present] = w[present] / counts[present]
    return weighted, sample_w[groups], DroState(w, state.step_size)


def cvar_dro(per_sample_losses, q: float) -> tuple[float, np.ndarray]:
    """Average of the ``ceil(q n)`` largest losses; ties at the cutoff go to the
    lowest sample index."""
    losses = np.asarray(per_sample_losses, dtype=np.float64)
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    n = losses.size
    if n == 0:
        raise ValueError("at least one sample is required")
    k = max(1, math.ceil(q * n - 1e-9))  # guard 0.3 * 10 == 3.0000000000000004
    # stable sort on -loss keeps lower indices first among equal losses
    order = np.argsort(-losses, kind="stable")[:k]
    mask = np.zeros(n, dtype=bool)
    mask[order] = True
    return float(losses[mask].mean()), mask
