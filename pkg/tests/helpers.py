"""Shared numerical helpers for the test suite."""

import math

import numpy as np


def unit_rows(rng, n, dim):
    x = rng.standard_normal((int(n), dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f(x)
        flat[i] = keep - h
        down = f(x)
        flat[i] = keep
        g[i] = (up - down) / (2 * h)
    return grad


def rel_err(analytic, numeric, floor=1e-8):
    """Norm-wise relative error, with an absolute floor for near-zero gradients."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


def naive_loss(a, P, N, kp, kn, tau=1.0, margin=0.0):
    """Textbook form of the loss on raw dot products, no stabilisation."""
    cp = P @ a
    cn = N @ a
    if margin:
        cp = np.cos(np.minimum(np.arccos(np.clip(cp, -1, 1)) + margin, math.pi))
    sp = (1 + cp) / (1 + kp * (1 - cp)) - 1
    sn = (1 + cn) / (1 + kn * (1 - cn)) - 1
    num = np.exp(sp / tau)
    den = num + np.exp(sn / tau).sum()
    return float(np.mean(-np.log(num / den)))


def naive_batch(E, labels, Q, q_labels, kp, kn, tau=1.0, margin=0.0):
    total, active = 0.0, 0
    for e, y in zip(E, labels):
        same = q_labels == y
        if not same.any():
            continue
        total += naive_loss(e, Q[same], Q[~same], kp, kn, tau, margin)
        active += 1
    return total / active if active else 0.0


# one "PASS/FAIL criterion N: ..." line per acceptance criterion, echoed by conftest
ACCEPTANCE_LINES: list[str] = []


def report(criterion: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
