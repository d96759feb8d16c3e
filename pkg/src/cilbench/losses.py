"""Loss functions with analytic gradients.

All losses are pure numpy double-precision functions returning
(scalar loss, gradient w.r.t. the first argument). Training code backpropagates
these gradients through the network, so they are the single source of truth
for the objective math and are checked against finite differences in tests.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    ClassAlignmentError,
    InvalidTemperatureError,
    LabelError,
    UndefinedSimilarityError,
)

_NORM_EPS = 1e-12


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """s(a, b) = a.b / (|a||b|); undefined for zero vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < _NORM_EPS or nb < _NORM_EPS:
        raise UndefinedSimilarityError("cosine similarity of a zero vector")
    return float(a @ b / (na * nb))


def nt_xent_loss(z: np.ndarray, tau: float) -> tuple[float, np.ndarray]:
    """Temperature-scaled contrastive loss over a 2K x d projection batch.

    Rows r and r+K are a positive pair. Each of the 2K rows anchors one term:
    -log softmax of the positive's cosine similarity over all 2K-1 non-self
    rows, at temperature tau. Returns the mean loss and its gradient w.r.t. z.
    """
    z = np.asarray(z, dtype=np.float64)
    if tau <= 0:
        raise InvalidTemperatureError(f"temperature must be > 0, got {tau}")
    if z.ndim != 2 or z.shape[0] < 2 or z.shape[0] % 2 != 0:
        raise UndefinedSimilarityError(
            f"projection batch must have an even row count >= 2, got {z.shape}"
        )
    n = z.shape[0]
    k = n // 2
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms < _NORM_EPS):
        raise UndefinedSimilarityError("projection batch has a zero-norm row")
    u = z / norms[:, None]
    logits = (u @ u.T) / tau
    np.fill_diagonal(logits, -np.inf)
    pos = (np.arange(n) + k) % n

    row_max = logits.max(axis=1, keepdims=True)
    expv = np.exp(logits - row_max)
    denom = expv.sum(axis=1)
    losses = np.log(denom) + row_max.ravel() - logits[np.arange(n), pos]
    loss = float(losses.mean())

    # d loss / d logits, then back through the cosine-similarity matrix.
    p = expv / denom[:, None]
    p[np.arange(n), pos] -= 1.0
    g_logits = p / n
    g_s = g_logits / tau  # zero diagonal preserved (exp(-inf) = 0)
    g_u = (g_s + g_s.T) @ u
    # rows of u are z / |z|: project out the radial component
    g_z = (g_u - (np.sum(g_u * u, axis=1, keepdims=True)) * u) / norms[:, None]
    return loss, g_z


def cross_entropy_loss(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise LabelError(f"expected {n} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= c):
        raise LabelError(f"label out of range [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def distillation_loss(
    student_logits: np.ndarray, teacher_probs: np.ndarray
) -> tuple[float, np.ndarray]:
    """Per-old-class binary cross-entropy against frozen teacher probabilities.

    The teacher covers the first old-class columns of the student head; the
    loss averages sigmoid BCE over those entries and is zero-gradient on the
    new-class columns.
    """
    s = np.asarray(student_logits, dtype=np.float64)
    t = np.asarray(teacher_probs, dtype=np.float64)
    if s.ndim != 2 or t.ndim != 2 or s.shape[0] != t.shape[0]:
        raise ClassAlignmentError(
            f"student {s.shape} and teacher {t.shape} batches do not align"
        )
    old = t.shape[1]
    if old > s.shape[1]:
        raise ClassAlignmentError(
            f"teacher has {old} classes but student head has only {s.shape[1]}"
        )
    so = s[:, :old]
    # bce(sigmoid(s), t) = softplus(s) - t*s, elementwise
    softplus = np.logaddexp(0.0, so)
    loss = float((softplus - t * so).mean())
    grad = np.zeros_like(s)
    count = so.size
    grad[:, :old] = (1.0 / (1.0 + np.exp(-so)) - t) / count
    return loss, grad
