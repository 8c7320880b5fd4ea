"""Score-level losses shared by the engine, the oracles and the attacks.

All functions accept a single score vector of shape ``(k,)`` or a batch of
shape ``(B, k)`` and return per-sample values.
"""
from __future__ import annotations

import numpy as np

LOSS_KINDS = ("hinge", "ce")


def _rival(scores: np.ndarray, exclude: np.ndarray) -> np.ndarray:
    # argmax over classes other than `exclude`; np.argmax breaks ties by lowest index
    masked = scores.copy()
    masked[np.arange(len(scores)), exclude] = -np.inf
    return np.argmax(masked, axis=1)


def _as_batch(scores, labels):
    scores = np.asarray(scores)
    single = scores.ndim == 1
    scores = np.atleast_2d(scores)
    if scores.shape[1] < 2:
        raise ValueError("hinge loss needs at least two classes")
    labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), (scores.shape[0],))
    return scores, labels, single


def hinge_loss(scores, label, target=None):
    """Logit-difference adversarial loss (to be maximized).

    Untargeted: ``max_{i != y} s_i - s_y``. Targeted at ``c``:
    ``s_c - max_{i != c} s_i``. No confidence clamp is applied.
    """
    scores, labels, single = _as_batch(scores, label)
    rows = np.arange(len(scores))
    if target is None:
        rival = _rival(scores, labels)
        value = scores[rows, rival] - scores[rows, labels]
    else:
        tgt = np.broadcast_to(np.asarray(target, dtype=np.int64), labels.shape)
        rival = _rival(scores, tgt)
        value = scores[rows, tgt] - scores[rows, rival]
    return value[0] if single else value


def hinge_grad(scores, label, target=None) -> np.ndarray:
    """Gradient of :func:`hinge_loss` w.r.t. the scores (one-hot difference)."""
    scores, labels, single = _as_batch(scores, label)
    rows = np.arange(len(scores))
    grad = np.zeros_like(scores)
    if target is None:
        rival = _rival(scores, labels)
        grad[rows, rival] += 1
        grad[rows, labels] -= 1
    else:
        tgt = np.broadcast_to(np.asarray(target, dtype=np.int64), labels.shape)
        rival = _rival(scores, tgt)
        grad[rows, tgt] += 1
        grad[rows, rival] -= 1
    return grad[0] if single else grad


def log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(scores: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(scores))


def cross_entropy(scores, label):
    scores, labels, single = _as_batch(scores, label)
    value = -log_softmax(scores)[np.arange(len(scores)), labels]
    return value[0] if single else value


def cross_entropy_grad(scores, label) -> np.ndarray:
    scores, labels, single = _as_batch(scores, label)
    grad = softmax(scores)
    grad[np.arange(len(scores)), labels] -= 1
    return grad[0] if single else grad


def loss_and_grad(kind: str, scores, label, target=None):
    """Per-sample loss values and d(loss)/d(scores) for ``kind`` in LOSS_KINDS."""
    if kind == "hinge":
        return hinge_loss(scores, label, target), hinge_grad(scores, label, target)
    if kind == "ce":
        if target is not None:
            raise ValueError("cross-entropy is only defined for the true label")
        return cross_entropy(scores, label), cross_entropy_grad(scores, label)
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
