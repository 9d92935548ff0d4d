"""Regularization, cross-entropy and total losses with their gradients."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .embeddings import score_matrix, score_matrix_backward


@dataclass
class LossBreakdown:
    ce: float
    reg_pos: float
    reg_neg: float
    reg: float
    total: float
    beta: float
    epsilon: float

    def as_dict(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in ("ce", "reg_pos", "reg_neg", "reg", "total")}


def reg_loss(S: np.ndarray, M: np.ndarray, epsilon: float, return_grad: bool = False):
    """Mean positive energy plus mean hinge ``max(0, eps - S)`` over negatives.

    ``S`` and ``M`` may carry a leading batch axis, in which case the three
    returned values are per-sample arrays and ``dS`` is per-sample too.
    """
    S = np.asarray(S)
    M = np.asarray(M)
    if S.shape != M.shape:
        raise ValueError(f"score/mask shape mismatch: {S.shape} vs {M.shape}")
    axes = (-2, -1)
    pos = M.astype(S.dtype)
    neg = 1.0 - pos
    n_pos = pos.sum(axis=axes)
    n_neg = neg.sum(axis=axes)
    if np.any(n_pos == 0) or np.any(n_neg == 0):
        raise ValueError("mask must contain at least one positive and one negative triplet")
    gap = epsilon - S
    hinge = np.maximum(gap, 0.0)
    reg_pos = (pos * S).sum(axis=axes) / n_pos
    reg_neg = (neg * hinge).sum(axis=axes) / n_neg
    reg = reg_pos + reg_neg
    if not return_grad:
        return reg_pos, reg_neg, reg
    active = neg * (gap > 0)
    dS = pos / n_pos[..., None, None] - active / n_neg[..., None, None]
    return reg_pos, reg_neg, reg, dS


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(np.asarray(logits, dtype=np.float64)))


def ce_loss(logits, y: int) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= y < logits.shape[-1]:
        raise ValueError(f"class index {y} out of range for {logits.shape[-1]} classes")
    return float(-log_softmax(logits)[y])


def ce_loss_batch(logits: np.ndarray, y: np.ndarray):
    """Per-sample CE values and d(ce_i)/d(logits_i)."""
    logp = log_softmax(logits)
    idx = np.arange(len(y))
    ce = -logp[idx, y]
    grad = np.exp(logp)
    grad[idx, y] -= 1.0
    return ce, grad


def total_loss(ce: float, reg: float, beta: float) -> float:
    if beta < 0:
        raise ValueError("beta must be >= 0")
    return ce + beta * reg


def batch_objective(z: np.ndarray, logits: np.ndarray, labels: np.ndarray, masks: np.ndarray,
                    ce_weight: np.ndarray, tables, beta: float, epsilon: float, with_reg: bool = True):
    """Loss on a mini-batch plus gradients w.r.t. ``z``, ``logits`` and the tables.

    ``labels`` holds decoder class indices (ignored where ``ce_weight`` is 0,
    i.e. for synthetic element images); ``masks`` is (B, R, O). CE is
    averaged over the CE-weighted samples, the regularizer over all samples.
    Returns ``(LossBreakdown, dz, dlogits, table_grads)``.
    """
    B = len(z)
    if B == 0:
        raise ValueError("empty batch")
    w = np.asarray(ce_weight, dtype=z.dtype)
    n_ce = w.sum()
    safe_labels = np.where(w > 0, labels, 0)
    ce_i, g_logits = ce_loss_batch(logits, safe_labels)
    if n_ce > 0:
        ce = float((w * ce_i).sum() / n_ce)
        dlogits = g_logits * (w / n_ce)[:, None]
    else:
        ce = 0.0
        dlogits = np.zeros_like(logits)

    if not with_reg:
        breakdown = LossBreakdown(ce, 0.0, 0.0, 0.0, ce, beta, epsilon)
        return breakdown, np.zeros_like(z), dlogits, None

    S, cache = score_matrix(tables, z, return_cache=True)
    reg_pos, reg_neg, reg_i, dS = reg_loss(S, masks, epsilon, return_grad=True)
    reg = float(reg_i.mean())
    breakdown = LossBreakdown(ce, float(reg_pos.mean()), float(reg_neg.mean()), reg,
                              total_loss(ce, reg, beta), beta, epsilon)
    dz, table_grads = score_matrix_backward(tables, dS * (beta / B), cache)
    return breakdown, dz, dlogits, table_grads
