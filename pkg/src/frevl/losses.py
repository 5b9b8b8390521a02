"""Task losses, the in-batch contrastive auxiliary, and the weighted total.

Every loss returns (value, gradient w.r.t. its inputs) so the training driver
can assemble upstream gradients without any autodiff machinery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class LossWeights:
    lambda_task: float = 1.0
    lambda_con: float = 0.1
    lambda_reg: float = 0.01
    tau: float = 0.07

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if min(self.lambda_task, self.lambda_con, self.lambda_reg) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class TaskKind:
    kind: str  # classification | pairwise_ranking | regression
    num_classes: int = 0

    def __post_init__(self):
        if self.kind not in ("classification", "pairwise_ranking",
                             "regression"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind == "classification" and self.num_classes < 2:
            raise ValueError("classification needs num_classes >= 2")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """Mean negative log-likelihood; grad is (softmax - onehot)/B."""
    logits = np.atleast_2d(logits)
    targets = np.asarray(targets, dtype=np.int64)
    B, K = logits.shape
    if targets.shape != (B,):
        raise ShapeError(f"targets shape {targets.shape} != ({B},)")
    if np.any(targets < 0) or np.any(targets >= K):
        raise IndexError(f"target index out of range [0, {K})")
    logp = _log_softmax(logits)
    loss = -float(np.mean(logp[np.arange(B), targets]))
    grad = np.exp(logp)
    grad[np.arange(B), targets] -= 1.0
    return loss, grad / B


def ranking_loss(score_pos: np.ndarray, score_neg: np.ndarray):
    """Pairwise logistic loss log(1 + exp(-(s+ - s-))), averaged."""
    score_pos = np.asarray(score_pos).reshape(-1)
    score_neg = np.asarray(score_neg).reshape(-1)
    if score_pos.shape != score_neg.shape:
        raise ShapeError(
            f"score lengths differ: {score_pos.shape} vs {score_neg.shape}")
    B = score_pos.size
    delta = score_pos - score_neg
    loss = float(np.mean(np.logaddexp(0.0, -delta)))
    sig = 1.0 / (1.0 + np.exp(delta))  # sigma(-delta), computed stably enough
    sig = np.where(delta > 30, np.exp(-delta), sig)
    grad_pos = -sig / B
    grad_neg = sig / B
    return loss, (grad_pos, grad_neg)


def smooth_l1(pred: np.ndarray, target: np.ndarray, beta: float = 1.0):
    """Huber-style loss: 0.5 e^2/beta inside |e| < beta, |e| - beta/2 outside."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    pred = np.asarray(pred).reshape(-1)
    target = np.asarray(target).reshape(-1)
    if pred.shape != target.shape:
        raise ShapeError(f"shapes differ: {pred.shape} vs {target.shape}")
    e = pred - target
    inside = np.abs(e) < beta
    per = np.where(inside, 0.5 * e * e / beta, np.abs(e) - 0.5 * beta)
    loss = float(np.mean(per))
    grad = np.where(inside, e / beta, np.sign(e)) / pred.size
    return loss, grad


def contrastive_loss(score_matrix: np.ndarray, tau: float):
    """InfoNCE over an in-batch score matrix S[i, j] = R(I_i, T_j): each row's
    diagonal entry is the positive against the row's other entries."""
    S = np.atleast_2d(score_matrix)
    B = S.shape[0]
    if S.shape != (B, B):
        raise ShapeError(f"score matrix must be square, got {S.shape}")
    if B < 2:
        raise ValueError("contrastive loss needs batch size >= 2")
    if tau <= 0:
        raise ValueError("tau must be positive")
    scaled = S / tau
    m = scaled.max(axis=1, keepdims=True)
    logz = m.squeeze(1) + np.log(np.exp(scaled - m).sum(axis=1))
    diag = np.diag(scaled)
    loss = float(np.mean(logz - diag))
    P = np.exp(scaled - logz[:, None])
    grad = (P - np.eye(B, dtype=S.dtype)) / (B * tau)
    return loss, grad


def _reg_param(name: str) -> bool:
    # L2 penalty covers weights and biases but not LayerNorm gains/biases.
    last = name.rsplit(".", 1)[-1]
    return not last.startswith("ln")


def l2_penalty(params: dict) -> float:
    return float(sum(np.sum(np.square(v.astype(np.float64)))
                     for k, v in params.items() if _reg_param(k)))


def total_loss(task_loss: float, con_loss: float, params: dict,
               weights: LossWeights):
    """Weighted total plus the L2 penalty; returns the reg gradient
    contribution (2 * lambda_reg * theta) to add to parameter grads."""
    reg = l2_penalty(params) if weights.lambda_reg > 0 else 0.0
    total = (weights.lambda_task * task_loss
             + weights.lambda_con * con_loss
             + weights.lambda_reg * reg)
    reg_grads = {}
    if weights.lambda_reg > 0:
        for k, v in params.items():
            if _reg_param(k):
                reg_grads[k] = (2.0 * weights.lambda_reg) * v
    return total, reg, reg_grads


def contrastive_scalar(scores: np.ndarray):
    """Project model outputs [..., out_dim] to the scalar used by the
    contrastive objective: the raw output for scalar heads, otherwise the
    margin last-logit minus first-logit (match evidence for K=2 heads).
    Returns (scalar array, function mapping d_scalar -> d_scores)."""
    if scores.shape[-1] == 1:
        s = scores[..., 0]

        def expand(ds):
            out = np.zeros_like(scores)
            out[..., 0] = ds
            return out
    else:
        s = scores[..., -1] - scores[..., 0]

        def expand(ds):
            out = np.zeros_like(scores)
            out[..., -1] = ds
            out[..., 0] = -ds
            return out
    return s, expand
