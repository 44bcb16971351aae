"""Contrastive text-label alignment loss, hard negative mining, and BCE.

Mining is a discrete per-batch selection: for each sample, the non-positive
labels most similar to its text feature become negatives (as many as there
are positives, fewer if the taxonomy runs out). No gradient flows through
the selection itself; the loss differentiates through every similarity in
the selected union set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass
class LabelSets:
    """Per-sample positive, mined-negative, and union label id lists."""

    positives: list[list[int]]
    negatives: list[list[int]]

    @property
    def unions(self) -> list[list[int]]:
        return [sorted(p + n) for p, n in zip(self.positives, self.negatives)]


def similarity_matrix(Z: torch.Tensor, L: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """Cosine similarities between text rows and label rows: (M, K)."""
    zn = torch.clamp(torch.linalg.vector_norm(Z, dim=1, keepdim=True), min=eps)
    ln = torch.clamp(torch.linalg.vector_norm(L, dim=1, keepdim=True), min=eps)
    return (Z / zn) @ (L / ln).T


def mine_hard_negatives(sim, Y) -> LabelSets:
    """Top-|P(i)| most text-similar non-positive labels per sample.

    Ties break toward the lower label id. Raises on a sample with no
    positive label.
    """
    sim = sim.detach().numpy() if isinstance(sim, torch.Tensor) else np.asarray(sim, dtype=np.float64)
    Y = Y.detach().numpy() if isinstance(Y, torch.Tensor) else np.asarray(Y)
    M, K = sim.shape
    positives, negatives = [], []
    for i in range(M):
        pos = np.flatnonzero(Y[i] > 0)
        if pos.size == 0:
            raise ValueError(f"sample {i} has no positive label")
        masked = sim[i].copy()
        masked[pos] = -np.inf
        order = np.argsort(-masked, kind="stable")
        n_neg = min(pos.size, K - pos.size)
        negatives.append(sorted(int(j) for j in order[:n_neg]))
        positives.append([int(j) for j in pos])
    return LabelSets(positives=positives, negatives=negatives)


def tla_loss(Z: torch.Tensor, L: torch.Tensor, sets: LabelSets, tau: float = 0.07) -> torch.Tensor:
    """Batch-mean contrastive alignment loss at temperature tau.

    Per sample: average over positives p of
    -log softmax over the union set S of sim(z_i, f_s)/tau, evaluated at p.
    Stabilized by log-sum-exp.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    sim = similarity_matrix(Z, L) / tau
    per_sample = []
    for i, (pos, union) in enumerate(zip(sets.positives, sets.unions)):
        row = sim[i]
        lse = torch.logsumexp(row[torch.tensor(union, dtype=torch.long)], dim=0)
        pos_sims = row[torch.tensor(pos, dtype=torch.long)]
        per_sample.append((lse - pos_sims).mean())
    return torch.stack(per_sample).mean()


def bce_loss(Y: torch.Tensor, Yhat: torch.Tensor) -> torch.Tensor:
    """Binary cross entropy summed over labels, averaged over samples.

    Probabilities are clamped to [1e-7, 1-1e-7] before the logs.
    """
    if Y.shape != Yhat.shape:
        raise ValueError(f"shape mismatch: Y {tuple(Y.shape)} vs Yhat {tuple(Yhat.shape)}")
    p = torch.clamp(Yhat, 1e-7, 1.0 - 1e-7)
    ll = Y * torch.log(p) + (1.0 - Y) * torch.log(1.0 - p)
    return -ll.sum(dim=1).mean()


def total_loss(bce: torch.Tensor, tla: torch.Tensor, tla_enabled: bool = True) -> torch.Tensor:
    """Joint objective: unweighted sum; the TLA term can be switched off."""
    return bce + tla if tla_enabled else bce
