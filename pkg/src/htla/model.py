"""Full model assembly, prediction, and the training loop.

The classifier is shared across labels: for sample feature h and label
feature f_i, the label's logit is the i-th element of W_c^T (h + f_i) + b.
Because only the diagonal element is kept, this reduces to a per-sample
term plus a per-label term; the literal per-label construction is kept as
a test oracle.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np
import torch

from . import losses
from .data import Sample, label_matrix
from .evaluation import f1_scores
from .graph_encoder import GraphConfig, GraphEncoder
from .hierarchy import LabelTaxonomy
from .numerics import (
    Parameter,
    adam_step,
    checkpoint_bytes,
    init_projection,
    init_uniform,
    init_zeros,
    parse_checkpoint,
    restore_parameters,
)
from .text_encoder import (
    TextEncoder,
    TextEncoderConfig,
    Vocabulary,
    batch_tensors,
    tokenize,
)


class TrainingError(RuntimeError):
    """Non-finite loss or other unrecoverable training failure."""


@dataclass
class TrainConfig:
    # desk-scale defaults; the paper-scale preset lives in the CLI
    d_h: int = 64
    d_p: int = 30
    n_layers: int = 2
    n_text_heads: int = 4
    n_graph_heads: int = 4
    max_len: int = 64
    lr: float = 1e-3
    batch_size: int = 16
    tau: float = 0.07
    patience: int = 6
    max_epochs: int = 50
    seed: int = 0
    tla_enabled: bool = True
    use_name_embedding: bool = True
    use_node_embedding: bool = True
    use_enhancer: bool = True
    dropout_rate: float = 0.1
    min_freq: int = 1
    max_vocab: int = 30000

    def __post_init__(self):
        for name in ("d_h", "d_p", "n_layers", "n_text_heads", "n_graph_heads",
                     "max_len", "batch_size", "patience", "max_epochs", "min_freq", "max_vocab"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("lr", "tau"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_h % self.n_text_heads or self.d_h % self.n_graph_heads:
            raise ValueError("d_h must be divisible by both head counts")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PredictionOutput:
    logits: torch.Tensor
    probs: torch.Tensor
    binary: np.ndarray
    h_text: torch.Tensor
    L: torch.Tensor


class HTLAModel:
    """Text encoder + graph label encoder + shared classifier."""

    def __init__(self, cfg: TrainConfig, vocab: Vocabulary, tax: LabelTaxonomy):
        self.cfg = cfg
        self.vocab = vocab
        self.tax = tax
        rng = torch.Generator().manual_seed(cfg.seed)
        self.dropout_rng = torch.Generator().manual_seed(cfg.seed + 1)
        self.token_emb = init_uniform((len(vocab), cfg.d_h), rng, name="token_emb")
        self.text = TextEncoder(
            len(vocab),
            TextEncoderConfig(
                d_h=cfg.d_h, n_layers=cfg.n_layers, n_heads=cfg.n_text_heads, max_len=cfg.max_len
            ),
            rng,
            token_embeddings=self.token_emb,
        )
        self.graph = GraphEncoder(
            tax,
            vocab,
            GraphConfig(
                d_h=cfg.d_h,
                d_p=cfg.d_p,
                n_heads=cfg.n_graph_heads,
                dropout_rate=cfg.dropout_rate,
                use_name_embedding=cfg.use_name_embedding,
                use_node_embedding=cfg.use_node_embedding,
                use_enhancer=cfg.use_enhancer,
            ),
            rng,
            token_embeddings=self.token_emb,
        )
        self.W_c = init_projection((cfg.d_h, tax.num_labels), rng, name="classifier.W_c")
        self.b = init_zeros((tax.num_labels,), name="classifier.b")

    def parameters(self) -> dict[str, Parameter]:
        out = {"token_emb": self.token_emb}
        out.update(self.text.parameters("text"))
        out.update(self.graph.parameters("graph"))
        out["classifier.W_c"] = self.W_c
        out["classifier.b"] = self.b
        for name, p in out.items():
            p.name = name
        return out

    def forward(self, ids: torch.Tensor, mask: torch.Tensor, train: bool = False) -> PredictionOutput:
        _, h_text = self.text.encode_batch(ids, mask)
        L = self.graph.encode_labels(train=train, rng=self.dropout_rng)
        # logit_i = (W_c^T h + b)_i + (W_c^T f_i)_i: only the diagonal of the
        # label-side K x K product is needed
        label_term = (L * self.W_c.value.T).sum(dim=1)
        logits = h_text @ self.W_c.value + self.b.value + label_term
        probs = torch.sigmoid(logits)
        binary = (probs.detach().numpy() >= 0.5).astype(np.int64)
        return PredictionOutput(logits=logits, probs=probs, binary=binary, h_text=h_text, L=L)

    def zero_grads(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def train_step(self, ids: torch.Tensor, mask: torch.Tensor, Y: torch.Tensor) -> dict[str, float]:
        """One optimization step: forward, per-batch hard mining, joint
        loss, backward, Adam on every parameter."""
        cfg = self.cfg
        params = self.parameters()
        self.zero_grads()
        out = self.forward(ids, mask, train=True)
        bce = losses.bce_loss(Y, out.probs)
        if cfg.tla_enabled:
            sim = losses.similarity_matrix(out.h_text, out.L)
            sets = losses.mine_hard_negatives(sim, Y)
            tla = losses.tla_loss(out.h_text, out.L, sets, tau=cfg.tau)
        else:
            tla = torch.zeros((), dtype=torch.float64)
        total = losses.total_loss(bce, tla, tla_enabled=cfg.tla_enabled)
        if not torch.isfinite(total):
            raise TrainingError(
                f"non-finite loss (bce={bce.item():.6g}, tla={tla.item():.6g})"
            )
        total.backward()
        for p in params.values():
            adam_step(p, lr=cfg.lr)
        self.zero_grads()
        return {
            "loss_bce": bce.item(),
            "loss_tla": tla.item() if cfg.tla_enabled else 0.0,
            "loss_total": total.item(),
        }

    def predict(self, ids: torch.Tensor, mask: torch.Tensor, batch_size: int = 64) -> PredictionOutput:
        """Eval-mode predictions with 0.5 thresholding, batched."""
        chunks = []
        with torch.no_grad():
            for start in range(0, ids.shape[0], batch_size):
                chunks.append(self.forward(ids[start : start + batch_size],
                                           mask[start : start + batch_size], train=False))
        logits = torch.cat([c.logits for c in chunks])
        probs = torch.cat([c.probs for c in chunks])
        h_text = torch.cat([c.h_text for c in chunks])
        binary = (probs.numpy() >= 0.5).astype(np.int64)
        return PredictionOutput(logits=logits, probs=probs, binary=binary,
                                h_text=h_text, L=chunks[-1].L)


def encode_samples(
    vocab: Vocabulary, samples: list[Sample], max_len: int, num_labels: int
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Tokenize samples into (ids, mask, Y) tensors of one padded length."""
    seqs = [tokenize(vocab, s.text, max_len) for s in samples]
    ids, mask = batch_tensors(seqs)
    Y = torch.from_numpy(label_matrix(samples, num_labels))
    return ids, mask, Y


def evaluate_model(model: HTLAModel, ids, mask, Y, batch_size: int = 64) -> tuple[float, float]:
    out = model.predict(ids, mask, batch_size=batch_size)
    rep = f1_scores(Y.numpy() if isinstance(Y, torch.Tensor) else Y, out.binary)
    return rep.micro_f1, rep.macro_f1


@dataclass
class FitResult:
    history: list[dict]
    best_epoch: int
    best_macro_f1: float
    best_state: bytes
    stopped_early: bool


def fit(
    model: HTLAModel,
    train_data: tuple[torch.Tensor, torch.Tensor, torch.Tensor],
    val_data: tuple[torch.Tensor, torch.Tensor, torch.Tensor],
    cfg: TrainConfig | None = None,
) -> FitResult:
    """Epoch loop with seeded shuffling and Macro-F1 early stopping.

    Keeps the checkpoint of the best validation Macro-F1 epoch (strict
    improvement) and stops after ``patience`` consecutive epochs without
    one; the best state is restored into the model before returning.
    """
    cfg = cfg or model.cfg
    ids, mask, Y = train_data
    vids, vmask, vY = val_data
    if ids.shape[0] == 0:
        raise ValueError("empty training split")
    if vids.shape[0] == 0:
        raise ValueError("empty validation split")
    history: list[dict] = []
    best_ma = -1.0
    best_epoch = 0
    best_state = checkpoint_bytes(model.parameters())
    bad_epochs = 0
    stopped_early = False
    M = ids.shape[0]
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.monotonic()
        perm = np.random.default_rng(cfg.seed + epoch).permutation(M)
        sum_bce = sum_tla = 0.0
        n_batches = 0
        for start in range(0, M, cfg.batch_size):
            sel = torch.from_numpy(perm[start : start + cfg.batch_size])
            try:
                stats = model.train_step(ids[sel], mask[sel], Y[sel])
            except TrainingError as e:
                raise TrainingError(f"epoch {epoch}, batch {n_batches}: {e}") from e
            sum_bce += stats["loss_bce"]
            sum_tla += stats["loss_tla"]
            n_batches += 1
        mi, ma = evaluate_model(model, vids, vmask, vY)
        history.append(
            {
                "epoch": epoch,
                "loss_bce": sum_bce / n_batches,
                "loss_tla": sum_tla / n_batches,
                "val_micro_f1": mi,
                "val_macro_f1": ma,
                "seconds": time.monotonic() - t0,
            }
        )
        if ma > best_ma:
            best_ma = ma
            best_epoch = epoch
            best_state = checkpoint_bytes(model.parameters())
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                stopped_early = True
                break
    restore_parameters(model.parameters(), parse_checkpoint(best_state))
    return FitResult(
        history=history,
        best_epoch=best_epoch,
        best_macro_f1=best_ma,
        best_state=best_state,
        stopped_early=stopped_early,
    )
