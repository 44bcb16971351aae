"""Tokenization, vocabulary, and the compact trainable transformer encoder.

The encoder consumes padded token sequences and pools the [CLS] position
into a per-sample feature vector of size d_h. Its token-embedding table is
shared with the graph encoder's label-name embeddings.
"""

from __future__ import annotations

import re
from collections import Counter
from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np
import torch

from .numerics import (
    Parameter,
    gelu,
    init_projection,
    init_uniform,
    init_zeros,
    init_ones,
    layer_norm,
    softmax,
)

SPECIAL_TOKENS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
PAD_ID, UNK_ID, CLS_ID, SEP_ID = 0, 1, 2, 3

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def word_tokens(text: str) -> list[str]:
    """Lowercased alphanumeric runs; punctuation and whitespace separate."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]
    id_to_token: list[str]
    min_freq: int = 1

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode_words(self, text: str) -> list[int]:
        return [self.id(t) for t in word_tokens(text)]


@dataclass
class TokenSequence:
    ids: list[int]
    attention_mask: list[int]


def build_vocab(corpus: Iterable[str], min_freq: int = 1, max_vocab: int = 30000) -> Vocabulary:
    """Frequency-ordered vocabulary from the training split only.

    Tokens with count >= min_freq survive, most frequent first (ties by
    token string), capped at max_vocab; the four specials are prepended.
    """
    counts: Counter[str] = Counter()
    n_docs = 0
    for text in corpus:
        n_docs += 1
        counts.update(word_tokens(text))
    if n_docs == 0:
        raise ValueError("empty corpus: cannot build a vocabulary")
    kept = sorted(
        (t for t, c in counts.items() if c >= min_freq),
        key=lambda t: (-counts[t], t),
    )[:max_vocab]
    id_to_token = list(SPECIAL_TOKENS) + kept
    return Vocabulary(
        token_to_id={t: i for i, t in enumerate(id_to_token)},
        id_to_token=id_to_token,
        min_freq=min_freq,
    )


def tokenize(vocab: Vocabulary, text: str, max_len: int) -> TokenSequence:
    """[CLS] + up to max_len-2 word ids + [SEP], padded to max_len.

    Truncation keeps the earliest tokens.
    """
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    ids = [CLS_ID] + vocab.encode_words(text)[: max_len - 2] + [SEP_ID]
    mask = [1] * len(ids)
    pad = max_len - len(ids)
    return TokenSequence(ids=ids + [PAD_ID] * pad, attention_mask=mask + [0] * pad)


def save_vocab(path, vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("# specials: " + " ".join(SPECIAL_TOKENS) + "\n")
        for tok in vocab.id_to_token[len(SPECIAL_TOKENS) :]:
            f.write(tok + "\n")


def load_vocab(path) -> Vocabulary:
    tokens = list(SPECIAL_TOKENS)
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            tokens.append(line)
    return Vocabulary(token_to_id={t: i for i, t in enumerate(tokens)}, id_to_token=tokens)


@dataclass
class TextEncoderConfig:
    d_h: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 64
    ff_mult: int = 4

    def __post_init__(self):
        if self.d_h % self.n_heads != 0:
            raise ValueError(f"d_h={self.d_h} not divisible by n_heads={self.n_heads}")


class TextEncoder:
    """Compact post-norm transformer encoder with learned positions.

    Per layer: masked multi-head self-attention with residual + layer norm,
    then a GELU feed-forward (inner size ff_mult*d_h) with residual + layer
    norm. The [CLS] row of the final hidden states is the text feature.
    """

    def __init__(
        self,
        vocab_size: int,
        cfg: TextEncoderConfig,
        rng: torch.Generator,
        token_embeddings: Parameter | None = None,
    ):
        self.cfg = cfg
        d = cfg.d_h
        if token_embeddings is None:
            token_embeddings = init_uniform((vocab_size, d), rng, name="token_emb")
        self.token_emb = token_embeddings
        self.pos_emb = init_uniform((cfg.max_len, d), rng, name="pos_emb")
        self.layers = []
        for li in range(cfg.n_layers):
            self.layers.append(
                {
                    "W_q": init_projection((d, d), rng),
                    "b_q": init_zeros((d,)),
                    "W_k": init_projection((d, d), rng),
                    "b_k": init_zeros((d,)),
                    "W_v": init_projection((d, d), rng),
                    "b_v": init_zeros((d,)),
                    "W_o": init_projection((d, d), rng),
                    "b_o": init_zeros((d,)),
                    "ln1_g": init_ones((d,)),
                    "ln1_b": init_zeros((d,)),
                    "W_ff1": init_projection((d, cfg.ff_mult * d), rng),
                    "b_ff1": init_zeros((cfg.ff_mult * d,)),
                    "W_ff2": init_projection((cfg.ff_mult * d, d), rng),
                    "b_ff2": init_zeros((d,)),
                    "ln2_g": init_ones((d,)),
                    "ln2_b": init_zeros((d,)),
                }
            )

    def parameters(self, prefix: str = "text") -> dict[str, Parameter]:
        out = {f"{prefix}.pos_emb": self.pos_emb}
        for li, layer in enumerate(self.layers):
            for k, p in layer.items():
                out[f"{prefix}.layer{li}.{k}"] = p
        return out

    def encode_batch(self, ids: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """ids, mask: (M, n) long / float -> (H: (M, n, d_h), h_text: (M, d_h))."""
        M, n = ids.shape
        cfg = self.cfg
        if n > cfg.max_len:
            raise ValueError(f"sequence length {n} exceeds position table {cfg.max_len}")
        h = self.token_emb.value[ids] + self.pos_emb.value[:n]
        maskf = mask.to(torch.float64)
        # -inf logits on padded key positions
        key_bias = torch.where(
            maskf > 0, torch.zeros_like(maskf), torch.full_like(maskf, float("-inf"))
        )[:, None, None, :]  # (M, 1, 1, n)
        n_heads = cfg.n_heads
        dim_h = cfg.d_h // n_heads
        for layer in self.layers:
            q = h @ layer["W_q"].value + layer["b_q"].value
            k = h @ layer["W_k"].value + layer["b_k"].value
            v = h @ layer["W_v"].value + layer["b_v"].value
            # (M, heads, n, dim_h)
            q = q.view(M, n, n_heads, dim_h).transpose(1, 2)
            k = k.view(M, n, n_heads, dim_h).transpose(1, 2)
            v = v.view(M, n, n_heads, dim_h).transpose(1, 2)
            logits = q @ k.transpose(-1, -2) / np.sqrt(dim_h) + key_bias
            attn = softmax(logits, axis=-1)
            ctx = (attn @ v).transpose(1, 2).reshape(M, n, cfg.d_h)
            ctx = ctx @ layer["W_o"].value + layer["b_o"].value
            h = layer_norm(h + ctx, layer["ln1_g"], layer["ln1_b"])
            ff = gelu(h @ layer["W_ff1"].value + layer["b_ff1"].value)
            ff = ff @ layer["W_ff2"].value + layer["b_ff2"].value
            h = layer_norm(h + ff, layer["ln2_g"], layer["ln2_b"])
        return h, h[:, 0, :]


def batch_tensors(sequences: list[TokenSequence]) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack TokenSequences of one padded length into id/mask tensors."""
    lens = {len(s.ids) for s in sequences}
    if len(lens) != 1:
        raise ValueError("all sequences in a batch must share one padded length")
    ids = torch.tensor([s.ids for s in sequences], dtype=torch.long)
    mask = torch.tensor([s.attention_mask for s in sequences], dtype=torch.float64)
    return ids, mask
