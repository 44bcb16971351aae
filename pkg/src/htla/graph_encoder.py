"""Graph-transformer label encoder.

Node features are the sum of a learned per-node table and the mean token
embedding of the label name (shared with the text encoder). Edge features
combine a spatial encoding indexed by hop distance with the average of
learned per-edge weights along the unique tree path. A single propagation
attention block moves information node-to-node, node-to-edge, and
edge-to-node; a residual feed-forward refinement produces the final label
feature matrix L (virtual root excluded).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .hierarchy import DistanceTable, LabelTaxonomy, compute_distances, path_edges
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
from .text_encoder import Vocabulary, word_tokens


@dataclass
class GraphConfig:
    d_h: int = 64
    d_p: int = 30
    n_heads: int = 4
    dropout_rate: float = 0.1
    use_name_embedding: bool = True
    use_node_embedding: bool = True
    use_enhancer: bool = True

    def __post_init__(self):
        if self.d_h % self.n_heads != 0:
            raise ValueError(f"d_h={self.d_h} not divisible by n_heads={self.n_heads}")


class GraphFeatureParams:
    """Node table, spatial table, and per-edge weights."""

    def __init__(self, tax: LabelTaxonomy, dt: DistanceTable, cfg: GraphConfig, rng: torch.Generator):
        n = tax.num_nodes
        self.node_table = init_uniform((n, cfg.d_h), rng, name="node_table")
        self.spatial_table = init_uniform((dt.max_dist + 1, cfg.d_p), rng, name="spatial_table")
        self.edge_weights = init_uniform((tax.num_edges, cfg.d_p), rng, name="edge_weights")

    def parameters(self, prefix: str) -> dict[str, Parameter]:
        return {
            f"{prefix}.node_table": self.node_table,
            f"{prefix}.spatial_table": self.spatial_table,
            f"{prefix}.edge_weights": self.edge_weights,
        }


class GPAParams:
    """Projections for the three propagation attention flows."""

    def __init__(self, cfg: GraphConfig, rng: torch.Generator):
        d, p, h = cfg.d_h, cfg.d_p, cfg.n_heads
        self.W_Q = init_projection((d, d), rng)
        self.W_K = init_projection((d, d), rng)
        self.W_V = init_projection((d, d), rng)
        self.W_1 = init_projection((p, h), rng)
        self.W_2 = init_projection((h, p), rng)
        self.W_3 = init_projection((p, d), rng)
        self.W_4 = init_projection((d, d), rng)
        self.n_heads = h
        self.dim_h = d // h

    def parameters(self, prefix: str) -> dict[str, Parameter]:
        return {
            f"{prefix}.W_Q": self.W_Q,
            f"{prefix}.W_K": self.W_K,
            f"{prefix}.W_V": self.W_V,
            f"{prefix}.W_1": self.W_1,
            f"{prefix}.W_2": self.W_2,
            f"{prefix}.W_3": self.W_3,
            f"{prefix}.W_4": self.W_4,
        }


class LabelEnhancerParams:
    """Feed-forward expansion (4*d_h), projection back, and layer norm."""

    def __init__(self, cfg: GraphConfig, rng: torch.Generator):
        d = cfg.d_h
        self.linear1_w = init_projection((d, 4 * d), rng)
        self.linear1_b = init_zeros((4 * d,))
        self.linear2_w = init_projection((4 * d, d), rng)
        self.linear2_b = init_zeros((d,))
        self.ln_g = init_ones((d,))
        self.ln_b = init_zeros((d,))
        self.dropout_rate = cfg.dropout_rate

    def parameters(self, prefix: str) -> dict[str, Parameter]:
        return {
            f"{prefix}.linear1_w": self.linear1_w,
            f"{prefix}.linear1_b": self.linear1_b,
            f"{prefix}.linear2_w": self.linear2_w,
            f"{prefix}.linear2_b": self.linear2_b,
            f"{prefix}.ln_g": self.ln_g,
            f"{prefix}.ln_b": self.ln_b,
        }


class GraphEncoder:
    """End-to-end label feature computation over one taxonomy."""

    def __init__(
        self,
        tax: LabelTaxonomy,
        vocab: Vocabulary,
        cfg: GraphConfig,
        rng: torch.Generator,
        token_embeddings: Parameter,
    ):
        self.tax = tax
        self.vocab = vocab
        self.cfg = cfg
        self.token_emb = token_embeddings
        self.distances = compute_distances(tax)
        self.features = GraphFeatureParams(tax, self.distances, cfg, rng)
        self.gpa = GPAParams(cfg, rng)
        self.enhancer = LabelEnhancerParams(cfg, rng)

        n = tax.num_nodes
        self.dist_index = torch.from_numpy(self.distances.dist.reshape(-1)).long()
        # (n*n, E) averaging matrix: row (i, j) holds 1/D on each path edge
        avg = np.zeros((n * n, tax.num_edges), dtype=np.float64)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                edges = path_edges(tax, i, j)
                for e in edges:
                    avg[i * n + j, e] = 1.0 / len(edges)
        self.path_average = torch.from_numpy(avg)
        # token ids of each label name under the shared vocabulary
        self.name_token_ids = [
            [vocab.id(t) for t in word_tokens(name)] for name in tax.label_names
        ]

    def parameters(self, prefix: str = "graph") -> dict[str, Parameter]:
        out = self.features.parameters(prefix)
        out.update(self.gpa.parameters(f"{prefix}.gpa"))
        out.update(self.enhancer.parameters(f"{prefix}.enhancer"))
        return out

    def embed_name(self, label: int) -> torch.Tensor:
        """Mean of the shared token-embedding rows for the label's name
        tokens; zero vector when no token survives."""
        ids = self.name_token_ids[label]
        if not ids:
            return torch.zeros(self.cfg.d_h, dtype=torch.float64)
        return self.token_emb.value[torch.tensor(ids, dtype=torch.long)].mean(dim=0)

    def init_node_features(self) -> torch.Tensor:
        """g: (K+1, d_h); virtual root has no name, so its row is the node
        table entry alone."""
        n = self.tax.num_nodes
        cfg = self.cfg
        name_rows = []
        zero = torch.zeros(cfg.d_h, dtype=torch.float64)
        for i in range(n):
            if cfg.use_name_embedding and i < self.tax.num_labels:
                name_rows.append(self.embed_name(i))
            else:
                name_rows.append(zero)
        name_part = torch.stack(name_rows)
        if cfg.use_node_embedding:
            return self.features.node_table.value + name_part
        return name_part

    def init_edge_features(self) -> torch.Tensor:
        """x: (K+1, K+1, d_p) = spatial[dist] + path-averaged edge weights."""
        n = self.tax.num_nodes
        spatial = self.features.spatial_table.value[self.dist_index].view(n, n, self.cfg.d_p)
        edge = (self.path_average @ self.features.edge_weights.value).view(n, n, self.cfg.d_p)
        return spatial + edge

    def gpa_forward(self, g: torch.Tensor, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """One propagation attention block: returns (g''', x_out)."""
        n = g.shape[0]
        cfg = self.cfg
        heads, dim_h = cfg.n_heads, cfg.d_h // cfg.n_heads
        q = (g @ self.gpa.W_Q.value).view(n, heads, dim_h).transpose(0, 1)
        k = (g @ self.gpa.W_K.value).view(n, heads, dim_h).transpose(0, 1)
        v = (g @ self.gpa.W_V.value).view(n, heads, dim_h).transpose(0, 1)
        x_proj = x @ self.gpa.W_1.value  # (n, n, heads)
        # node-to-node: per-head logits biased by projected edge features
        logits = q @ k.transpose(-1, -2) / np.sqrt(dim_h) + x_proj.permute(2, 0, 1)
        attn = softmax(logits, axis=-1)
        g1 = (attn @ v).transpose(0, 1).reshape(n, cfg.d_h)
        # node-to-edge: pre-softmax logits plus their softmax, per head
        a_stack = (logits + attn).permute(1, 2, 0)  # (n, n, heads)
        x_out = a_stack @ self.gpa.W_2.value
        # edge-to-node: per-channel softmax over the second node axis
        weights = softmax(x_out, axis=1)
        g2 = (x_out * weights).sum(dim=1) @ self.gpa.W_3.value
        g3 = (g1 + g2) @ self.gpa.W_4.value
        return g3, x_out

    def label_enhancer(
        self, g3: torch.Tensor, train: bool = False, rng: torch.Generator | None = None
    ) -> torch.Tensor:
        """Residual feed-forward refinement; drops the virtual-root row."""
        le = self.enhancer
        h = gelu(g3 @ le.linear1_w.value + le.linear1_b.value)
        h = self._dropout(h, train, rng)
        h = h @ le.linear2_w.value + le.linear2_b.value
        h = self._dropout(h, train, rng)
        out = layer_norm(g3 + h, le.ln_g, le.ln_b)
        return out[: self.tax.num_labels]

    def _dropout(self, h: torch.Tensor, train: bool, rng: torch.Generator | None) -> torch.Tensor:
        rate = self.enhancer.dropout_rate
        if not train or rate <= 0.0:
            return h
        keep = (torch.rand(h.shape, generator=rng, dtype=torch.float64) >= rate).to(torch.float64)
        return h * keep / (1.0 - rate)

    def encode_labels(self, train: bool = False, rng: torch.Generator | None = None) -> torch.Tensor:
        """L: (K, d_h), recomputed from live parameters every call."""
        g = self.init_node_features()
        x = self.init_edge_features()
        g3, _ = self.gpa_forward(g, x)
        if self.cfg.use_enhancer:
            return self.label_enhancer(g3, train=train, rng=rng)
        return g3[: self.tax.num_labels]
