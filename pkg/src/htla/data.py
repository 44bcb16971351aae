"""Corpus loading and seeded synthetic dataset generation.

Datasets are JSON Lines: one object per line with keys "text" and
"labels" (label names). The synthetic generator builds a complete tree
whose labels own disjoint keyword pools, so separability is controlled by
the noise rate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .hierarchy import LabelTaxonomy, VIRTUAL_ROOT_NAME


@dataclass
class Sample:
    text: str
    labels: list[str]
    label_ids: list[int] = field(default_factory=list)


@dataclass
class SyntheticSpec:
    depth: int = 3
    branching: int = 3
    keywords_per_label: int = 4
    noise_rate: float = 0.2
    samples_per_leaf: int = 40
    multipath_prob: float = 0.3
    tokens_per_sample: int = 32
    noise_pool_size: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.branching < 2:
            raise ValueError("branching must be >= 2")
        for name in ("noise_rate", "multipath_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")


def load_jsonl(path, tax: LabelTaxonomy) -> list[Sample]:
    """Load and validate samples, resolving label names against ``tax``."""
    samples = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}: line {lineno}: malformed JSON ({e.msg})") from e
            if not isinstance(obj, dict) or "text" not in obj or "labels" not in obj:
                raise ValueError(f"{path}: line {lineno}: expected keys 'text' and 'labels'")
            labels = obj["labels"]
            if not labels:
                raise ValueError(f"{path}: line {lineno}: empty label list")
            ids = []
            for name in labels:
                if name not in tax.name_to_id:
                    raise ValueError(f"{path}: line {lineno}: unknown label {name!r}")
                ids.append(tax.name_to_id[name])
            samples.append(Sample(text=obj["text"], labels=list(labels), label_ids=ids))
    return samples


def save_jsonl(path, samples: list[Sample]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in samples:
            f.write(json.dumps({"text": s.text, "labels": s.labels}, sort_keys=True) + "\n")


def label_matrix(samples: list[Sample], num_labels: int) -> np.ndarray:
    """(M, K) 0/1 gold label matrix."""
    Y = np.zeros((len(samples), num_labels), dtype=np.float64)
    for i, s in enumerate(samples):
        Y[i, s.label_ids] = 1.0
    return Y


def label_frequency(samples: list[Sample], tax: LabelTaxonomy) -> np.ndarray:
    """Per-label document counts over ``samples``."""
    counts = np.zeros(tax.num_labels, dtype=np.int64)
    for s in samples:
        for lid in set(s.label_ids):
            counts[lid] += 1
    return counts


def _build_tree_names(spec: SyntheticSpec) -> tuple[list[str], dict[str, str], list[str]]:
    """Complete tree of label names: returns (names, parent map, leaves)."""
    names: list[str] = []
    parent: dict[str, str] = {}
    frontier = []
    for i in range(spec.branching):
        name = f"cat{i}"
        names.append(name)
        parent[name] = VIRTUAL_ROOT_NAME
        frontier.append(name)
    for _level in range(1, spec.depth):
        nxt = []
        for par in frontier:
            for j in range(spec.branching):
                name = f"{par}_{j}"
                names.append(name)
                parent[name] = par
                nxt.append(name)
        frontier = nxt
    return names, parent, frontier


def taxonomy_text(spec: SyntheticSpec) -> str:
    names, parent, _ = _build_tree_names(spec)
    children: dict[str, list[str]] = {}
    for name in names:
        children.setdefault(parent[name], []).append(name)
    lines = [VIRTUAL_ROOT_NAME + "\t" + "\t".join(children[VIRTUAL_ROOT_NAME])]
    for name in names:
        if name in children:
            lines.append(name + "\t" + "\t".join(children[name]))
    return "\n".join(lines) + "\n"


def generate_synthetic(spec: SyntheticSpec) -> tuple[str, list[Sample], list[Sample], list[Sample]]:
    """Seeded synthetic corpus: (taxonomy text, train, val, test).

    Every sample's labels are ancestor-closed; with multipath probability a
    second leaf (and its ancestors) is added. Splits are 70/15/15
    stratified by primary leaf.
    """
    rng = np.random.default_rng(spec.seed)
    names, parent, leaves = _build_tree_names(spec)
    keywords = {
        name: [f"kw{idx}w{k}" for k in range(spec.keywords_per_label)]
        for idx, name in enumerate(names)
    }
    noise_pool = [f"noise{k}" for k in range(spec.noise_pool_size)]

    def closure(leaf: str) -> list[str]:
        chain = [leaf]
        while parent[chain[-1]] != VIRTUAL_ROOT_NAME:
            chain.append(parent[chain[-1]])
        return chain[::-1]

    per_leaf: dict[str, list[Sample]] = {leaf: [] for leaf in leaves}
    for leaf in leaves:
        for _ in range(spec.samples_per_leaf):
            labels = closure(leaf)
            if spec.multipath_prob > 0 and rng.random() < spec.multipath_prob:
                other = leaves[int(rng.integers(len(leaves)))]
                if other != leaf:
                    labels = labels + [l for l in closure(other) if l not in labels]
            pool = [kw for name in labels for kw in keywords[name]]
            tokens = []
            for _ in range(spec.tokens_per_sample):
                if rng.random() < spec.noise_rate:
                    tokens.append(noise_pool[int(rng.integers(len(noise_pool)))])
                else:
                    tokens.append(pool[int(rng.integers(len(pool)))])
            per_leaf[leaf].append(Sample(text=" ".join(tokens), labels=labels))

    train: list[Sample] = []
    val: list[Sample] = []
    test: list[Sample] = []
    for leaf in leaves:
        group = per_leaf[leaf]
        order = rng.permutation(len(group))
        n = len(group)
        n_val = int(np.floor(0.15 * n))
        n_test = int(np.floor(0.15 * n))
        if n >= 3:
            n_val = max(n_val, 1)
            n_test = max(n_test, 1)
        val.extend(group[i] for i in order[:n_val])
        test.extend(group[i] for i in order[n_val : n_val + n_test])
        train.extend(group[i] for i in order[n_val + n_test :])
    return taxonomy_text(spec), train, val, test


def resolve_label_ids(samples: list[Sample], tax: LabelTaxonomy) -> list[Sample]:
    for s in samples:
        s.label_ids = [tax.name_to_id[n] for n in s.labels]
    return samples


def spec_manifest(spec: SyntheticSpec) -> dict:
    return {"spec": asdict(spec), "seed": spec.seed}
