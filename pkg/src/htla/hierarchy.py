"""Label taxonomy tree: parsing, validation, distances, and edge paths.

The taxonomy file is UTF-8 text, one record per line, tab separated:
the first field is a parent name, the remaining fields are its children.
"Root" is the reserved name of the virtual root that joins all top-level
labels into a single tree. Lines starting with '#' are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VIRTUAL_ROOT_NAME = "Root"


class TaxonomyError(ValueError):
    """Structural problem in a taxonomy: cycle, orphan, duplicate parent."""


@dataclass
class LabelTaxonomy:
    """A rooted label tree over K labels plus one virtual root node.

    Label ids are dense 0..K-1 in first-appearance order; the virtual root
    is node K. Edge ids are dense 0..K-1: edge i connects label i to its
    parent. Immutable after construction.
    """

    label_names: list[str]
    parent: dict[int, int]
    children: dict[int, list[int]]
    num_labels: int
    virtual_root: int
    edge_ids: dict[tuple[int, int], int] = field(default_factory=dict)
    name_to_id: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.edge_ids:
            for child, par in self.parent.items():
                key = (min(child, par), max(child, par))
                self.edge_ids[key] = child
        if not self.name_to_id:
            self.name_to_id = {n: i for i, n in enumerate(self.label_names)}

    @property
    def num_nodes(self) -> int:
        return self.num_labels + 1

    @property
    def num_edges(self) -> int:
        return self.num_labels

    def depth_of(self, node: int) -> int:
        """Number of edges between ``node`` and the virtual root."""
        d = 0
        while node != self.virtual_root:
            node = self.parent[node]
            d += 1
        return d

    def tree_depth(self) -> int:
        return max(self.depth_of(i) for i in range(self.num_labels))

    def ancestors(self, label: int) -> list[int]:
        """Labels strictly above ``label``, nearest first (root excluded)."""
        out = []
        node = self.parent[label]
        while node != self.virtual_root:
            out.append(node)
            node = self.parent[node]
        return out

    def leaves(self) -> list[int]:
        return [i for i in range(self.num_labels) if not self.children.get(i)]


@dataclass
class DistanceTable:
    """Pairwise hop distances over all K+1 nodes of a taxonomy."""

    dist: np.ndarray  # (K+1, K+1) int
    max_dist: int


def parse_taxonomy(text: str) -> LabelTaxonomy:
    """Parse taxonomy file contents into a validated LabelTaxonomy.

    Labels are numbered by first appearance (excluding "Root"); names are
    trimmed and case-sensitive.
    """
    name_to_id: dict[str, int] = {}
    names: list[str] = []
    parent_name: dict[str, str] = {}
    child_order: dict[str, list[str]] = {}

    def intern(name: str) -> int:
        if name not in name_to_id:
            name_to_id[name] = len(names)
            names.append(name)
        return name_to_id[name]

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split("\t") if f.strip()]
        if len(fields) < 2:
            raise TaxonomyError(f"line {lineno}: expected parent and at least one child")
        par = fields[0]
        if par != VIRTUAL_ROOT_NAME:
            intern(par)
        for child in fields[1:]:
            if child == VIRTUAL_ROOT_NAME:
                raise TaxonomyError(f"line {lineno}: {VIRTUAL_ROOT_NAME!r} cannot be a child")
            intern(child)
            prev = parent_name.get(child)
            if prev is not None and prev != par:
                raise TaxonomyError(
                    f"line {lineno}: label {child!r} assigned two parents ({prev!r}, {par!r})"
                )
            if prev is None:
                parent_name[child] = par
                child_order.setdefault(par, []).append(child)

    if not names:
        raise TaxonomyError("empty taxonomy: no labels found")

    num_labels = len(names)
    virtual_root = num_labels
    parent: dict[int, int] = {}
    for name, i in name_to_id.items():
        par = parent_name.get(name)
        if par is None:
            raise TaxonomyError(f"label {name!r} is never attached to the tree")
        parent[i] = virtual_root if par == VIRTUAL_ROOT_NAME else name_to_id[par]

    # cycle check: every label must reach the virtual root
    for start in range(num_labels):
        seen = set()
        node = start
        while node != virtual_root:
            if node in seen:
                raise TaxonomyError(f"cycle detected through label {names[node]!r}")
            seen.add(node)
            node = parent[node]

    children: dict[int, list[int]] = {i: [] for i in range(num_labels + 1)}
    for par_name, kids in child_order.items():
        par_id = virtual_root if par_name == VIRTUAL_ROOT_NAME else name_to_id[par_name]
        children[par_id] = [name_to_id[k] for k in kids]

    return LabelTaxonomy(
        label_names=names,
        parent=parent,
        children=children,
        num_labels=num_labels,
        virtual_root=virtual_root,
    )


def load_taxonomy(path) -> LabelTaxonomy:
    with open(path, encoding="utf-8") as f:
        return parse_taxonomy(f.read())


def _lca(tax: LabelTaxonomy, i: int, j: int) -> int:
    anc_i = set()
    node = i
    while True:
        anc_i.add(node)
        if node == tax.virtual_root:
            break
        node = tax.parent[node]
    node = j
    while node not in anc_i:
        node = tax.parent[node]
    return node


def compute_distances(tax: LabelTaxonomy) -> DistanceTable:
    """Hop distance between every node pair via depths and lowest common
    ancestors (tests verify against an independent BFS oracle)."""
    n = tax.num_nodes
    depth = np.array([tax.depth_of(v) for v in range(n)], dtype=np.int64)
    dist = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            a = _lca(tax, i, j)
            d = depth[i] + depth[j] - 2 * depth[a]
            dist[i, j] = dist[j, i] = d
    return DistanceTable(dist=dist, max_dist=int(dist.max()))


def path_edges(tax: LabelTaxonomy, i: int, j: int) -> list[int]:
    """Edge ids along the unique i -> j path, in traversal order."""
    if i == j:
        return []
    a = _lca(tax, i, j)
    up = []
    node = i
    while node != a:
        up.append(tax.edge_ids[(min(node, tax.parent[node]), max(node, tax.parent[node]))])
        node = tax.parent[node]
    down = []
    node = j
    while node != a:
        down.append(tax.edge_ids[(min(node, tax.parent[node]), max(node, tax.parent[node]))])
        node = tax.parent[node]
    return up + down[::-1]


def label_level(tax: LabelTaxonomy, i: int) -> int:
    """1-based hierarchy level: distance from the virtual root."""
    return tax.depth_of(i)
