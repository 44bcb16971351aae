import numpy as np
import pytest

from htla.hierarchy import (
    TaxonomyError,
    compute_distances,
    label_level,
    parse_taxonomy,
    path_edges,
)

from oracles import bfs_distances, random_tree, taxonomy_adjacency


class TestParse:
    def test_basic(self):
        tax = parse_taxonomy("Root\tA\tB\nA\tA1\tA2")
        assert tax.num_labels == 4
        assert tax.label_names == ["A", "B", "A1", "A2"]
        assert tax.parent[tax.name_to_id["A1"]] == tax.name_to_id["A"]
        assert tax.parent[tax.name_to_id["A"]] == tax.virtual_root

    def test_self_parent_cycle(self):
        with pytest.raises(TaxonomyError):
            parse_taxonomy("Root\tA\nA\tA")

    def test_two_node_cycle(self):
        with pytest.raises(TaxonomyError):
            parse_taxonomy("A\tB\nB\tA")

    def test_duplicate_parent(self):
        with pytest.raises(TaxonomyError, match="two parents"):
            parse_taxonomy("Root\tA\tB\nA\tC\nB\tC")

    def test_orphan(self):
        with pytest.raises(TaxonomyError, match="never attached"):
            parse_taxonomy("Root\tA\nB\tB1")

    def test_empty(self):
        with pytest.raises(TaxonomyError, match="empty"):
            parse_taxonomy("# just a comment\n")

    def test_comments_and_blank_lines(self):
        tax = parse_taxonomy("# header\n\nRoot\tA\n")
        assert tax.num_labels == 1

    def test_whitespace_trimmed(self):
        tax = parse_taxonomy("Root\t A \nA\tB")
        assert "A" in tax.name_to_id

    def test_wos_scale_two_levels(self):
        # 141 labels over 2 levels, WOS-shaped
        tops = [f"domain{i}" for i in range(7)]
        lines = ["Root\t" + "\t".join(tops)]
        made = 7
        i = 0
        while made < 141:
            kids = []
            for _ in range(min(20, 141 - made)):
                kids.append(f"area{made}")
                made += 1
            lines.append(tops[i] + "\t" + "\t".join(kids))
            i += 1
        tax = parse_taxonomy("\n".join(lines))
        assert tax.num_labels == 141
        assert tax.tree_depth() == 2
        assert all(label_level(tax, k) in (1, 2) for k in range(tax.num_labels))


class TestDistances:
    def test_parent_child(self, small_tax):
        dt = compute_distances(small_tax)
        a, a1 = small_tax.name_to_id["A"], small_tax.name_to_id["A1"]
        assert dt.dist[a, a1] == 1

    def test_siblings(self, small_tax):
        dt = compute_distances(small_tax)
        a1, a2 = small_tax.name_to_id["A1"], small_tax.name_to_id["A2"]
        assert dt.dist[a1, a2] == 2

    def test_cross_subtree_leaves(self, small_tax):
        dt = compute_distances(small_tax)
        a1, b1 = small_tax.name_to_id["A1"], small_tax.name_to_id["B1"]
        adj = taxonomy_adjacency(small_tax)
        oracle = bfs_distances(adj, small_tax.num_nodes)
        assert dt.dist[a1, b1] == 4
        assert oracle[a1, b1] == 4

    def test_random_trees_match_bfs(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            k = int(rng.integers(2, 61))
            tax = parse_taxonomy(random_tree(rng, k))
            dt = compute_distances(tax)
            oracle = bfs_distances(taxonomy_adjacency(tax), tax.num_nodes)
            np.testing.assert_array_equal(dt.dist, oracle)
            assert dt.max_dist <= 2 * tax.tree_depth()

    def test_table_invariants(self, small_tax):
        dt = compute_distances(small_tax)
        assert (np.diag(dt.dist) == 0).all()
        np.testing.assert_array_equal(dt.dist, dt.dist.T)


class TestPathEdges:
    def test_identity(self, small_tax):
        assert path_edges(small_tax, 0, 0) == []

    def test_child_to_parent(self, small_tax):
        a, a1 = small_tax.name_to_id["A"], small_tax.name_to_id["A1"]
        assert path_edges(small_tax, a1, a) == [a1]

    def test_siblings(self, small_tax):
        a1, a2 = small_tax.name_to_id["A1"], small_tax.name_to_id["A2"]
        assert path_edges(small_tax, a1, a2) == [a1, a2]

    def test_length_and_reversal(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            tax = parse_taxonomy(random_tree(rng, int(rng.integers(2, 30))))
            dt = compute_distances(tax)
            for i in range(tax.num_nodes):
                for j in range(tax.num_nodes):
                    edges = path_edges(tax, i, j)
                    assert len(edges) == dt.dist[i, j]
                    assert edges == path_edges(tax, j, i)[::-1]

    def test_edge_count_and_coverage(self, small_tax):
        assert small_tax.num_edges == small_tax.num_labels
        # every edge id appears on the root-to-leaf path of its subtree leaf
        covered = set()
        for leaf in small_tax.leaves():
            covered.update(path_edges(small_tax, small_tax.virtual_root, leaf))
        assert covered == set(range(small_tax.num_labels))


class TestLevels:
    def test_top_level(self, small_tax):
        assert label_level(small_tax, small_tax.name_to_id["A"]) == 1

    def test_grandchild(self, chain_tax):
        assert label_level(chain_tax, chain_tax.name_to_id["A1a"]) == 3
