"""Relation partitioning, self-loops, and stratified splits."""

import numpy as np
import pytest

from conftest import random_graph
from relprompt.relgraph import (
    LABEL_UNLABELED,
    Relation,
    RelationalGraph,
    add_self_loops,
    partition_relations,
    stratified_split,
)


def _triple_set(views):
    triples = set()
    for v in views:
        for src, dst in v.edges:
            triples.add((int(src), v.relation_id, int(dst)))
    return triples


def _unique_pairs(rng, n, count):
    """Sample exactly `count` distinct undirected pairs (i < j)."""
    # encode pairs as i * n + j so uniqueness is a 1-D problem
    codes = np.zeros(0, dtype=np.int64)
    while codes.size < count:
        e = rng.integers(0, n, size=(int(count * 1.2) + 16, 2))
        e = e[e[:, 0] != e[:, 1]]
        e = np.sort(e, axis=1)
        codes = np.unique(np.concatenate([codes, e[:, 0] * n + e[:, 1]]))
    codes = codes[:count]
    return np.stack([codes // n, codes % n], axis=1)


def test_partition_ecommerce_shaped_edge_counts():
    # three relations sized like a large e-commerce review graph
    counts = (175_608, 3_566_479, 1_036_737)
    n = 11_944
    rng = np.random.default_rng(0)
    relations = [Relation(i, f"r{i}", f"desc {i}") for i in range(3)]
    edges = [_unique_pairs(rng, n, c) for c in counts]
    graph = RelationalGraph(np.zeros((n, 2)), np.zeros(n, dtype=np.int64), relations, edges)
    views = partition_relations(graph)
    assert [len(v.edges) for v in views] == list(counts)
    total = sum(len(e) for e in graph.edges)
    assert sum(len(v.edges) for v in views) == total


def test_partition_single_relation_identity():
    rng = np.random.default_rng(1)
    graph = random_graph(rng, 12, 1)
    views = partition_relations(graph)
    assert len(views) == 1
    assert np.array_equal(views[0].edges, graph.edges[0])


def test_partition_union_and_disjointness_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(20):
        graph = random_graph(rng, 10, 3)
        views = partition_relations(graph)
        assert _triple_set(views) == _triple_set(
            [type(v)(r.id, graph.node_count, v.indptr, v.indices, False, graph.edges[r.id])
             for r, v in zip(graph.relations, views)]
        )
        expected = {
            (int(s), rid, int(d))
            for rid, e in enumerate(graph.edges)
            for s, d in e
        }
        assert _triple_set(views) == expected
        for i in range(len(views)):
            for j in range(i + 1, len(views)):
                a = {tuple(x) for x in views[i].edges}
                b = {tuple(x) for x in views[j].edges}
                assert not ({(x, views[i].relation_id, y) for x, y in a}
                            & {(x, views[j].relation_id, y) for x, y in b})


def test_partition_roundtrip_exact():
    rng = np.random.default_rng(3)
    graph = random_graph(rng, 25, 4)
    views = partition_relations(graph)
    for rid, view in enumerate(views):
        assert np.array_equal(view.edges, graph.edges[rid])


def test_directed_views_keep_in_neighbors():
    relations = [Relation(0, "t", "temporal", directed=True)]
    edges = [np.array([[0, 1], [0, 2], [1, 2]])]
    graph = RelationalGraph(np.zeros((3, 1)), np.zeros(3, dtype=np.int64), relations, edges)
    (view,) = partition_relations(graph)
    assert view.neighbors(0).tolist() == []
    assert view.neighbors(1).tolist() == [0]
    assert view.neighbors(2).tolist() == [0, 1]


def test_undirected_views_symmetric():
    relations = [Relation(0, "u", "links")]
    edges = [np.array([[2, 0], [3, 0]])]
    graph = RelationalGraph(np.zeros((4, 1)), np.zeros(4, dtype=np.int64), relations, edges)
    (view,) = partition_relations(graph)
    assert view.neighbors(0).tolist() == [2, 3]
    assert view.neighbors(2).tolist() == [0]
    assert view.neighbors(3).tolist() == [0]


def test_add_self_loops_basic():
    relations = [Relation(0, "u", "links")]
    edges = [np.array([[2, 0], [3, 0]])]
    graph = RelationalGraph(np.zeros((4, 1)), np.zeros(4, dtype=np.int64), relations, edges)
    (view,) = partition_relations(graph)
    looped = add_self_loops(view)
    assert looped.neighbors(0).tolist() == [0, 2, 3]
    assert looped.neighbors(1).tolist() == [1]  # isolated node gains only itself
    assert looped.self_loops


def test_add_self_loops_counting_oracle():
    rng = np.random.default_rng(4)
    graph = random_graph(rng, 30, 2, directed=True)
    for view in partition_relations(graph):
        looped = add_self_loops(view)
        before = view.degrees()
        after = looped.degrees()
        assert np.array_equal(after, before + 1)
        for v in range(view.node_count):
            old = set(view.neighbors(v).tolist())
            new = set(looped.neighbors(v).tolist())
            assert new == old | {v}


def test_add_self_loops_rejects_double_injection():
    rng = np.random.default_rng(5)
    graph = random_graph(rng, 10, 1, directed=True)
    (view,) = partition_relations(graph)
    looped = add_self_loops(view)
    with pytest.raises(ValueError, match="refusing"):
        add_self_loops(looped)


def test_edges_keep_original_arrays_after_self_loops():
    rng = np.random.default_rng(6)
    graph = random_graph(rng, 10, 1, directed=True)
    (view,) = partition_relations(graph)
    looped = add_self_loops(view)
    assert np.array_equal(looped.edges, view.edges)


def test_stratified_split_ten_nodes():
    labels = np.array([1, 0] * 5)
    graph = RelationalGraph(np.zeros((10, 1)), labels,
                            [Relation(0, "r", "d")], [np.zeros((0, 2), dtype=np.int64)])
    masks = stratified_split(graph, seed=0)
    assert (len(masks.train), len(masks.val), len(masks.test)) == (4, 2, 4)
    for part in (masks.train, masks.val, masks.test):
        fraud = int((labels[part] == 1).sum())
        assert fraud in (1, 2, 3)
    # exact per-class quotas for 5/5: 2/1/2
    assert int((labels[masks.train] == 1).sum()) == 2
    assert int((labels[masks.val] == 1).sum()) == 1
    assert int((labels[masks.test] == 1).sum()) == 2


def test_stratified_split_deterministic():
    rng = np.random.default_rng(7)
    graph = random_graph(rng, 100, 1)
    a = stratified_split(graph, seed=11)
    b = stratified_split(graph, seed=11)
    assert np.array_equal(a.train, b.train)
    assert np.array_equal(a.val, b.val)
    assert np.array_equal(a.test, b.test)
    c = stratified_split(graph, seed=12)
    assert not (np.array_equal(a.train, c.train) and np.array_equal(a.val, c.val))


def test_stratified_split_proportions_counting_oracle():
    rng = np.random.default_rng(8)
    labels = np.zeros(1000, dtype=np.int64)
    labels[rng.choice(1000, 100, replace=False)] = 1
    graph = RelationalGraph(np.zeros((1000, 1)), labels,
                            [Relation(0, "r", "d")], [np.zeros((0, 2), dtype=np.int64)])
    masks = stratified_split(graph, seed=3)
    for part, ratio in ((masks.train, 0.4), (masks.val, 0.2), (masks.test, 0.4)):
        fraud = int((labels[part] == 1).sum())
        assert abs(fraud - ratio * 100) <= 1
        normal = int((labels[part] == 0).sum())
        assert abs(normal - ratio * 900) <= 1
    union = np.sort(np.concatenate([masks.train, masks.val, masks.test]))
    assert np.array_equal(union, np.arange(1000))


def test_stratified_split_excludes_unlabeled():
    rng = np.random.default_rng(9)
    graph = random_graph(rng, 200, 1, unlabeled_rate=0.3)
    masks = stratified_split(graph, seed=0)
    union = np.concatenate([masks.train, masks.val, masks.test])
    assert not np.isin(union, np.flatnonzero(graph.labels == LABEL_UNLABELED)).any()
    assert np.array_equal(np.sort(union), graph.labeled_nodes())
    # pairwise disjoint
    assert len(union) == len(set(union.tolist()))


def test_stratified_split_rejects_tiny_class():
    labels = np.array([0] * 8 + [1] * 2)
    graph = RelationalGraph(np.zeros((10, 1)), labels,
                            [Relation(0, "r", "d")], [np.zeros((0, 2), dtype=np.int64)])
    with pytest.raises(ValueError, match="class 1"):
        stratified_split(graph, seed=0)


def test_graph_rejects_out_of_range_edge():
    with pytest.raises(ValueError, match="unknown node id"):
        RelationalGraph(np.zeros((3, 1)), np.zeros(3, dtype=np.int64),
                        [Relation(0, "r", "d")], [np.array([[0, 5]])])


def test_graph_rejects_sparse_relation_ids():
    with pytest.raises(ValueError, match="dense"):
        RelationalGraph(np.zeros((3, 1)), np.zeros(3, dtype=np.int64),
                        [Relation(1, "r", "d")], [np.zeros((0, 2), dtype=np.int64)])
