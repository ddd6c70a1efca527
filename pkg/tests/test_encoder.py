"""Mean aggregation, layer updates, parallel encoding, gradient correctness."""

import math

import numpy as np
import pytest
import torch

from conftest import random_graph
from relprompt.encoder import (
    EncoderConfig,
    ParallelSageEncoder,
    encode_all,
    mean_aggregate,
    sage_layer,
)
from relprompt.relgraph import Relation, RelationalGraph, partition_relations


def _view_from_edges(n, edges, directed=False):
    graph = RelationalGraph(np.zeros((n, 1)), np.zeros(n, dtype=np.int64),
                            [Relation(0, "r", "d", directed=directed)],
                            [np.asarray(edges).reshape(-1, 2)])
    return partition_relations(graph)[0]


def dense_mean_oracle(view, states):
    """D^-1 A X with zero rows for isolated nodes."""
    n = view.node_count
    A = np.zeros((n, n))
    for v in range(n):
        for u in view.neighbors(v):
            A[v, u] = 1.0
    deg = A.sum(axis=1)
    out = A @ states
    nz = deg > 0
    out[nz] /= deg[nz, None]
    out[~nz] = 0.0
    return out


def test_mean_aggregate_two_neighbors():
    view = _view_from_edges(3, [[0, 1], [0, 2]])
    states = torch.tensor([[0.0, 0.0], [1.0, 3.0], [3.0, 5.0]], dtype=torch.float64)
    out = mean_aggregate(view, states)
    assert out[0].tolist() == [2.0, 4.0]


def test_mean_aggregate_isolated_node_zero():
    view = _view_from_edges(3, [[1, 2]])
    states = torch.ones(3, 2, dtype=torch.float64) * 7
    out = mean_aggregate(view, states)
    assert out[0].tolist() == [0.0, 0.0]


def test_mean_aggregate_matches_dense_oracle():
    rng = np.random.default_rng(0)
    for _ in range(25):
        graph = random_graph(rng, 6, 1, feature_dim=3)
        view = partition_relations(graph)[0]
        states = torch.from_numpy(rng.standard_normal((6, 3)))
        out = mean_aggregate(view, states).numpy()
        expected = dense_mean_oracle(view, states.numpy())
        assert np.allclose(out, expected, atol=1e-12, rtol=0.0)


def test_mean_aggregate_permutation_invariant_exact():
    rng = np.random.default_rng(1)
    graph = random_graph(rng, 15, 1, feature_dim=4)
    shuffled = RelationalGraph(
        graph.features, graph.labels, graph.relations,
        [graph.edges[0][rng.permutation(len(graph.edges[0]))]],
    )
    states = torch.from_numpy(rng.standard_normal((15, 4)))
    a = mean_aggregate(partition_relations(graph)[0], states)
    b = mean_aggregate(partition_relations(shuffled)[0], states)
    assert torch.equal(a, b)


def test_mean_aggregate_shape_check():
    view = _view_from_edges(3, [[0, 1]])
    with pytest.raises(ValueError, match="rows"):
        mean_aggregate(view, torch.zeros(5, 2, dtype=torch.float64))


def test_sage_layer_zero_weight_gives_zero():
    view = _view_from_edges(4, [[0, 1], [2, 3]])
    states = torch.randn(4, 3, dtype=torch.float64)
    out = sage_layer(view, states, torch.zeros(5, 6, dtype=torch.float64))
    assert torch.equal(out, torch.zeros(4, 5, dtype=torch.float64))


def test_sage_layer_symmetry_cancellation():
    # self -1 and single neighbor +1 under W = [1, 1] cancel to ELU(0) = 0
    view = _view_from_edges(2, [[0, 1]])
    states = torch.tensor([[-1.0], [1.0]], dtype=torch.float64)
    out = sage_layer(view, states, torch.tensor([[1.0, 1.0]], dtype=torch.float64))
    assert out[0].item() == 0.0


def test_sage_layer_matches_scalar_oracle():
    rng = np.random.default_rng(2)
    graph = random_graph(rng, 4, 1, feature_dim=2)
    view = partition_relations(graph)[0]
    states = rng.standard_normal((4, 2))
    W = rng.standard_normal((3, 4))
    out = sage_layer(view, torch.from_numpy(states), torch.from_numpy(W)).numpy()

    def elu(z):
        return z if z > 0 else math.exp(z) - 1.0

    for v in range(4):
        neigh = view.neighbors(v)
        mean = states[neigh].mean(axis=0) if neigh.size else np.zeros(2)
        cat = np.concatenate([states[v], mean])
        for o in range(3):
            expected = elu(float(np.dot(W[o], cat)))
            assert abs(out[v, o] - expected) < 1e-12


def test_sage_layer_rejects_bad_shapes():
    view = _view_from_edges(2, [[0, 1]])
    with pytest.raises(ValueError, match="incompatible"):
        sage_layer(view, torch.zeros(2, 3, dtype=torch.float64),
                   torch.zeros(4, 5, dtype=torch.float64))


def _encoder_for(graph, hidden, seed=0):
    cfg = EncoderConfig(depth=len(hidden), hidden_dims=tuple(hidden))
    gen = torch.Generator().manual_seed(seed)
    return ParallelSageEncoder(graph.feature_dim, graph.relation_count, cfg, gen)


def test_encode_all_composes_two_layers():
    rng = np.random.default_rng(3)
    graph = random_graph(rng, 8, 2, feature_dim=3)
    views = partition_relations(graph)
    enc = _encoder_for(graph, (5, 4))
    out = encode_all(graph, views, enc)
    x = torch.from_numpy(graph.features)
    for j, branch in enumerate(enc.branches):
        manual = sage_layer(views[j], sage_layer(views[j], x, branch.weights[0]),
                            branch.weights[1])
        assert torch.equal(out[:, j, :], manual)


def test_encode_all_single_relation_slice():
    rng = np.random.default_rng(4)
    graph = random_graph(rng, 8, 1, feature_dim=3)
    views = partition_relations(graph)
    enc = _encoder_for(graph, (5, 4))
    out = encode_all(graph, views, enc)
    standalone = enc.branches[0](views[0], torch.from_numpy(graph.features))
    assert torch.equal(out[:, 0, :], standalone)


def test_encode_all_neighbor_permutation_invariant():
    rng = np.random.default_rng(5)
    graph = random_graph(rng, 12, 2, feature_dim=3)
    shuffled = RelationalGraph(
        graph.features, graph.labels, graph.relations,
        [e[rng.permutation(len(e))] for e in graph.edges],
    )
    enc = _encoder_for(graph, (4, 4))
    a = encode_all(graph, partition_relations(graph), enc)
    b = encode_all(shuffled, partition_relations(shuffled), enc)
    assert torch.equal(a, b)


def test_relation_isolation():
    rng = np.random.default_rng(6)
    graph = random_graph(rng, 10, 3, feature_dim=3)
    views = partition_relations(graph)
    enc = _encoder_for(graph, (4, 4))
    base = encode_all(graph, views, enc).detach()
    with torch.no_grad():
        enc.branches[1].weights[0] += 0.5
    bumped = encode_all(graph, views, enc).detach()
    assert torch.equal(base[:, 0, :], bumped[:, 0, :])
    assert torch.equal(base[:, 2, :], bumped[:, 2, :])
    assert not torch.equal(base[:, 1, :], bumped[:, 1, :])


def test_encoder_weights_not_shared_across_relations():
    rng = np.random.default_rng(7)
    graph = random_graph(rng, 6, 2, feature_dim=3)
    enc = _encoder_for(graph, (4, 4))
    assert not torch.equal(enc.branches[0].weights[0], enc.branches[1].weights[0])


def test_encoder_gradients_match_finite_differences():
    rng = np.random.default_rng(8)
    graph = random_graph(rng, 6, 2, feature_dim=3)
    views = partition_relations(graph)
    enc = _encoder_for(graph, (4, 3))

    def total():
        return encode_all(graph, views, enc).sum()

    loss = total()
    loss.backward()
    h = 1e-5
    checked = 0
    for branch in enc.branches:
        for w in branch.weights:
            flat = w.detach().reshape(-1)
            grads = w.grad.reshape(-1)
            for idx in rng.choice(flat.numel(), size=5, replace=False):
                orig = flat[idx].item()
                with torch.no_grad():
                    flat[idx] = orig + h
                up = total().item()
                with torch.no_grad():
                    flat[idx] = orig - h
                down = total().item()
                with torch.no_grad():
                    flat[idx] = orig
                fd = (up - down) / (2 * h)
                analytic = grads[idx].item()
                rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-8)
                assert rel <= 1e-3, f"rel err {rel} at coord {idx}"
                checked += 1
    assert checked == 20


def test_encode_all_rejects_nonfinite():
    rng = np.random.default_rng(9)
    graph = random_graph(rng, 5, 1, feature_dim=2)
    graph.features[0, 0] = np.nan
    views = partition_relations(graph)
    enc = _encoder_for(graph, (3,))
    with pytest.raises(FloatingPointError):
        encode_all(graph, views, enc)


def test_encoder_config_validation():
    with pytest.raises(ValueError, match="hidden_dims"):
        EncoderConfig(depth=2, hidden_dims=(4,))
    with pytest.raises(ValueError, match="depth"):
        EncoderConfig(depth=0, hidden_dims=())


def test_encoder_rejects_view_count_mismatch():
    rng = np.random.default_rng(10)
    graph = random_graph(rng, 6, 2, feature_dim=3)
    views = partition_relations(graph)
    enc = _encoder_for(graph, (4,))
    with pytest.raises(ValueError, match="views"):
        enc(torch.from_numpy(graph.features), views[:1])
