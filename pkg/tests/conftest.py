"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np
import torch

from relprompt.backbone import DecoderConfig
from relprompt.relgraph import Relation, RelationalGraph


def random_graph(rng: np.random.Generator, n: int, m: int, feature_dim: int = 4,
                 avg_degree: float = 3.0, directed: bool = False,
                 fraud_rate: float = 0.3, unlabeled_rate: float = 0.0) -> RelationalGraph:
    """Random multi-relational graph with both classes present."""
    features = rng.standard_normal((n, feature_dim))
    labels = (rng.random(n) < fraud_rate).astype(np.int64)
    labels[0] = 1
    labels[1] = 0
    if unlabeled_rate > 0:
        hide = rng.random(n) < unlabeled_rate
        hide[:2] = False
        labels[hide] = -1
    relations, edges = [], []
    for j in range(m):
        count = rng.poisson(avg_degree * n / 2)
        e = rng.integers(0, n, size=(count, 2))
        e = e[e[:, 0] != e[:, 1]]
        relations.append(Relation(id=j, name=f"rel{j}", description=f"relation {j} links",
                                  directed=directed))
        edges.append(e)
    return RelationalGraph(features, labels, relations, edges)


def tiny_decoder(vocab_size: int = 12, n_layers: int = 1, n_heads: int = 1,
                 d_emb: int = 4, d_ff: int = 8, max_len: int = 32,
                 lora_rank: int = 2, lora_alpha: float = 4.0, seed: int = 0):
    from relprompt.backbone import CausalLM

    cfg = DecoderConfig(n_layers=n_layers, n_heads=n_heads, d_emb=d_emb, d_ff=d_ff,
                        max_len=max_len, lora_rank=lora_rank, lora_alpha=lora_alpha)
    gen = torch.Generator().manual_seed(seed)
    return CausalLM(cfg, vocab_size, gen)


def micro_train_config(**overrides):
    """Small decoder and encoder suitable for fast harness tests."""
    from relprompt.harness import TrainConfig

    base = dict(
        epochs=2,
        node_batch_size=8,
        seed=0,
        decoder=DecoderConfig(n_layers=2, n_heads=2, d_emb=16, d_ff=32, max_len=256,
                              lora_rank=2, lora_alpha=4.0),
        encoder_hidden=(16, 16),
    )
    base.update(overrides)
    return TrainConfig(**base)
