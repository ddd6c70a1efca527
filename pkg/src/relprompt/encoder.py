"""Parallel per-relation GraphSAGE encoders with full-batch mean aggregation.

Each relation gets its own stack of K layers with unshared weights. A layer
updates node v as ELU(W @ [state_v || mean of neighbor states]); the final
layer is sized to the LM embedding width, so its weight matrix doubles as the
projection into the prompt space. All math runs in float64 for reproducible
numerics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .relgraph import RelationalGraph, SubgraphView


@dataclass(frozen=True)
class EncoderConfig:
    depth: int
    hidden_dims: tuple[int, ...]

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if len(self.hidden_dims) != self.depth:
            raise ValueError(
                f"hidden_dims must list {self.depth} widths, got {self.hidden_dims}"
            )

    @property
    def embed_dim(self) -> int:
        return self.hidden_dims[-1]


def _aggregation_arrays(view: SubgraphView) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Cached (dst, src, degree) tensors driving the scatter-mean."""
    if view._agg_cache is None:
        counts = view.degrees()
        dst = np.repeat(np.arange(view.node_count, dtype=np.int64), counts)
        view._agg_cache = {
            "dst": torch.from_numpy(dst),
            "src": torch.from_numpy(np.ascontiguousarray(view.indices)),
            "deg": torch.from_numpy(counts.astype(np.float64)),
        }
    c = view._agg_cache
    return c["dst"], c["src"], c["deg"]


def mean_aggregate(view: SubgraphView, states: torch.Tensor) -> torch.Tensor:
    """Element-wise mean of each node's neighbor rows; zero for isolated nodes.

    Deterministic: neighbor lists are stored sorted ascending and summed in
    that order, so permuting the input edge order cannot change the result.
    """
    if states.shape[0] != view.node_count:
        raise ValueError(
            f"states has {states.shape[0]} rows for a {view.node_count}-node view"
        )
    dst, src, deg = _aggregation_arrays(view)
    agg = torch.zeros_like(states)
    agg = agg.index_add(0, dst, states.index_select(0, src))
    return agg / deg.clamp(min=1.0).unsqueeze(1)


def sage_layer(view: SubgraphView, states: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    """One update: ELU(W @ [self || neighborhood mean]) per node, no bias."""
    d_in = states.shape[1]
    if weight.ndim != 2 or weight.shape[1] != 2 * d_in:
        raise ValueError(
            f"weight shape {tuple(weight.shape)} incompatible with input width {d_in}"
        )
    neigh = mean_aggregate(view, states)
    return F.elu(torch.cat([states, neigh], dim=1) @ weight.T, alpha=1.0)


def _xavier_uniform(shape: tuple[int, int], generator: torch.Generator) -> torch.Tensor:
    fan_out, fan_in = shape
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    w = torch.empty(shape, dtype=torch.float64)
    w.uniform_(-bound, bound, generator=generator)
    return w


class RelationSage(nn.Module):
    """K-layer encoder for a single relation."""

    def __init__(self, feature_dim: int, cfg: EncoderConfig, generator: torch.Generator):
        super().__init__()
        widths = [feature_dim, *cfg.hidden_dims]
        self.weights = nn.ParameterList(
            nn.Parameter(_xavier_uniform((widths[l + 1], 2 * widths[l]), generator))
            for l in range(cfg.depth)
        )

    def forward(self, view: SubgraphView, x: torch.Tensor) -> torch.Tensor:
        h = x
        for w in self.weights:
            h = sage_layer(view, h, w)
        return h


class ParallelSageEncoder(nn.Module):
    """Independent branch per relation; output stacked to (n, m, embed_dim)."""

    def __init__(self, feature_dim: int, relation_count: int, cfg: EncoderConfig,
                 generator: torch.Generator):
        super().__init__()
        self.cfg = cfg
        self.feature_dim = feature_dim
        self.branches = nn.ModuleList(
            RelationSage(feature_dim, cfg, generator) for _ in range(relation_count)
        )

    @property
    def relation_count(self) -> int:
        return len(self.branches)

    def forward(self, x: torch.Tensor, views: list[SubgraphView]) -> torch.Tensor:
        if len(views) != len(self.branches):
            raise ValueError(
                f"{len(views)} views passed to a {len(self.branches)}-relation encoder"
            )
        if x.shape[1] != self.feature_dim:
            raise ValueError(
                f"feature width {x.shape[1]} does not match encoder input {self.feature_dim}"
            )
        return torch.stack(
            [branch(view, x) for branch, view in zip(self.branches, views)], dim=1
        )


def encode_all(graph: RelationalGraph, views: list[SubgraphView],
               encoder: ParallelSageEncoder) -> torch.Tensor:
    """Run every relation branch over the full node set from the raw features."""
    x = torch.from_numpy(graph.features)
    out = encoder(x, views)
    if not torch.isfinite(out).all():
        raise FloatingPointError("encoder produced non-finite values")
    return out
