"""Multi-relational graph data model: relation views, neighbor access, splits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LABEL_NORMAL = 0
LABEL_FRAUD = 1
LABEL_UNLABELED = -1


@dataclass(frozen=True)
class Relation:
    """Descriptor for one typed edge set."""

    id: int
    name: str
    description: str
    directed: bool = False


class RelationalGraph:
    """One node set with several typed edge sets, each a homogeneous slice.

    Edges are stored per relation, so no edge can belong to two relations.
    Undirected relations are canonicalized at construction time: each pair is
    stored once as (min, max) and duplicates are dropped. Directed relations
    keep their (src, dst) orientation, deduplicated. Instances are treated as
    immutable after construction.
    """

    def __init__(
        self,
        features: np.ndarray,
        labels: np.ndarray,
        relations: list[Relation],
        edges: list[np.ndarray],
    ):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise ValueError(f"features must be a 2-D matrix, got shape {features.shape}")
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (features.shape[0],):
            raise ValueError(
                f"labels shape {labels.shape} does not match node count {features.shape[0]}"
            )
        bad = ~np.isin(labels, (LABEL_NORMAL, LABEL_FRAUD, LABEL_UNLABELED))
        if bad.any():
            raise ValueError(f"labels must be in {{0, 1, -1}}, found {labels[bad][:5]}")
        if len(relations) != len(edges):
            raise ValueError("one edge array required per relation")
        ids = [r.id for r in relations]
        if sorted(ids) != list(range(len(relations))):
            raise ValueError(f"relation ids must be dense 0..m-1, got {ids}")
        if ids != list(range(len(relations))):
            raise ValueError("relations must be listed in id order")

        self.features = features
        self.labels = labels
        self.relations = list(relations)
        self.edges: list[np.ndarray] = []
        n = self.node_count
        for rel, e in zip(self.relations, edges):
            e = np.asarray(e, dtype=np.int64).reshape(-1, 2)
            if e.size and (e.min() < 0 or e.max() >= n):
                culprit = e[(e < 0).any(axis=1) | (e >= n).any(axis=1)][0]
                raise ValueError(
                    f"relation '{rel.name}' has edge {tuple(culprit)} referencing an "
                    f"unknown node id (graph has {n} nodes)"
                )
            if not rel.directed and e.size:
                e = np.sort(e, axis=1)
            if e.size:
                e = np.unique(e, axis=0)
            self.edges.append(e)

    @property
    def node_count(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def relation_count(self) -> int:
        return len(self.relations)

    def labeled_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.labels != LABEL_UNLABELED)


@dataclass
class SubgraphView:
    """Per-relation neighbor structure in CSR form.

    ``indices[indptr[v]:indptr[v+1]]`` are the aggregation neighbors of node v,
    sorted ascending and deduplicated. For directed relations these are the
    in-neighbors; undirected relations are symmetrized. ``edges`` keeps the
    graph's original per-relation edge array so views can be merged back.
    Views are immutable after construction.
    """

    relation_id: int
    node_count: int
    indptr: np.ndarray
    indices: np.ndarray
    self_loops: bool
    edges: np.ndarray
    _agg_cache: dict = field(default=None, repr=False, compare=False)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)


def _csr_from_arcs(n: int, arcs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Build (indptr, indices) with ascending, deduplicated columns per row."""
    if arcs.size == 0:
        return np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    arcs = np.unique(arcs, axis=0)  # sorts lexicographically by (row, col)
    rows, cols = arcs[:, 0], arcs[:, 1]
    counts = np.bincount(rows, minlength=n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, cols.astype(np.int64)


def partition_relations(graph: RelationalGraph) -> list[SubgraphView]:
    """Split the graph into one homogeneous view per relation.

    The views keep the graph's per-relation edge arrays untouched, so their
    union reproduces the full edge set and no edge appears in two views.
    Undirected relations get symmetric neighbor lists; directed relations keep
    in-neighbor lists only (a node aggregates over its predecessors).
    """
    if graph.relation_count < 1:
        raise ValueError("graph has no relations")
    n = graph.node_count
    views = []
    for rel, e in zip(graph.relations, graph.edges):
        if rel.directed:
            # in-neighbors: edge (src, dst) makes src visible to dst
            arcs = e[:, ::-1] if e.size else e.reshape(0, 2)
        else:
            arcs = np.concatenate([e, e[:, ::-1]], axis=0) if e.size else e.reshape(0, 2)
        indptr, indices = _csr_from_arcs(n, arcs)
        views.append(
            SubgraphView(
                relation_id=rel.id,
                node_count=n,
                indptr=indptr,
                indices=indices,
                self_loops=False,
                edges=e,
            )
        )
    return views


def add_self_loops(view: SubgraphView) -> SubgraphView:
    """Return a copy of the view where every node also sees itself once."""
    if view.self_loops:
        raise ValueError("view already has self-loops; refusing to inject twice")
    n = view.node_count
    insert_at = np.empty(n, dtype=np.int64)
    for v in range(n):
        row = view.indices[view.indptr[v] : view.indptr[v + 1]]
        k = np.searchsorted(row, v)
        if k < row.size and row[k] == v:
            raise ValueError(f"node {v} already has an explicit self edge")
        insert_at[v] = view.indptr[v] + k
    indices = np.insert(view.indices, insert_at, np.arange(n, dtype=np.int64))
    indptr = view.indptr + np.arange(n + 1, dtype=np.int64)
    return SubgraphView(
        relation_id=view.relation_id,
        node_count=n,
        indptr=indptr,
        indices=indices,
        self_loops=True,
        edges=view.edges,
    )


@dataclass(frozen=True)
class SplitMasks:
    """Disjoint train/val/test node index sets over the labeled nodes."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int

    def as_dict(self) -> dict:
        return {
            "train": self.train.tolist(),
            "val": self.val.tolist(),
            "test": self.test.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitMasks":
        return cls(
            train=np.asarray(d["train"], dtype=np.int64),
            val=np.asarray(d["val"], dtype=np.int64),
            test=np.asarray(d["test"], dtype=np.int64),
            seed=int(d["seed"]),
        )


def _apportion(n: int, ratios: tuple[float, ...]) -> list[int]:
    """Largest-remainder apportionment of n items into len(ratios) buckets."""
    quotas = [r * n for r in ratios]
    base = [int(np.floor(q)) for q in quotas]
    short = n - sum(base)
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base


def stratified_split(
    graph: RelationalGraph,
    ratios: tuple[float, float, float] = (0.4, 0.2, 0.4),
    seed: int = 0,
) -> SplitMasks:
    """Split labeled nodes into train/val/test, stratified by class.

    Each class is shuffled independently (seeded) and apportioned by the
    largest-remainder rule, so per-split class counts stay within one node of
    the exact quota. Unlabeled nodes never enter any mask. Deterministic for a
    fixed (graph, ratios, seed).
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    labeled = graph.labeled_nodes()
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[], [], []]
    for cls in (LABEL_NORMAL, LABEL_FRAUD):
        members = labeled[graph.labels[labeled] == cls]
        if members.size < len(ratios):
            raise ValueError(
                f"class {cls} has only {members.size} labeled nodes; "
                f"need at least {len(ratios)} to fill every split"
            )
        members = members[rng.permutation(members.size)]
        sizes = _apportion(members.size, ratios)
        if min(sizes) == 0:
            raise ValueError(f"class {cls} cannot populate every split with ratios {ratios}")
        stop = np.cumsum(sizes)
        parts[0].append(members[: stop[0]])
        parts[1].append(members[stop[0] : stop[1]])
        parts[2].append(members[stop[1] :])
    train, val, test = (np.sort(np.concatenate(p)) for p in parts)
    return SplitMasks(train=train, val=val, test=test, seed=seed)
