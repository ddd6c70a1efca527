"""Dataset manifests, file ingestion, temporal edge construction, synthetic graphs.

File formats (all UTF-8, node ids 0-based):
  features  CSV of reals, one row per node
  labels    CSV ``node_id,label`` with -1 marking unlabeled nodes
  edges     TSV ``src<TAB>dst``
  temporal  TSV ``node_id<TAB>group<TAB>timestamp``; edges are built by
            chaining each row to the next k rows of its group in time order
  manifest  JSON document (see DatasetManifest)
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .relgraph import LABEL_UNLABELED, Relation, RelationalGraph

DEFAULT_TEMPORAL_K = 3
_SIGNAL_DEGREE = 14.0  # expected per-node degree of a full-strength signal relation


@dataclass
class RelationEntry:
    name: str
    description: str
    edge_file: str
    directed: bool = False
    temporal: bool = False
    k: int = DEFAULT_TEMPORAL_K


@dataclass
class DatasetManifest:
    name: str
    feature_file: str
    label_file: str
    relations: list[RelationEntry]
    base_dir: Path | None = None

    def __post_init__(self):
        names = [r.name for r in self.relations]
        if len(set(names)) != len(names):
            raise ValueError(f"relation names must be unique, got {names}")
        for r in self.relations:
            if not r.description.strip():
                raise ValueError(f"relation '{r.name}' has an empty description")

    def resolve(self, p: str) -> Path:
        path = Path(p)
        if not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
        return path


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    relations = [
        RelationEntry(
            name=r["name"],
            description=r["description"],
            edge_file=r["edge_file"],
            directed=bool(r.get("directed", False)),
            temporal=bool(r.get("temporal", False)),
            k=int(r.get("k", DEFAULT_TEMPORAL_K)),
        )
        for r in doc["relations"]
    ]
    return DatasetManifest(
        name=doc["name"],
        feature_file=doc["feature_file"],
        label_file=doc["label_file"],
        relations=relations,
        base_dir=path.parent,
    )


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    doc = {
        "name": manifest.name,
        "feature_file": manifest.feature_file,
        "label_file": manifest.label_file,
        "relations": [
            {
                "name": r.name,
                "description": r.description,
                "edge_file": r.edge_file,
                "directed": r.directed,
                "temporal": r.temporal,
                "k": r.k,
            }
            for r in manifest.relations
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


@dataclass
class TransactionTable:
    """Rows of (node_id, one group value per key, timestamp)."""

    node_ids: np.ndarray
    groups: dict[str, np.ndarray]
    timestamps: np.ndarray

    def __post_init__(self):
        self.node_ids = np.asarray(self.node_ids, dtype=np.int64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if np.unique(self.node_ids).size != self.node_ids.size:
            raise ValueError("transaction node ids must be unique")
        for key, col in self.groups.items():
            if len(col) != self.node_ids.size:
                raise ValueError(f"group column '{key}' length mismatch")


def build_temporal_edges(table: TransactionTable, group_key: str, k: int) -> np.ndarray:
    """Chain each transaction to the next k transactions of its group.

    Rows are ordered by timestamp within each group (ties broken by node id
    ascending) and a directed edge is emitted from every row to each of the
    following k rows, clipped at the group boundary. Never emits self edges;
    singleton groups emit nothing.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    col = np.asarray(table.groups[group_key])
    _, codes = np.unique(col, return_inverse=True)
    order = np.lexsort((table.node_ids, table.timestamps, codes))
    sorted_codes = codes[order]
    sorted_ids = table.node_ids[order]
    src, dst = [], []
    start = 0
    for stop in range(1, len(order) + 1):
        if stop == len(order) or sorted_codes[stop] != sorted_codes[start]:
            ids = sorted_ids[start:stop]
            for i in range(len(ids)):
                for j in range(i + 1, min(i + k + 1, len(ids))):
                    src.append(ids[i])
                    dst.append(ids[j])
            start = stop
    if not src:
        return np.zeros((0, 2), dtype=np.int64)
    return np.stack([np.asarray(src), np.asarray(dst)], axis=1).astype(np.int64)


def _read_features(path: Path) -> np.ndarray:
    if not path.exists():
        raise FileNotFoundError(f"feature file not found: {path}")
    rows = []
    width = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            vals = line.split(",")
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ValueError(
                    f"{path}:{lineno}: feature row has {len(vals)} values, expected {width}"
                )
            rows.append([float(v) for v in vals])
    if not rows:
        raise ValueError(f"feature file is empty: {path}")
    return np.asarray(rows, dtype=np.float64)


def _read_labels(path: Path, n: int) -> np.ndarray:
    if not path.exists():
        raise FileNotFoundError(f"label file not found: {path}")
    labels = np.full(n, LABEL_UNLABELED, dtype=np.int64)
    seen = np.zeros(n, dtype=bool)
    count = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'node_id,label'")
            node, lab = int(parts[0]), int(parts[1])
            if node < 0 or node >= n:
                raise ValueError(f"{path}:{lineno}: node id {node} out of range (n={n})")
            if seen[node]:
                raise ValueError(f"{path}:{lineno}: duplicate node id {node}")
            seen[node] = True
            labels[node] = lab
            count += 1
    if count != n:
        raise ValueError(f"{path}: {count} label rows for {n} feature rows")
    return labels


def _read_edge_tsv(path: Path) -> np.ndarray:
    if not path.exists():
        raise FileNotFoundError(f"edge file not found: {path}")
    pairs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'src<TAB>dst'")
            pairs.append((int(parts[0]), int(parts[1])))
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.asarray(pairs, dtype=np.int64)


def _read_transactions(path: Path, key: str) -> TransactionTable:
    if not path.exists():
        raise FileNotFoundError(f"transaction file not found: {path}")
    ids, groups, stamps = [], [], []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'node_id<TAB>group<TAB>timestamp'")
            ids.append(int(parts[0]))
            groups.append(parts[1])
            stamps.append(float(parts[2]))
    return TransactionTable(
        node_ids=np.asarray(ids, dtype=np.int64),
        groups={key: np.asarray(groups)},
        timestamps=np.asarray(stamps, dtype=np.float64),
    )


def load_dataset(manifest: DatasetManifest) -> RelationalGraph:
    """Build a RelationalGraph from the manifest's files.

    Temporal relations are read as transaction tables and routed through
    build_temporal_edges; everything else is a plain edge list. Any edge
    referencing a node id outside [0, n) is rejected with a precise error.
    """
    features = _read_features(manifest.resolve(manifest.feature_file))
    labels = _read_labels(manifest.resolve(manifest.label_file), features.shape[0])
    relations, edges = [], []
    for rid, entry in enumerate(manifest.relations):
        path = manifest.resolve(entry.edge_file)
        if entry.temporal:
            table = _read_transactions(path, entry.name)
            e = build_temporal_edges(table, entry.name, entry.k)
        else:
            e = _read_edge_tsv(path)
        relations.append(
            Relation(id=rid, name=entry.name, description=entry.description,
                     directed=entry.directed)
        )
        edges.append(e)
    return RelationalGraph(features, labels, relations, edges)


def save_dataset(graph: RelationalGraph, outdir: str | Path, name: str = "dataset") -> DatasetManifest:
    """Write the graph's files plus a manifest into outdir and return the manifest.

    Edges are materialized as plain lists regardless of how they were built,
    so a reload reproduces the graph exactly. Feature values are written with
    enough digits to round-trip float64.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "features.csv", "w", encoding="utf-8") as f:
        for row in graph.features:
            f.write(",".join(f"{v:.17g}" for v in row) + "\n")
    with open(outdir / "labels.csv", "w", encoding="utf-8") as f:
        for node, lab in enumerate(graph.labels):
            f.write(f"{node},{lab}\n")
    entries = []
    for rel, e in zip(graph.relations, graph.edges):
        fname = f"relation_{rel.id}.tsv"
        with open(outdir / fname, "w", encoding="utf-8") as f:
            for src, dst in e:
                f.write(f"{src}\t{dst}\n")
        entries.append(
            RelationEntry(
                name=rel.name,
                description=rel.description,
                edge_file=fname,
                directed=rel.directed,
                temporal=False,
            )
        )
    manifest = DatasetManifest(
        name=name,
        feature_file="features.csv",
        label_file="labels.csv",
        relations=entries,
        base_dir=outdir,
    )
    save_manifest(manifest, outdir / "manifest.json")
    return manifest


@dataclass
class SynthSpec:
    """Parameters of the planted-fraud generator."""

    node_count: int
    relation_count: int
    feature_dim: int
    fraud_rate: float
    signal_strengths: tuple[float, ...]
    noise_edge_prob: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.fraud_rate < 1.0:
            raise ValueError(f"fraud_rate must be in (0, 1), got {self.fraud_rate}")
        if self.relation_count < 1:
            raise ValueError("at least one relation required")
        self.signal_strengths = tuple(float(s) for s in self.signal_strengths)
        if len(self.signal_strengths) != self.relation_count:
            raise ValueError("one signal strength required per relation")
        if any(not 0.0 <= s <= 1.0 for s in self.signal_strengths):
            raise ValueError(f"signal strengths must lie in [0, 1], got {self.signal_strengths}")

    @classmethod
    def from_json(cls, path: str | Path) -> "SynthSpec":
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
        return cls(
            node_count=int(doc["node_count"]),
            relation_count=int(doc["relation_count"]),
            feature_dim=int(doc["feature_dim"]),
            fraud_rate=float(doc["fraud_rate"]),
            signal_strengths=tuple(doc["signal_strengths"]),
            noise_edge_prob=float(doc.get("noise_edge_prob", 0.01)),
            seed=int(doc.get("seed", 0)),
        )


def _sample_pairs(rng: np.random.Generator, members: np.ndarray, p: float) -> np.ndarray:
    """Bernoulli(p) over all unordered pairs of `members`."""
    if members.size < 2 or p <= 0.0:
        return np.zeros((0, 2), dtype=np.int64)
    iu, ju = np.triu_indices(members.size, k=1)
    keep = rng.random(iu.size) < p
    return np.stack([members[iu[keep]], members[ju[keep]]], axis=1)


def synth_fraud_graph(spec: SynthSpec) -> tuple[RelationalGraph, DatasetManifest]:
    """Generate a planted-fraud graph whose signal lives only in the topology.

    Labels are drawn first. Relation j then plants a dense fraud cluster over
    a strength-sized arc of a seeded permutation of the fraud nodes, with each
    relation's arc starting where the previous one ended (wrapping around), so
    the relations cover complementary parts of the fraud population and their
    union sees more of it than any single relation. Normal nodes get
    background same-class edges at a density matching the fraud nodes'
    expected signal degree, which keeps mean degree uninformative about the
    class. Random pairs are added at noise_edge_prob. Features are pure noise,
    independent of the labels, so only the relation topology carries the
    class signal.

    Returns the graph and a manifest whose edge_file entries are bare file
    names; save_dataset materializes them.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.node_count
    n_fraud = int(round(n * spec.fraud_rate))
    if n_fraud == 0 or n_fraud >= n:
        raise ValueError(
            f"fraud_rate {spec.fraud_rate} with {n} nodes yields a degenerate class split"
        )
    labels = np.zeros(n, dtype=np.int64)
    fraud_nodes = rng.choice(n, size=n_fraud, replace=False)
    labels[fraud_nodes] = 1
    features = rng.standard_normal((n, spec.feature_dim))

    relations, edge_sets = [], []
    all_nodes = np.arange(n)
    normal_nodes = all_nodes[labels == 0]
    fraud_order = rng.permutation(fraud_nodes)
    arc_start = 0
    for j, strength in enumerate(spec.signal_strengths):
        parts = []
        covered = int(round(strength * n_fraud))
        if covered >= 2:
            picks = (arc_start + np.arange(covered)) % n_fraud
            cluster = np.sort(fraud_order[picks])
            arc_start = (arc_start + covered) % n_fraud
            p_cluster = min(1.0, _SIGNAL_DEGREE / (covered - 1))
            parts.append(_sample_pairs(rng, cluster, p_cluster))
        p_background = min(1.0, strength * _SIGNAL_DEGREE / max(normal_nodes.size - 1, 1))
        parts.append(_sample_pairs(rng, normal_nodes, p_background))
        parts.append(_sample_pairs(rng, all_nodes, spec.noise_edge_prob))
        edges = np.concatenate(parts, axis=0)
        relations.append(
            Relation(
                id=j,
                name=f"rel{j + 1}",
                description=(
                    f"Relation {j + 1} connects nodes that interact under synthetic "
                    f"activity pattern {j + 1} ."
                ),
                directed=False,
            )
        )
        edge_sets.append(edges)

    graph = RelationalGraph(features, labels, relations, edge_sets)
    manifest = DatasetManifest(
        name=f"synth_n{n}_m{spec.relation_count}_seed{spec.seed}",
        feature_file="features.csv",
        label_file="labels.csv",
        relations=[
            RelationEntry(
                name=r.name,
                description=r.description,
                edge_file=f"relation_{r.id}.tsv",
                directed=False,
                temporal=False,
            )
            for r in relations
        ],
    )
    return graph, manifest
