"""Hybrid template assembly, structure-aware injection, and text flattening.

A prompt interleaves instruction text, one placeholder token per relation,
that relation's description, and a closing question. After the token stream
is embedded, the placeholder rows are overwritten with the relation-specific
node embeddings, which is the only place graph information enters the LM in
soft-prompt mode. The flattened variant instead serializes feature values
into plain text and uses no placeholders at all.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
import torch

from .backbone import Vocabulary
from .relgraph import RelationalGraph, SubgraphView

SPECIAL_TOKEN_FORMAT = "<|graph_pad_relation{j}|>"
# Question stub kept when all natural-language context is stripped: just the
# answer cue, so generation still has a position to produce the label from.
MINIMAL_QUESTION = "A:"

_FLOAT_RE = re.compile(r"-?\d+\.\d+")


@lru_cache(maxsize=None)
def _packaged_wording(name: str) -> dict:
    with resources.files("relprompt").joinpath(f"templates/{name}.json").open(
        encoding="utf-8"
    ) as f:
        return json.load(f)


@dataclass(frozen=True)
class PromptTemplate:
    """Instruction, ordered (placeholder, description) pairs, question."""

    instruction: str
    pairs: tuple[tuple[str, str], ...]
    question: str

    def __post_init__(self):
        tokens = [t for t, _ in self.pairs]
        if len(set(tokens)) != len(tokens):
            raise ValueError("placeholder tokens must be unique")

    @property
    def special_tokens(self) -> list[str]:
        return [t for t, _ in self.pairs]

    def texts(self) -> list[str]:
        """Every natural-language fragment the template can emit."""
        return [self.instruction, *(d for _, d in self.pairs), self.question,
                MINIMAL_QUESTION]

    def single_view(self, j: int) -> "PromptTemplate":
        """Keep only relation j's placeholder-description pair."""
        if not 0 <= j < len(self.pairs):
            raise ValueError(f"view index {j} out of range for {len(self.pairs)} relations")
        return PromptTemplate(self.instruction, (self.pairs[j],), self.question)

    def as_dict(self) -> dict:
        return {
            "instruction": self.instruction,
            "relations": [{"token": t, "description": d} for t, d in self.pairs],
            "question": self.question,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PromptTemplate":
        return cls(
            instruction=doc["instruction"],
            pairs=tuple((r["token"], r["description"]) for r in doc["relations"]),
            question=doc["question"],
        )


def template_for_graph(graph: RelationalGraph) -> PromptTemplate:
    """Compose the standard template from the graph's relation descriptions."""
    wording = _packaged_wording("soft_prompt")
    pairs = tuple(
        (
            SPECIAL_TOKEN_FORMAT.format(j=rel.id + 1),
            f"{rel.name} relation embedding --- {rel.description}",
        )
        for rel in graph.relations
    )
    return PromptTemplate(wording["instruction"], pairs, wording["question"])


def load_template(path: str | Path) -> PromptTemplate:
    with open(path, encoding="utf-8") as f:
        return PromptTemplate.from_dict(json.load(f))


def save_template(template: PromptTemplate, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(template.as_dict(), f, indent=2)
        f.write("\n")


@dataclass(frozen=True)
class AssembledPrompt:
    """Token id sequence plus the positions of the placeholder tokens."""

    token_ids: np.ndarray
    positions: tuple[int, ...]

    def __post_init__(self):
        if list(self.positions) != sorted(set(self.positions)):
            raise ValueError("placeholder positions must be strictly increasing")

    def __len__(self) -> int:
        return len(self.token_ids)


def assemble_template(template: PromptTemplate, vocab: Vocabulary,
                      semantics: bool = True) -> AssembledPrompt:
    """Tokenize the template, alternating placeholders with their descriptions.

    With semantics off, all instruction and description text is dropped: the
    stream is just the placeholders in relation order plus a minimal answer
    cue.
    """
    ids: list[int] = []
    positions: list[int] = []
    if semantics:
        ids.extend(vocab.encode(template.instruction))
    for token, description in template.pairs:
        positions.append(len(ids))
        ids.append(vocab.special_id(token))
        if semantics:
            ids.extend(vocab.encode(description))
    ids.extend(vocab.encode(template.question if semantics else MINIMAL_QUESTION))
    return AssembledPrompt(np.asarray(ids, dtype=np.int64), tuple(positions))


def inject_structure(E_temp: torch.Tensor, H_v: torch.Tensor,
                     positions: tuple[int, ...]) -> torch.Tensor:
    """Overwrite the placeholder rows of E_temp with the node's relation embeddings.

    Row positions[j] becomes H_v[j]; every other row is copied bit for bit.
    Gradients flow from the result into H_v, which is what lets the LM loss
    train the graph encoders.
    """
    L = E_temp.shape[0]
    if len(positions) != H_v.shape[0]:
        raise ValueError(f"{H_v.shape[0]} embeddings for {len(positions)} positions")
    if len(set(positions)) != len(positions):
        raise ValueError(f"placeholder positions collide: {positions}")
    if positions and (min(positions) < 0 or max(positions) >= L):
        raise ValueError(f"positions {positions} out of range for length {L}")
    if H_v.shape[1] != E_temp.shape[1]:
        raise ValueError("embedding width mismatch")
    idx = torch.as_tensor(positions, dtype=torch.int64)
    return E_temp.index_put((idx,), H_v)


def inject_structure_batch(E_temp: torch.Tensor, H_batch: torch.Tensor,
                           positions: tuple[int, ...]) -> torch.Tensor:
    """Batched injection: (L, d) template + (B, m, d) embeddings -> (B, L, d)."""
    B, m, d = H_batch.shape
    if m != len(positions):
        raise ValueError(f"{m} embeddings for {len(positions)} positions")
    E = E_temp.unsqueeze(0).expand(B, -1, -1)
    rows = torch.arange(B).unsqueeze(1).expand(B, m)
    cols = torch.as_tensor(positions, dtype=torch.int64).unsqueeze(0).expand(B, m)
    return E.index_put((rows, cols), H_batch)


def scale_to_embedding_norm(H: torch.Tensor, tok_emb: torch.Tensor) -> torch.Tensor:
    """Rescale injected vectors to the mean row norm of the embedding table."""
    target = tok_emb.norm(dim=1).mean()
    norms = H.norm(dim=-1, keepdim=True).clamp(min=1e-12)
    return H * (target / norms)


@dataclass(frozen=True)
class FlattenedPrompt:
    """Hard-prompt baseline: features serialized as decimal literals."""

    node: int
    text: str


def _fmt(values: np.ndarray, digits: int) -> str:
    return ", ".join(f"{v:.{digits}f}" for v in values)


def flatten_features(node: int, graph: RelationalGraph, views: list[SubgraphView],
                     digits: int = 2) -> FlattenedPrompt:
    """Serialize the target node's features and per-relation neighbor means as text.

    Each relation contributes the mean of its 1-hop neighbor features (or an
    explicit no-neighbors marker), labelled with the relation's description.
    Numbers are formatted to `digits` decimals. The output never contains
    placeholder tokens.
    """
    if not 0 <= node < graph.node_count:
        raise ValueError(f"node {node} out of range")
    w = _packaged_wording("flattened")
    parts = [w["instruction"], f"{w['target_label']} {_fmt(graph.features[node], digits)} ."]
    for rel, view in zip(graph.relations, views):
        neigh = view.neighbors(node)
        if neigh.size:
            body = f"{w['neighbor_mean_label']} {_fmt(graph.features[neigh].mean(axis=0), digits)}"
        else:
            body = w["empty_marker"]
        parts.append(f"{rel.name} relation features --- {rel.description} {body} .")
    parts.append(w["question"])
    return FlattenedPrompt(node=node, text=" ".join(parts))


def flattened_literals(prompt: FlattenedPrompt) -> list[str]:
    """All decimal literals in the text, in order (parse-back helper)."""
    return _FLOAT_RE.findall(prompt.text)


def flattened_wording_texts() -> list[str]:
    """Fragments the flattened builder can emit, for vocabulary construction."""
    w = _packaged_wording("flattened")
    return [w["instruction"], w["target_label"], w["neighbor_mean_label"],
            w["empty_marker"], w["question"], "relation features ---", "."]
