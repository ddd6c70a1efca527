"""Label-text mapping, teacher-forced likelihoods, masked loss, scoring, metrics.

Classification is framed as picking between two candidate answer sequences.
The anomaly score of a node is the log-likelihood margin between the "fraud"
and "normal" sequences; the predicted label is the argmax, with exact ties
resolved to normal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .backbone import CausalLM, Vocabulary

FRAUD_TEXT = "fraud"
NORMAL_TEXT = "normal"
IGNORE_INDEX = -1


@dataclass(frozen=True)
class TargetSequences:
    """Tokenized answer sequences for the two labels."""

    normal_ids: tuple[int, ...]
    fraud_ids: tuple[int, ...]

    def __post_init__(self):
        if not self.normal_ids or not self.fraud_ids:
            raise ValueError("answer sequences must be non-empty")

    @classmethod
    def from_vocab(cls, vocab: Vocabulary, normal_text: str = NORMAL_TEXT,
                   fraud_text: str = FRAUD_TEXT) -> "TargetSequences":
        return cls(
            normal_ids=tuple(vocab.encode(normal_text)),
            fraud_ids=tuple(vocab.encode(fraud_text)),
        )

    def for_label(self, y: int) -> tuple[int, ...]:
        if y == 1:
            return self.fraud_ids
        if y == 0:
            return self.normal_ids
        raise ValueError(f"label must be 0 or 1, got {y}")


def _answer_logits(model: CausalLM, E_input: torch.Tensor,
                   answer_ids) -> torch.Tensor:
    """Logits at the positions that predict each answer token (teacher forced)."""
    L = E_input.shape[0]
    n = len(answer_ids)
    if L + n > model.cfg.max_len:
        raise ValueError(
            f"prompt length {L} plus answer length {n} exceeds context "
            f"length {model.cfg.max_len}"
        )
    if n > 1:
        E = torch.cat([E_input, model.embed(list(answer_ids[:-1]))], dim=0)
    else:
        E = E_input
    logits = model.forward_embeddings(E)
    return logits[L - 1 : L - 1 + n]


def sequence_logprob(model: CausalLM, E_input: torch.Tensor, answer_ids) -> torch.Tensor:
    """Sum of per-token log-probabilities of the answer under teacher forcing.

    The gold prefix is appended to the prompt embeddings via the embedding
    table; position L-1+j of the logits scores answer token j.
    """
    logits = _answer_logits(model, E_input, answer_ids)
    logp = torch.log_softmax(logits, dim=-1)
    ids = torch.as_tensor(answer_ids, dtype=torch.int64)
    return logp[torch.arange(len(ids)), ids].sum()


def masked_answer_loss(model: CausalLM, E: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Negative log-likelihood over the supervised positions only.

    `labels[k]` is the token expected at position k+1; entries below zero are
    masked out entirely, so whatever bytes sit at prompt positions cannot
    influence the loss.
    """
    if labels.shape[0] != E.shape[0]:
        raise ValueError("one label per input position required")
    logits = model.forward_embeddings(E)
    keep = labels >= 0
    logp = torch.log_softmax(logits[keep], dim=-1)
    picked = logp[torch.arange(int(keep.sum())), labels[keep]]
    return -picked.sum()


def training_loss(model: CausalLM, E_input: torch.Tensor, y: int,
                  targets: TargetSequences) -> torch.Tensor:
    """Answer-token cross-entropy for the gold label; prompt positions masked."""
    if y not in (0, 1):
        raise ValueError(f"node is unlabeled or has invalid label {y}")
    answer = targets.for_label(y)
    L = E_input.shape[0]
    n = len(answer)
    if L + n > model.cfg.max_len:
        raise ValueError(
            f"prompt length {L} plus answer length {n} exceeds context "
            f"length {model.cfg.max_len}"
        )
    if n > 1:
        E = torch.cat([E_input, model.embed(list(answer[:-1]))], dim=0)
    else:
        E = E_input
    labels = torch.full((E.shape[0],), IGNORE_INDEX, dtype=torch.int64)
    labels[L - 1 : L - 1 + n] = torch.as_tensor(answer, dtype=torch.int64)
    return masked_answer_loss(model, E, labels)


def anomaly_score(model: CausalLM, E_input: torch.Tensor,
                  targets: TargetSequences) -> float:
    """Log-likelihood margin of "fraud" over "normal" for one node."""
    with torch.no_grad():
        lp_fraud = sequence_logprob(model, E_input.detach(), targets.fraud_ids)
        lp_normal = sequence_logprob(model, E_input.detach(), targets.normal_ids)
    return float(lp_fraud - lp_normal)


def predict(model: CausalLM, E_input: torch.Tensor, targets: TargetSequences) -> int:
    """Argmax over the two candidate answers; an exact tie goes to normal."""
    return int(anomaly_score(model, E_input, targets) > 0.0)


def batch_sequence_logprob(model: CausalLM, E_batch: torch.Tensor,
                           answer_ids) -> torch.Tensor:
    """Teacher-forced answer log-likelihood for a batch sharing one answer."""
    B, L, _ = E_batch.shape
    n = len(answer_ids)
    if L + n > model.cfg.max_len:
        raise ValueError(
            f"prompt length {L} plus answer length {n} exceeds context "
            f"length {model.cfg.max_len}"
        )
    if n > 1:
        tail = model.embed(list(answer_ids[:-1])).unsqueeze(0).expand(B, -1, -1)
        E = torch.cat([E_batch, tail], dim=1)
    else:
        E = E_batch
    logits = model.forward_embeddings(E)[:, L - 1 : L - 1 + n]
    logp = torch.log_softmax(logits, dim=-1)
    ids = torch.as_tensor(answer_ids, dtype=torch.int64)
    return logp[:, torch.arange(n), ids].sum(dim=1)


@dataclass(frozen=True)
class NodeScore:
    node_id: int
    score: float
    predicted: int


@dataclass(frozen=True)
class EvalReport:
    """AUC / Recall / G-Mean plus confusion counts for one node set."""

    auc: float
    recall: float
    g_mean: float
    tp: int
    fp: int
    tn: int
    fn: int
    n_eval: int

    def as_dict(self) -> dict:
        return {
            "auc": self.auc,
            "recall": self.recall,
            "g_mean": self.g_mean,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "n_eval": self.n_eval,
        }


def auc_score(scores: np.ndarray, labels: np.ndarray) -> float:
    """Probability that a random fraud node outscores a random normal node.

    Rank-based with ties counted one half, equivalent to the pairwise
    comparison over all fraud/normal pairs.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: both classes must be present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j < len(scores) and sorted_scores[j] == sorted_scores[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1.0  # average 1-based rank
        i = j
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def compute_metrics(scores: np.ndarray, predictions: np.ndarray,
                    labels: np.ndarray) -> EvalReport:
    """AUC from scores, Recall and G-Mean from hard predictions.

    Fraud is the positive class. G-Mean is sqrt(TPR * TNR). Raises when only
    one class is present, since the AUC is undefined there.
    """
    scores = np.asarray(scores, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if not (len(scores) == len(predictions) == len(labels)) or len(scores) == 0:
        raise ValueError("scores, predictions and labels must be non-empty and aligned")
    auc = auc_score(scores, labels)
    tp = int(((predictions == 1) & (labels == 1)).sum())
    fp = int(((predictions == 1) & (labels == 0)).sum())
    tn = int(((predictions == 0) & (labels == 0)).sum())
    fn = int(((predictions == 0) & (labels == 1)).sum())
    tpr = tp / (tp + fn)
    tnr = tn / (tn + fp)
    return EvalReport(
        auc=auc,
        recall=tpr,
        g_mean=float(np.sqrt(tpr * tnr)),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        n_eval=len(labels),
    )
