"""Joint training of graph encoders and LM adapters, ablations, evaluation.

Every optimizer step recomputes the full-batch relation embeddings, gathers
the rows for the node mini-batch, injects them into the assembled prompt and
applies Adam to exactly the trainable set of the active mode:

  full / wo_semantics / single_view   encoder weights + LoRA adapters
  wo_joint                            LoRA adapters only (encoders stay at
                                      their random initialization, gradients
                                      cut at the injection boundary)
  flattened                           LoRA adapters only (text baseline)
  wo_llm                              encoder weights + MLP head (no LM)

Model selection keeps the epoch with the best validation AUC. Runs are
deterministic for a fixed (data, config, seed).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .backbone import CausalLM, Dense, DecoderConfig, Vocabulary
from .checkpoint import Checkpoint
from .encoder import EncoderConfig, ParallelSageEncoder
from .objective import (
    FRAUD_TEXT,
    NORMAL_TEXT,
    EvalReport,
    NodeScore,
    TargetSequences,
    auc_score,
    batch_sequence_logprob,
    compute_metrics,
    sequence_logprob,
    training_loss,
)
from .prompt import (
    AssembledPrompt,
    PromptTemplate,
    assemble_template,
    flatten_features,
    flattened_wording_texts,
    inject_structure_batch,
    scale_to_embedding_norm,
    template_for_graph,
)
from .relgraph import (
    RelationalGraph,
    SplitMasks,
    SubgraphView,
    add_self_loops,
    partition_relations,
    stratified_split,
)

logger = logging.getLogger(__name__)

MODES = ("full", "wo_llm", "wo_semantics", "wo_joint", "flattened", "single_view")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "full"
    single_view_index: int | None = None
    learning_rate: float = 3e-4
    epochs: int = 30
    node_batch_size: int = 8
    seed: int = 0
    patience: int = 5
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    encoder_depth: int = 2
    encoder_hidden: tuple[int, ...] | None = None
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    inject_scale_norm: bool = False
    mlp_hidden: int = 64
    flatten_digits: int = 2
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.mode == "single_view" and self.single_view_index is None:
            raise ValueError("single_view mode requires single_view_index")

    def encoder_config(self) -> EncoderConfig:
        hidden = self.encoder_hidden
        if hidden is None:
            hidden = (64,) * (self.encoder_depth - 1) + (self.decoder.d_emb,)
        return EncoderConfig(depth=self.encoder_depth, hidden_dims=tuple(hidden))

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "single_view_index": self.single_view_index,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "node_batch_size": self.node_batch_size,
            "seed": self.seed,
            "patience": self.patience,
            "adam_betas": list(self.adam_betas),
            "adam_eps": self.adam_eps,
            "encoder_depth": self.encoder_depth,
            "encoder_hidden": list(self.encoder_hidden) if self.encoder_hidden else None,
            "decoder": {
                "n_layers": self.decoder.n_layers,
                "n_heads": self.decoder.n_heads,
                "d_emb": self.decoder.d_emb,
                "d_ff": self.decoder.d_ff,
                "max_len": self.decoder.max_len,
                "lora_rank": self.decoder.lora_rank,
                "lora_alpha": self.decoder.lora_alpha,
            },
            "inject_scale_norm": self.inject_scale_norm,
            "mlp_hidden": self.mlp_hidden,
            "flatten_digits": self.flatten_digits,
            "eval_batch_size": self.eval_batch_size,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        dec = doc.pop("decoder", {}) or {}
        return cls(
            mode=doc.get("mode", "full"),
            single_view_index=doc.get("single_view_index"),
            learning_rate=float(doc.get("learning_rate", 3e-4)),
            epochs=int(doc.get("epochs", 30)),
            node_batch_size=int(doc.get("node_batch_size", 8)),
            seed=int(doc.get("seed", 0)),
            patience=int(doc.get("patience", 5)),
            adam_betas=tuple(doc.get("adam_betas", (0.9, 0.999))),
            adam_eps=float(doc.get("adam_eps", 1e-8)),
            encoder_depth=int(doc.get("encoder_depth", 2)),
            encoder_hidden=tuple(doc["encoder_hidden"]) if doc.get("encoder_hidden") else None,
            decoder=DecoderConfig(
                n_layers=int(dec.get("n_layers", 2)),
                n_heads=int(dec.get("n_heads", 4)),
                d_emb=int(dec.get("d_emb", 64)),
                d_ff=int(dec.get("d_ff", 256)),
                max_len=int(dec.get("max_len", 256)),
                lora_rank=int(dec.get("lora_rank", 4)),
                lora_alpha=float(dec.get("lora_alpha", 8.0)),
            ),
            inject_scale_norm=bool(doc.get("inject_scale_norm", False)),
            mlp_hidden=int(doc.get("mlp_hidden", 64)),
            flatten_digits=int(doc.get("flatten_digits", 2)),
            eval_batch_size=int(doc.get("eval_batch_size", 64)),
        )


def build_views(graph: RelationalGraph) -> list[SubgraphView]:
    """Partition into per-relation views; directed relations get self-loops."""
    views = partition_relations(graph)
    return [
        add_self_loops(v) if graph.relations[i].directed else v
        for i, v in enumerate(views)
    ]


class MlpHead(nn.Module):
    """Two-layer classifier over the concatenated relation embeddings."""

    def __init__(self, d_in: int, hidden: int, generator: torch.Generator):
        super().__init__()
        self.fc1 = Dense(d_in, hidden, generator)
        self.fc2 = Dense(hidden, 2, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.relu(self.fc1(x)))


class Pipeline:
    """Runtime bundle of graph, views, modules and prompt pieces for one mode."""

    def __init__(self, graph: RelationalGraph, config: TrainConfig,
                 generator: torch.Generator, template: PromptTemplate | None = None,
                 vocab: Vocabulary | None = None):
        if config.mode == "single_view" and config.single_view_index >= graph.relation_count:
            raise ValueError(
                f"single_view index {config.single_view_index} out of range for "
                f"{graph.relation_count} relations"
            )
        self.graph = graph
        self.config = config
        self.mode = config.mode
        self.views = build_views(graph)
        self.features = torch.from_numpy(graph.features)
        d_emb = config.decoder.d_emb

        self.encoder: ParallelSageEncoder | None = None
        self.model: CausalLM | None = None
        self.mlp: MlpHead | None = None
        self.base_template: PromptTemplate | None = None
        self.template: PromptTemplate | None = None
        self.vocab: Vocabulary | None = None
        self.prompt: AssembledPrompt | None = None
        self.targets: TargetSequences | None = None
        self._flat_ids: dict[int, list[int]] = {}

        if self.mode != "flattened":
            self.encoder = ParallelSageEncoder(
                graph.feature_dim, graph.relation_count, config.encoder_config(), generator
            )
        if self.mode == "wo_llm":
            self.mlp = MlpHead(graph.relation_count * d_emb, config.mlp_hidden, generator)
            return

        if self.mode == "flattened":
            if vocab is None:
                texts = flattened_wording_texts()
                texts += [f"{r.name} relation features --- {r.description}"
                          for r in graph.relations]
                texts += [FRAUD_TEXT, NORMAL_TEXT]
                vocab = Vocabulary.build(texts, include_digit_chars=True)
            self.vocab = vocab
        else:
            self.base_template = template if template is not None else template_for_graph(graph)
            self.template = self.base_template
            if self.mode == "single_view":
                self.template = self.base_template.single_view(config.single_view_index)
            if vocab is None:
                vocab = Vocabulary.build(
                    self.template.texts() + [FRAUD_TEXT, NORMAL_TEXT],
                    special_tokens=self.template.special_tokens,
                )
            self.vocab = vocab
            self.prompt = assemble_template(
                self.template, self.vocab, semantics=self.mode != "wo_semantics"
            )
        self.model = CausalLM(config.decoder, len(self.vocab), generator)
        self.targets = TargetSequences.from_vocab(self.vocab)

    # ---- parameter bookkeeping -------------------------------------------------

    def parameter_index(self) -> dict[str, nn.Parameter]:
        """Canonical key -> parameter map used by checkpoints and audits."""
        out: dict[str, nn.Parameter] = {}
        if self.encoder is not None:
            for r, branch in enumerate(self.encoder.branches):
                for l, w in enumerate(branch.weights):
                    out[f"sage/{r}/{l}"] = w
        if self.model is not None:
            m = self.model
            out["lm/tok_emb"] = m.tok_emb
            out["lm/pos_emb"] = m.pos_emb
            out["lm/ln_f/weight"] = m.ln_f.weight
            out["lm/ln_f/bias"] = m.ln_f.bias
            for i, blk in enumerate(m.blocks):
                p = f"lm/block{i}"
                out[f"{p}/ln1/weight"] = blk.ln1.weight
                out[f"{p}/ln1/bias"] = blk.ln1.bias
                out[f"{p}/ln2/weight"] = blk.ln2.weight
                out[f"{p}/ln2/bias"] = blk.ln2.bias
                for name, proj in (("q", blk.attn.q_proj), ("v", blk.attn.v_proj)):
                    out[f"{p}/attn/{name}/weight"] = proj.base.weight
                    out[f"{p}/attn/{name}/bias"] = proj.base.bias
                    if proj.rank > 0:
                        out[f"lora/block{i}/{name}/A"] = proj.lora_A
                        out[f"lora/block{i}/{name}/B"] = proj.lora_B
                for name, proj in (("k", blk.attn.k_proj), ("o", blk.attn.o_proj)):
                    out[f"{p}/attn/{name}/weight"] = proj.weight
                    out[f"{p}/attn/{name}/bias"] = proj.bias
                out[f"{p}/mlp/fc1/weight"] = blk.fc1.weight
                out[f"{p}/mlp/fc1/bias"] = blk.fc1.bias
                out[f"{p}/mlp/fc2/weight"] = blk.fc2.weight
                out[f"{p}/mlp/fc2/bias"] = blk.fc2.bias
        if self.mlp is not None:
            out["mlp/fc1/weight"] = self.mlp.fc1.weight
            out["mlp/fc1/bias"] = self.mlp.fc1.bias
            out["mlp/fc2/weight"] = self.mlp.fc2.weight
            out["mlp/fc2/bias"] = self.mlp.fc2.bias
        return out

    def trainable_keys(self) -> list[str]:
        prefixes = {
            "full": ("sage/", "lora/"),
            "wo_semantics": ("sage/", "lora/"),
            "single_view": ("sage/", "lora/"),
            "wo_joint": ("lora/",),
            "flattened": ("lora/",),
            "wo_llm": ("sage/", "mlp/"),
        }[self.mode]
        return [k for k in self.parameter_index() if k.startswith(prefixes)]

    def trainable_parameters(self) -> dict[str, nn.Parameter]:
        index = self.parameter_index()
        return {k: index[k] for k in self.trainable_keys()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.detach().numpy().copy() for k, p in self.parameter_index().items()}

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        index = self.parameter_index()
        if set(index) != set(tensors):
            missing = set(index) ^ set(tensors)
            raise ValueError(f"checkpoint tensor keys do not match pipeline: {sorted(missing)}")
        with torch.no_grad():
            for key, p in index.items():
                arr = tensors[key]
                if tuple(arr.shape) != tuple(p.shape):
                    raise ValueError(
                        f"tensor {key} has shape {arr.shape}, expected {tuple(p.shape)}"
                    )
                p.copy_(torch.from_numpy(np.ascontiguousarray(arr)))

    # ---- forward plumbing --------------------------------------------------------

    def relation_embeddings(self) -> torch.Tensor:
        """Full-batch (n, m, d_emb) node states; gradient cut in wo_joint mode."""
        if self.mode == "wo_joint":
            with torch.no_grad():
                return self.encoder(self.features, self.views)
        return self.encoder(self.features, self.views)

    def _injected_inputs(self, node_ids: np.ndarray, H: torch.Tensor) -> torch.Tensor:
        H_nodes = H[torch.as_tensor(node_ids, dtype=torch.int64)]
        if self.mode == "single_view":
            H_nodes = H_nodes[:, [self.config.single_view_index], :]
        if self.config.inject_scale_norm:
            H_nodes = scale_to_embedding_norm(H_nodes, self.model.tok_emb.detach())
        E_temp = self.model.embed(self.prompt.token_ids)
        return inject_structure_batch(E_temp, H_nodes, self.prompt.positions)

    def _flattened_token_ids(self, node: int) -> list[int]:
        if node not in self._flat_ids:
            flat = flatten_features(node, self.graph, self.views, self.config.flatten_digits)
            self._flat_ids[node] = self.vocab.encode(flat.text)
        return self._flat_ids[node]

    def batch_loss(self, node_ids: np.ndarray) -> torch.Tensor:
        """Mean per-node loss over one mini-batch of labeled nodes."""
        node_ids = np.asarray(node_ids, dtype=np.int64)
        labels = self.graph.labels[node_ids]
        if (labels < 0).any():
            raise ValueError("training batch contains unlabeled nodes")
        if self.mode == "wo_llm":
            H = self.relation_embeddings()
            x = H[torch.as_tensor(node_ids)].reshape(len(node_ids), -1)
            logits = self.mlp(x)
            return F.cross_entropy(logits, torch.as_tensor(labels, dtype=torch.int64))
        if self.mode == "flattened":
            total = 0.0
            for node, y in zip(node_ids, labels):
                E = self.model.embed(self._flattened_token_ids(int(node)))
                total = total + training_loss(self.model, E, int(y), self.targets)
            return total / len(node_ids)
        H = self.relation_embeddings()
        E = self._injected_inputs(node_ids, H)
        if self._single_token_answers():
            # both answers are one token: a single forward scores every node
            logits = self.model.forward_embeddings(E)[:, E.shape[1] - 1]
            logp = torch.log_softmax(logits, dim=-1)
            gold = torch.as_tensor(
                [self.targets.for_label(int(y))[0] for y in labels], dtype=torch.int64
            )
            return -logp[torch.arange(len(node_ids)), gold].mean()
        total = 0.0
        for y in (0, 1):
            grp = np.flatnonzero(labels == y)
            if grp.size == 0:
                continue
            lp = batch_sequence_logprob(self.model, E[torch.as_tensor(grp)],
                                        self.targets.for_label(y))
            total = total - lp.sum()
        return total / len(node_ids)

    def _single_token_answers(self) -> bool:
        return len(self.targets.fraud_ids) == 1 and len(self.targets.normal_ids) == 1

    def score_nodes(self, node_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Anomaly scores and hard predictions; read-only over the parameters."""
        node_ids = np.asarray(node_ids, dtype=np.int64)
        scores = np.empty(len(node_ids), dtype=np.float64)
        with torch.no_grad():
            if self.mode == "wo_llm":
                H = self.relation_embeddings()
                x = H[torch.as_tensor(node_ids)].reshape(len(node_ids), -1)
                logits = self.mlp(x)
                scores[:] = (logits[:, 1] - logits[:, 0]).numpy()
            elif self.mode == "flattened":
                for i, node in enumerate(node_ids):
                    E = self.model.embed(self._flattened_token_ids(int(node)))
                    lp1 = sequence_logprob(self.model, E, self.targets.fraud_ids)
                    lp0 = sequence_logprob(self.model, E, self.targets.normal_ids)
                    scores[i] = float(lp1 - lp0)
            else:
                H = self.relation_embeddings()
                bs = self.config.eval_batch_size
                single = self._single_token_answers()
                for start in range(0, len(node_ids), bs):
                    chunk = node_ids[start : start + bs]
                    E = self._injected_inputs(chunk, H)
                    if single:
                        logits = self.model.forward_embeddings(E)[:, E.shape[1] - 1]
                        logp = torch.log_softmax(logits, dim=-1)
                        margin = logp[:, self.targets.fraud_ids[0]] - logp[:, self.targets.normal_ids[0]]
                    else:
                        lp1 = batch_sequence_logprob(self.model, E, self.targets.fraud_ids)
                        lp0 = batch_sequence_logprob(self.model, E, self.targets.normal_ids)
                        margin = lp1 - lp0
                    scores[start : start + bs] = margin.numpy()
        return scores, (scores > 0.0).astype(np.int64)


def _make_checkpoint(pipe: Pipeline, splits: SplitMasks, history: list[dict],
                     best_epoch: int, torch_gen: torch.Generator,
                     np_rng: np.random.Generator) -> Checkpoint:
    return Checkpoint(
        config=pipe.config.as_dict(),
        template=pipe.base_template.as_dict() if pipe.base_template is not None else None,
        vocab_tokens=list(pipe.vocab.tokens) if pipe.vocab is not None else None,
        vocab_base_size=pipe.vocab.base_size if pipe.vocab is not None else None,
        tensors=pipe.snapshot(),
        splits=splits.as_dict(),
        history=history,
        best_epoch=best_epoch,
        rng={
            "torch": torch_gen.get_state().numpy().tobytes().hex(),
            "numpy": np_rng.bit_generator.state,
        },
        lm_forward_calls=pipe.model.forward_calls if pipe.model is not None else 0,
    )


def pipeline_from_checkpoint(checkpoint: Checkpoint, graph: RelationalGraph) -> Pipeline:
    config = TrainConfig.from_dict(checkpoint.config)
    template = None
    if checkpoint.template is not None:
        template = PromptTemplate.from_dict(checkpoint.template)
    vocab = None
    if checkpoint.vocab_tokens is not None:
        base = checkpoint.vocab_base_size
        vocab = Vocabulary(checkpoint.vocab_tokens[:base], checkpoint.vocab_tokens[base:])
    pipe = Pipeline(graph, config, torch.Generator().manual_seed(0),
                    template=template, vocab=vocab)
    pipe.load_tensors(checkpoint.tensors)
    return pipe


def train(graph: RelationalGraph, splits: SplitMasks, config: TrainConfig) -> Checkpoint:
    """Run the joint optimization and return the best-validation checkpoint.

    Per step: full-batch relation encoding, gather the mini-batch rows,
    assemble and inject prompts, average the answer-token loss and apply Adam
    to the mode's trainable set. Tracks per-epoch train loss and validation
    AUC; early-stops after `patience` epochs without improvement.
    """
    torch_gen = torch.Generator().manual_seed(config.seed)
    np_rng = np.random.default_rng(config.seed)
    pipe = Pipeline(graph, config, torch_gen)
    params = pipe.trainable_parameters()
    optimizer = torch.optim.Adam(
        list(params.values()),
        lr=config.learning_rate,
        betas=config.adam_betas,
        eps=config.adam_eps,
    )

    best_auc = -np.inf
    best_loss = np.inf
    best_tensors = pipe.snapshot()
    best_epoch = -1
    stale = 0
    history: list[dict] = []
    train_ids = np.asarray(splits.train, dtype=np.int64)

    for epoch in range(config.epochs):
        order = train_ids[np_rng.permutation(train_ids.size)]
        total = 0.0
        for start in range(0, order.size, config.node_batch_size):
            batch = order[start : start + config.node_batch_size]
            optimizer.zero_grad()
            loss = pipe.batch_loss(batch)
            loss.backward()
            optimizer.step()
            total += loss.detach().item() * batch.size
        train_loss = total / order.size
        val_scores, _ = pipe.score_nodes(splits.val)
        val_auc = auc_score(val_scores, graph.labels[splits.val])
        with torch.no_grad():
            val_loss = pipe.batch_loss(splits.val).item()
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_auc": val_auc, "val_loss": val_loss})
        logger.info("epoch %d: loss=%.4f val_auc=%.4f val_loss=%.4f",
                    epoch, train_loss, val_auc, val_loss)
        # selection by validation AUC; ties broken by validation loss, since a
        # small validation set saturates its AUC long before training settles
        if val_auc > best_auc or (val_auc == best_auc and val_loss < best_loss):
            best_auc = val_auc
            best_loss = val_loss
            best_tensors = pipe.snapshot()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                logger.info("early stop at epoch %d", epoch)
                break

    pipe.load_tensors(best_tensors)
    return _make_checkpoint(pipe, splits, history, best_epoch, torch_gen, np_rng)


def node_scores(checkpoint: Checkpoint, graph: RelationalGraph,
                mask: np.ndarray) -> list[NodeScore]:
    """Per-node anomaly scores and predictions for the masked nodes."""
    pipe = pipeline_from_checkpoint(checkpoint, graph)
    scores, preds = pipe.score_nodes(mask)
    return [
        NodeScore(node_id=int(n), score=float(s), predicted=int(p))
        for n, s, p in zip(np.asarray(mask), scores, preds)
    ]


def evaluate(checkpoint: Checkpoint, graph: RelationalGraph,
             mask: np.ndarray) -> EvalReport:
    """Score every masked node and aggregate AUC / Recall / G-Mean."""
    entries = node_scores(checkpoint, graph, mask)
    scores = np.array([e.score for e in entries])
    preds = np.array([e.predicted for e in entries])
    labels = graph.labels[np.asarray(mask, dtype=np.int64)]
    return compute_metrics(scores, preds, labels)


def run_ablation(graph: RelationalGraph, splits: SplitMasks, base_config: TrainConfig,
                 modes: tuple[str, ...] = ("full", "wo_llm", "wo_semantics", "wo_joint"),
                 ) -> dict[str, EvalReport]:
    """Train and evaluate each mode on identical splits and seed."""
    reports = {}
    for mode in modes:
        cfg = replace(base_config, mode=mode)
        ckpt = train(graph, splits, cfg)
        reports[mode] = evaluate(ckpt, graph, splits.test)
        logger.info("mode %s: %s", mode, reports[mode].as_dict())
    return reports


def run_single_view(graph: RelationalGraph, splits: SplitMasks, config: TrainConfig,
                    j: int) -> EvalReport:
    """Train with the template reduced to relation j's pair; evaluate on test."""
    if not 0 <= j < graph.relation_count:
        raise ValueError(f"view index {j} out of range for {graph.relation_count} relations")
    cfg = replace(config, mode="single_view", single_view_index=j)
    ckpt = train(graph, splits, cfg)
    return evaluate(ckpt, graph, splits.test)


def run_seed_sweep(graph: RelationalGraph, config: TrainConfig,
                   seeds: tuple[int, ...]) -> dict:
    """Independent runs across seeds (fresh split and init per seed).

    Returns mean, min and max of each test metric plus the raw per-seed
    values, which is how multi-run results should be reported.
    """
    values: dict[str, list[float]] = {"auc": [], "recall": [], "g_mean": []}
    for seed in seeds:
        cfg = replace(config, seed=int(seed))
        splits = stratified_split(graph, seed=int(seed))
        report = evaluate(train(graph, splits, cfg), graph, splits.test)
        for key in values:
            values[key].append(float(getattr(report, key)))
    return {
        key: {
            "mean": float(np.mean(v)),
            "min": float(np.min(v)),
            "max": float(np.max(v)),
            "values": v,
        }
        for key, v in values.items()
    }
