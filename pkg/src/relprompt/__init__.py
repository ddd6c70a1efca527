"""Multi-relational graph soft prompts for fraud scoring with a small causal LM."""

from .backbone import CausalLM, DecoderConfig, LoRALinear, Vocabulary, lora_trainable
from .checkpoint import Checkpoint
from .dataio import (
    DatasetManifest,
    SynthSpec,
    TransactionTable,
    build_temporal_edges,
    load_dataset,
    load_manifest,
    save_dataset,
    synth_fraud_graph,
)
from .encoder import (
    EncoderConfig,
    ParallelSageEncoder,
    RelationSage,
    encode_all,
    mean_aggregate,
    sage_layer,
)
from .harness import (
    Pipeline,
    TrainConfig,
    build_views,
    evaluate,
    node_scores,
    pipeline_from_checkpoint,
    run_ablation,
    run_seed_sweep,
    run_single_view,
    train,
)
from .objective import (
    EvalReport,
    NodeScore,
    TargetSequences,
    anomaly_score,
    auc_score,
    compute_metrics,
    predict,
    sequence_logprob,
    training_loss,
)
from .prompt import (
    AssembledPrompt,
    FlattenedPrompt,
    PromptTemplate,
    assemble_template,
    flatten_features,
    inject_structure,
    load_template,
    save_template,
    template_for_graph,
)
from .relgraph import (
    LABEL_FRAUD,
    LABEL_NORMAL,
    LABEL_UNLABELED,
    Relation,
    RelationalGraph,
    SplitMasks,
    SubgraphView,
    add_self_loops,
    partition_relations,
    stratified_split,
)

__all__ = [
    "AssembledPrompt",
    "CausalLM",
    "Checkpoint",
    "DatasetManifest",
    "DecoderConfig",
    "EncoderConfig",
    "EvalReport",
    "FlattenedPrompt",
    "LABEL_FRAUD",
    "LABEL_NORMAL",
    "LABEL_UNLABELED",
    "LoRALinear",
    "NodeScore",
    "ParallelSageEncoder",
    "Pipeline",
    "PromptTemplate",
    "Relation",
    "RelationSage",
    "RelationalGraph",
    "SplitMasks",
    "SubgraphView",
    "SynthSpec",
    "TargetSequences",
    "TrainConfig",
    "TransactionTable",
    "Vocabulary",
    "add_self_loops",
    "anomaly_score",
    "assemble_template",
    "auc_score",
    "build_temporal_edges",
    "build_views",
    "compute_metrics",
    "encode_all",
    "evaluate",
    "flatten_features",
    "inject_structure",
    "load_dataset",
    "load_manifest",
    "load_template",
    "lora_trainable",
    "mean_aggregate",
    "node_scores",
    "partition_relations",
    "pipeline_from_checkpoint",
    "predict",
    "run_ablation",
    "run_seed_sweep",
    "run_single_view",
    "sage_layer",
    "save_dataset",
    "save_template",
    "sequence_logprob",
    "stratified_split",
    "synth_fraud_graph",
    "template_for_graph",
    "train",
    "training_loss",
]
