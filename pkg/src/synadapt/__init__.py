"""Contextual synonym injection for frozen transformer encoders.

A frozen randomly-initialized (or checkpointed) transformer backbone is
augmented with trainable entity-masked adapters, pre-trained with a
hard-negative-reweighted contrastive objective over context-marked
synonym instances. The package also ships the corpus construction
pipeline and a similarity-oriented evaluation harness (top-k retrieval,
agglomerative canonicalization, context-ambiguity probe).
"""

from .corpus import (CorpusStats, Instance, Synset, balance_low_frequency,
                     compute_stats, filter_pairs, levenshtein, make_batches,
                     mark_entity)
from .loss import BatchEmbeddings, LossConfig, contrastive_loss, positives_of
from .model import (Aggregator, Backbone, EncoderBundle, EntityAwareAdapter,
                    ModelConfig, adapter_forward, aggregate_feature_extractor,
                    aggregate_finetune, aggregate_pretrain, compose_adapters,
                    entity_mask, masked_attention)
from .synthetic import SyntheticSpec, generate_synthetic_corpus
from .tensor import (Parameter, l2_normalize_rows, layer_norm, matmul,
                     softmax_rows)
from .trainer import TrainConfig, TrainReport, continual_train, train_adapter
from .vocab import Vocabulary, tokenize

__version__ = "0.1.0"

__all__ = [
    "Aggregator", "Backbone", "BatchEmbeddings", "CorpusStats",
    "EncoderBundle", "EntityAwareAdapter", "Instance", "LossConfig",
    "ModelConfig", "Parameter", "Synset", "SyntheticSpec", "TrainConfig",
    "TrainReport", "Vocabulary", "adapter_forward",
    "aggregate_feature_extractor", "aggregate_finetune", "aggregate_pretrain",
    "balance_low_frequency", "compose_adapters", "compute_stats",
    "continual_train", "contrastive_loss", "entity_mask", "filter_pairs",
    "generate_synthetic_corpus", "l2_normalize_rows", "layer_norm",
    "levenshtein", "make_batches", "mark_entity", "masked_attention", "matmul",
    "positives_of", "softmax_rows", "tokenize", "train_adapter",
]
