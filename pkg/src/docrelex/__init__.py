"""Document-level relation extraction with adaptive thresholding and
localized context pooling, built on a self-contained numpy autodiff core."""

from .autodiff import Tensor, backward, grad_check
from .data import (Document, Entity, Mention, RelationLabel, RelationSchema,
                   SyntheticConfig, collect_facts, default_schema,
                   generate_synthetic_corpus, load_corpus, save_corpus)
from .encoder import EncoderConfig, TransformerEncoder, Vocabulary, insert_markers
from .head import TH_INDEX, RelationHead, group_bilinear, group_bilinear_logit
from .metrics import (PredictionRecord, bucket_by_entity_count, evaluate_f1,
                      evaluate_ign_f1)
from .model import ModelSettings, RelationExtractionModel
from .objective import (LabelSets, ScoredPair, ThresholdConfig,
                        adaptive_threshold_loss, bce_loss, decide_adaptive,
                        decide_global, decide_per_class, tune_global_threshold,
                        tune_per_class_thresholds)
from .training import AdamW, Checkpoint, TrainConfig, evaluate, predict, train

__version__ = "0.1.0"
