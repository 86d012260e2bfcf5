"""Composed-image-retrieval fusion engine.

Given precomputed multi-level reference-image embeddings and decomposed
text embeddings, this package performs intent-guided visual selection,
trains a weighted hierarchical combiner under a batch contrastive loss,
and ranks gallery images by cosine similarity.
"""

from .combiner import (
    CombinerCache,
    CombinerParams,
    WhcParams,
    WhcTrace,
    combiner_backward,
    combiner_forward,
    init_combiner,
    init_whc,
    whc_backward,
    whc_forward,
    zero_mlp_combiner,
    zero_mlp_whc,
)
from .core import (
    GalleryEntry,
    InstanceSet,
    PatchSet,
    QuerySample,
    cosine,
    mean_vectors,
    minmax_normalize,
    softmax,
)
from .evaluation import RankedResult, RecallReport, evaluate, rank, recall_at_k
from .manifest import DatasetBundle, load_dataset, load_manifest
from .modelpack import load_model_pack, save_model_pack
from .selection import (
    InstanceAttention,
    PatchAttention,
    ivrs_select,
    ivrs_weights,
    pvrs_select,
    pvrs_weights,
)
from .synth import synth_dataset
from .tensorfile import read_tensor, write_tensor
from .training import (
    ABLATION_GRID,
    AblationVariant,
    AdamState,
    RunConfig,
    TrainLog,
    adam_step,
    batch_loss,
    dataset_mean_loss,
    sum_fusion,
    train,
)

__version__ = "0.1.0"
