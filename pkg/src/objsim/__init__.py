"""Object-centric image similarity: foreground feature averaging plus
retrieval, clustering, oddity and re-identification evaluation harnesses."""

__version__ = "0.1.0"

from .catalog import Catalog, ImageRef, Studio, Wild, load_catalog, load_manifest, preprocess
from .clustering import adjusted_rand_index, kmeans
from .features import (
    Embedding,
    EmbeddingSource,
    PatchMask,
    SimilarityKind,
    SimilarityMatrix,
    cosine,
    downsample_mask,
    ffa_crop_feat,
    ffa_crop_img,
    global_embed,
    pairwise_similarity,
)
from .fusion import ReidRecord, ReidSet, alpha_sweep, cmc_topk, cosine_to_distance, fuse
from .inference import (
    BackboneEngine,
    BackboneSpec,
    ForegroundMask,
    PatchFeatureGrid,
    SegmentationEngine,
    embed,
    segment,
)
from .protocol import (
    EvalGroup,
    Protocol,
    average_precision,
    build_groups,
    oddity,
    retrieval_eval,
)
from .ssim import ssim

__all__ = [
    "BackboneEngine",
    "BackboneSpec",
    "Catalog",
    "Embedding",
    "EmbeddingSource",
    "EvalGroup",
    "ForegroundMask",
    "ImageRef",
    "PatchFeatureGrid",
    "PatchMask",
    "Protocol",
    "ReidRecord",
    "ReidSet",
    "SegmentationEngine",
    "SimilarityKind",
    "SimilarityMatrix",
    "Studio",
    "Wild",
    "adjusted_rand_index",
    "alpha_sweep",
    "average_precision",
    "build_groups",
    "cmc_topk",
    "cosine",
    "cosine_to_distance",
    "downsample_mask",
    "embed",
    "ffa_crop_feat",
    "ffa_crop_img",
    "fuse",
    "global_embed",
    "kmeans",
    "load_catalog",
    "load_manifest",
    "oddity",
    "pairwise_similarity",
    "preprocess",
    "retrieval_eval",
    "segment",
    "ssim",
]
