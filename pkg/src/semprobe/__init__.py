"""Numerical toolkit for probing frozen vision features, matching region
proposals against reference prototypes, and COCO-style evaluation."""

__version__ = "0.1.0"

from .cocoeval import EvalConfig, EvalResult, evaluate, split_report
from .errors import (
    FormatError,
    InputError,
    SemprobeError,
    ShapeError,
    StorageError,
    ValidationError,
)
from .matcher import (
    Detection,
    DenseFeatureMap,
    Proposal,
    Prototype,
    PrototypeMatcher,
    Reference,
    build_prototypes,
    cosine_similarity,
    dedup,
    grid_points,
    match_proposals,
    pool_region_feature,
)
from .probe import LinearProbe, TrainConfig, adamw_step, cross_entropy, forward, gradient, softmax, topk_accuracy, train
from .rle import RleMask, box_iou, mask_iou, rle_decode, rle_encode, rle_to_bbox
from .store import (
    AnnotationSet,
    FeatureMatrix,
    LabelVector,
    load_annotations,
    load_checkpoint,
    load_detections,
    load_proposals,
    read_tensor,
    save_annotations,
    save_checkpoint,
    save_detections,
    write_tensor,
)
from .synthetic import BlobSpec, PlantedSceneSpec, gen_blobs, gen_planted_scene, oracle_match_ap, oracle_nms
from .tsne import Embedding2D, ExactTSNE, TsneConfig, calibrate_affinities, silhouette, svg_scatter, tsne
