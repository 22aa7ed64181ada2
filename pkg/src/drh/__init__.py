"""Instance search over bit-packed region hash codes.

Feature maps come in through the DRHF interchange format, get carved into
multi-scale sliding-window regions, max-pooled per region, and projected
to binary codes by a learned sigmoid hashing layer. Queries run a global
Hamming scan, optional global expansion, local re-ranking, and optional
local expansion, all in Hamming space.
"""

__version__ = "0.1.0"

from .errors import (
    DataError,
    DimensionMismatch,
    DivergenceDetected,
    DrhError,
    DuplicateImageId,
    EmptyPositives,
    EmptyProjection,
    EmptyTrainingSet,
    ExpansionDepthExceedsList,
    IoFailure,
    LengthMismatch,
    MalformedHeader,
    MalformedQueryFile,
    MissingQueryResult,
    NonFiniteValue,
    NumericError,
    VersionMismatch,
)
from .evalkit import QueryGroundTruth, average_precision, mean_average_precision, parse_ground_truth
from .featmap import FeatureMap, read_feature_map, write_feature_map
from .hashnet import (
    HashCode,
    HashLayerParams,
    TrainConfig,
    TrainResult,
    binarize,
    encode,
    forward,
    gradients,
    load_params,
    loss,
    save_params,
    train,
)
from .index import (
    HashIndex,
    IndexRecord,
    build_index,
    hamming,
    load_index,
    save_index,
    scan_global,
)
from .pipeline import (
    RankedEntry,
    RankedList,
    SearchConfig,
    SearchResult,
    gdrh,
    gqe,
    ldrh,
    lqe,
    search,
    similarity,
)
from .pooling import roi_max_pool
from .regions import RegionBox, SlidingWindowConfig, project_bbox, propose_regions, window_scales

__all__ = [
    "FeatureMap",
    "HashCode",
    "HashIndex",
    "HashLayerParams",
    "IndexRecord",
    "QueryGroundTruth",
    "RankedEntry",
    "RankedList",
    "RegionBox",
    "SearchConfig",
    "SearchResult",
    "SlidingWindowConfig",
    "TrainConfig",
    "TrainResult",
    "average_precision",
    "binarize",
    "build_index",
    "encode",
    "forward",
    "gdrh",
    "gqe",
    "gradients",
    "hamming",
    "ldrh",
    "load_index",
    "load_params",
    "loss",
    "lqe",
    "mean_average_precision",
    "parse_ground_truth",
    "project_bbox",
    "propose_regions",
    "read_feature_map",
    "roi_max_pool",
    "save_index",
    "save_params",
    "scan_global",
    "search",
    "similarity",
    "train",
    "window_scales",
    "write_feature_map",
]
