"""Query-budgeted image object retrieval: keypoint ranking, kNN indexing, match expansion and MAP evaluation."""
from .core import (
    BINARY,
    REAL,
    BoundingBox,
    Correspondence,
    DataError,
    ImageRecord,
    Keypoint,
    QuerySpec,
    UsageError,
    angle_difference,
    euclidean_distance,
    hamming_distance,
    normalize_angle,
)
from .expansion import CompressedStore, ExpansionParams, compress_store, expand_match, expand_recursive
from .mih import MihIndex, build_mih
from .pipeline import Engine, run_query
from .pq import CodebookSet, IvfPqIndex, train_codebooks
from .ranking import rank
from .scoring import average_precision, mean_average_precision, score_correspondence

__version__ = "0.1.0"
