"""Adam-preconditioned momentum SGD with error-compensated compressed communication.

The optimizer runs original Adam for a short warmup, freezes the second
moment, and from then on exchanges only compressed momentum between simulated
workers through a gather-scatter allreduce with error feedback on both sides.
"""
from .collective import CollectiveState, bits_for_step, compressed_allreduce
from .compression import (
    CompressedChunk,
    CompressorKind,
    CompressorSpec,
    ErrorState,
    compress,
    compress_with_error_feedback,
    decompress,
    deserialize,
    serialize,
    wire_size_bits,
)
from .estimator import APMSqueezeClassifier, APMSqueezeRegressor
from .exceptions import (
    APMSqueezeError,
    ConfigError,
    DecodeError,
    DimensionError,
    DomainError,
    StateError,
)
from .metrics import CSV_COLUMNS, MetricsRecord
from .numerics import ChunkLayout, elementwise_divide, elementwise_sqrt, l2_norm, make_chunk_layout
from .optimizer import (
    OptimizerConfig,
    OptimizerState,
    Phase,
    adam_warmup_step,
    run,
    squeeze_step,
)

__version__ = "0.1.0"
