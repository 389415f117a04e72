"""sugvoxel: forward-only sparse 3D semantic-occupancy inference engine.

Sparse voxel tensors, semantics/uncertainty-guided lifting, hyper-cross
sparse completion with soft pruning, an OCR-based mask decoder, and dense
brute-force oracles plus metrics for verifying all of it at desk scale.
"""

from .completion import (
    CompletionParams,
    DecoderStageParams,
    DepthwiseParams,
    EncoderStageParams,
    MscaParams,
    ProxyOccMap,
    complete,
    decode_stage,
    encode,
    msca_bottleneck,
    proxy_occupancy,
)
from .decoder import (
    OccupancyPrediction,
    OcrState,
    QuerySet,
    compose_occupancy,
    compute_ocr,
    predict_heads,
    query_context_attention,
    update_global_ocr,
)
from .kernels import (
    CUBIC,
    HYPER_CROSS,
    ConvParams,
    GatherCounter,
    KernelSpec,
    generative_transpose_conv,
    hypercross_residual_block,
    kernel_offsets,
    receptive_field,
    soft_prune,
    strided_conv_down,
    submanifold_conv,
)
from .lifting import (
    CameraModel,
    LiftConfig,
    PixelProbMaps,
    cumulative_depth,
    distance_encoding,
    expected_depth,
    lift,
    lift_mask,
    nonempty_prob,
)
from .metrics import MetricsReport, iou_report, loss_metrics
from .oracle import dense_conv3d
from .ovt import read_tensor, write_tensor
from .pipeline import StatsRecord, bench_kernels, run_pipeline, sweep
from .scenes import SceneGrammar, SceneSample, gen_scene, surface_voxel_set
from .tensors import (
    Coord3,
    DenseVoxelTensor,
    SparseVoxelTensor,
    VoxelGridSpec,
    densify,
    sparsify,
)
from .weights import ArchSpec, bundle_hash, init_weights, load_weights, save_weights

__version__ = "0.1.0"
