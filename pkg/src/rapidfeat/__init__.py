"""Range-aware pointwise distance distribution features for LiDAR clouds."""

from .cloud import PointCloud, SensorGeometry
from .errors import (
    ContractError,
    EmptySceneError,
    FormatError,
    InsufficientPointsError,
    LabelMismatchError,
    LabelsRequiredError,
    MalformedScanError,
    RapidError,
    UndefinedAngleError,
    UndefinedMetricError,
)
from .geometry import (
    NeighborList,
    RigidTransform,
    apply_transform,
    euclidean_metric,
    knn_brute,
    knn_indexed,
    range_of,
)
from .rapid import (
    RangeAwareConfig,
    RapidMatrix,
    ReflectivityScale,
    compute_scale,
    rapid,
    rapid_unnormalized,
    reflectivity_map,
    reflectivity_metric,
    rho,
    select_k,
)
from .partition import (
    ClassPartition,
    PointwiseFeatureSet,
    RingPartition,
    c_rapid,
    cylindrical_bin,
    cylindrical_bins,
    partition_classes,
    partition_rings,
    r_rapid,
)
from .scene_io import (
    BoxPrimitive,
    CylinderPrimitive,
    PlanePrimitive,
    SyntheticSceneSpec,
    load_csv_cloud,
    load_features,
    load_kitti_labels,
    load_kitti_scan,
    save_features,
    save_kitti_labels,
    save_kitti_scan,
    synthesize_scene,
)
from .embed import (
    EmbeddingDims,
    EmbeddingForward,
    VoxelGroups,
    WeightSet,
    autoencoder_forward,
    contrastive_loss,
    inner_bottleneck,
    reconstruction_loss,
    scatter_softmax,
    scatter_sum,
    seeded_latents,
    total_loss,
    voxelize,
    vsa_decode,
    vsa_encode,
)
from .fusion import concat_embeddings, excite, fuse, gate_weights, squeeze
from .metrics import ConfusionMatrix, accumulate, iou, miou
from .config import RunConfig

__version__ = "0.1.0"

__all__ = [
    "PointCloud",
    "SensorGeometry",
    "RapidError",
    "MalformedScanError",
    "LabelMismatchError",
    "LabelsRequiredError",
    "EmptySceneError",
    "InsufficientPointsError",
    "UndefinedAngleError",
    "FormatError",
    "ContractError",
    "UndefinedMetricError",
    "RigidTransform",
    "NeighborList",
    "apply_transform",
    "range_of",
    "euclidean_metric",
    "knn_brute",
    "knn_indexed",
    "RangeAwareConfig",
    "ReflectivityScale",
    "RapidMatrix",
    "reflectivity_map",
    "reflectivity_metric",
    "rho",
    "compute_scale",
    "rapid",
    "rapid_unnormalized",
    "select_k",
    "RingPartition",
    "ClassPartition",
    "PointwiseFeatureSet",
    "cylindrical_bin",
    "cylindrical_bins",
    "partition_rings",
    "partition_classes",
    "r_rapid",
    "c_rapid",
    "PlanePrimitive",
    "BoxPrimitive",
    "CylinderPrimitive",
    "SyntheticSceneSpec",
    "synthesize_scene",
    "load_csv_cloud",
    "load_kitti_scan",
    "load_kitti_labels",
    "save_kitti_scan",
    "save_kitti_labels",
    "save_features",
    "load_features",
    "EmbeddingDims",
    "EmbeddingForward",
    "VoxelGroups",
    "WeightSet",
    "autoencoder_forward",
    "voxelize",
    "scatter_softmax",
    "scatter_sum",
    "vsa_encode",
    "inner_bottleneck",
    "vsa_decode",
    "contrastive_loss",
    "reconstruction_loss",
    "total_loss",
    "seeded_latents",
    "concat_embeddings",
    "squeeze",
    "excite",
    "fuse",
    "gate_weights",
    "ConfusionMatrix",
    "accumulate",
    "iou",
    "miou",
    "RunConfig",
]
