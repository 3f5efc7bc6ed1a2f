"""pointreg: point-set registration toolkit.

Classical rigid/non-rigid registration (center alignment, ICP, coherent
point drift) and an unsupervised learned non-rigid method built on a
small self-contained autodiff core, plus synthetic data generation,
augmentation, sparse-visibility simulation, and a benchmark harness.
"""

from .bench import (
    METHOD_ORDER,
    Case,
    CaseFailure,
    Dataset,
    DatasetGenConfig,
    RegistrationReport,
    benchmark_run,
    evaluate_files,
    finetune_pairs,
    generate_dataset,
    load_dataset,
    run_method,
    synth_training_corpus,
    write_benchmark_outputs,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .classical import (
    CpdConfig,
    CpdResult,
    IcpConfig,
    IcpResult,
    center_align,
    cpd_nonrigid_register,
    icp_register,
)
from .errors import (
    CheckpointError,
    CheckpointShapeError,
    CheckpointVersionError,
    CorruptCheckpointError,
    DataError,
    DegenerateGeometryError,
    DimensionError,
    EmptyInputError,
    InvalidRotationError,
    MeshParseError,
    NumericalError,
    PairingError,
    ParameterError,
    PointFileError,
    PointregError,
    SolveError,
    TrainingDivergedError,
    UnitMismatchError,
    UsageError,
    VisibilityError,
)
from .fptnet import (
    FptArchitecture,
    FptParameters,
    displace_points,
    extract_features,
    fpt_forward,
    global_feature,
    registration_shift,
)
from .geometry import (
    LandmarkPairs,
    PointSet,
    RigidTransform,
    TpsField,
    apply_rigid,
    apply_tps,
    chamfer_distance,
    chamfer_squared,
    fit_tps,
    hausdorff_distance,
    rotation_from_euler,
    target_registration_error,
    tps_control_grid,
)
from .kdtree import NeighborIndex
from .mesh import TriangleMesh, load_off_mesh, sample_surface
from .pipeline import (
    AugmentConfig,
    AugmentRecord,
    DatasetSplit,
    NormalizationRecord,
    SparseSliceConfig,
    augment_pair,
    biplane_sparse,
    normalize_to_unit_box,
    split_dataset,
)
from .pointio import (
    read_landmarks,
    read_points,
    read_xyz,
    write_points,
    write_xyz,
)
from .shapes import SHAPE_FAMILIES, synth_blob, synth_ellipsoid, synth_shape
from .tensor import Tensor, no_grad
from .training import TrainConfig, TrainResult, pair_loss, train

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # core containers
    "Tensor",
    "no_grad",
    "PointSet",
    "LandmarkPairs",
    "RigidTransform",
    "TpsField",
    "NeighborIndex",
    "TriangleMesh",
    # metrics / geometry
    "chamfer_distance",
    "chamfer_squared",
    "hausdorff_distance",
    "target_registration_error",
    "rotation_from_euler",
    "apply_rigid",
    "fit_tps",
    "apply_tps",
    "tps_control_grid",
    # classical registration
    "center_align",
    "IcpConfig",
    "IcpResult",
    "icp_register",
    "CpdConfig",
    "CpdResult",
    "cpd_nonrigid_register",
    # learned registration
    "FptArchitecture",
    "FptParameters",
    "extract_features",
    "global_feature",
    "displace_points",
    "fpt_forward",
    "registration_shift",
    "TrainConfig",
    "TrainResult",
    "train",
    "pair_loss",
    "save_checkpoint",
    "load_checkpoint",
    # data pipeline
    "load_off_mesh",
    "sample_surface",
    "SHAPE_FAMILIES",
    "synth_ellipsoid",
    "synth_blob",
    "synth_shape",
    "normalize_to_unit_box",
    "NormalizationRecord",
    "AugmentConfig",
    "AugmentRecord",
    "augment_pair",
    "SparseSliceConfig",
    "biplane_sparse",
    "DatasetSplit",
    "split_dataset",
    "read_points",
    "write_points",
    "read_xyz",
    "write_xyz",
    "read_landmarks",
    # benchmark harness
    "METHOD_ORDER",
    "DatasetGenConfig",
    "generate_dataset",
    "Dataset",
    "Case",
    "load_dataset",
    "synth_training_corpus",
    "finetune_pairs",
    "RegistrationReport",
    "CaseFailure",
    "run_method",
    "benchmark_run",
    "write_benchmark_outputs",
    "evaluate_files",
    # errors
    "PointregError",
    "UsageError",
    "DataError",
    "EmptyInputError",
    "DimensionError",
    "UnitMismatchError",
    "PairingError",
    "MeshParseError",
    "PointFileError",
    "VisibilityError",
    "ParameterError",
    "CheckpointError",
    "CorruptCheckpointError",
    "CheckpointVersionError",
    "CheckpointShapeError",
    "NumericalError",
    "InvalidRotationError",
    "DegenerateGeometryError",
    "SolveError",
    "TrainingDivergedError",
]
