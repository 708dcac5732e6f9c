"""Multi-model 3D registration.

Segment point correspondences into rigidly moving objects and estimate each
object's motion with an EM solver, compare against Naive / Sequential RANSAC /
T-Linkage baselines, and score results with IoU, per-point, rotation and
translation errors.
"""
from .errors import (
    CoverageError,
    DegenerateInput,
    EmptySet,
    MultiRegError,
    NoClusters,
    NoValidCluster,
    ParseError,
    TargetUnreachable,
)
from .geometry import (
    OUTLIER,
    CorrespondenceSet,
    RigidTransform,
    angular_distance,
    compact_labels,
    residual,
    residuals,
)
from .horn import fit_pose
from .estimate import Hypothesis, MultiModelEstimate
from .em import EmParams, e_step, m_step, solve_em
from .baselines import (
    SransacParams,
    TlinkageParams,
    preference,
    solve_naive,
    solve_sransac,
    solve_tlinkage,
    tanimoto_distance,
)
from .clustering import euclidean_clusters, load_labels
from .metrics import MetricsReport, chamfer, evaluate, iou, match_clusters, per_point_error, pose_errors
from .scenegen import ObjectSpec, SceneSpec, experiment_spec, generate_scene
from .io import load_correspondences, load_point_cloud, save_correspondences

__version__ = "0.1.0"
