"""Point-cloud toolkit for 3D hand reconstruction.

Provides reconstruction distances (Chamfer, Earth Mover's, combined
local/global), decoder template initializations, segmentation transfer,
multi-view depth fusion, pose metrics, and a desk-scale folding decoder
with a manual-gradient ADAM trainer. See the `handcloud` CLI for the
command-line surface.
"""

from .geometry import (
    CameraModel,
    ComponentId,
    HandPose,
    KdTree,
    PointCloud,
    RigidTransform,
    build_index,
    k_nearest,
    transform,
)
from .metrics import (
    Assignment,
    LossBreakdown,
    PckCurve,
    auc,
    chamfer_distance,
    combined_loss,
    earth_movers_distance,
    mpjpe,
    pck_curve,
    solve_assignment,
    surface_project,
)

__version__ = "0.1.0"
