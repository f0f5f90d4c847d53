"""Humanoid loco-manipulation planning toolkit with a deterministic 2.5D
simulation harness: occupancy-grid navigation, base-placement optimization,
manipulation primitives, fingertip retargeting, and a pluggable planner."""

__version__ = "0.1.0"

from .brain import (  # noqa: F401
    Abort,
    BrainParams,
    Done,
    Feedback,
    InvokeAgent,
    MemoryBank,
    PlannerState,
    SubTask,
    ViewpointAdjust,
)
from .episode import (  # noqa: F401
    ClearanceGrade,
    EpisodeReport,
    OracleProvider,
    grade_clearance,
    run_episode,
)
from .errors import LocomanipError  # noqa: F401
from .geometry import (  # noqa: F401
    Bounds,
    CameraIntrinsics,
    CameraPose,
    DepthImage,
    GridIndex,
    OccupancyGrid,
    Pose2D,
    Vec3,
    build_grid,
    lift_depth,
    lift_pixel,
)
from .nav import (  # noqa: F401
    BaseCommand,
    BaseLimits,
    NavParams,
    astar,
    plan_navigation,
    rdp_simplify,
    track_step,
)
from .reach import (  # noqa: F401
    OffsetModel,
    ReachAdjustment,
    SolverWeights,
    adjustment_to_commands,
    fit_offset_model,
    object_in_adjusted_frame,
    shoulder_position,
    solve_adjustment,
)
from .manip import (  # noqa: F401
    EEPoseSequence,
    ManipParams,
    Pose6D,
    PrimitiveKind,
    PrimitiveRequest,
    generate_primitive,
    lift_keypoints,
    retarget_fingertips,
    solve_ik,
    trajectory_to_joints,
)
from .scenario import Scenario, generate_scenario  # noqa: F401
from .simulator import Simulator  # noqa: F401
