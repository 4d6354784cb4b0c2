"""Event-camera perception and collision avoidance with a synthetic test bed.

Stages: background-activity filtering, count-based adaptive slicing,
randomized plane-voting object detection, low-complexity corner scoring,
two-view corner triangulation, and impact-time-prioritized avoidance.
"""

from .avoidance import (
    AvoidanceConfig,
    AvoidanceDecision,
    ObstacleTrack,
    VehicleState,
    assign_priorities,
    compute_poi,
    decide,
    gap_between,
    object_kinematics,
    short_term_plan,
    vehicle_travel,
)
from .corners import BinaryPatch, Corner, CornerParams, build_patch, detect_corner, eharris_score, lc_score
from .events import (
    EVENT_DTYPE,
    NEVER,
    OFF,
    ON,
    CameraPose,
    Event,
    SensorGeometry,
    TimestampSurface,
    surface_update,
)
from .eventio import read_events, write_events
from .filtering import FilterParams, filter_event, filter_stream
from .hough import (
    DetectedObject,
    HoughConfig,
    PlaneHypothesis,
    detect_planes,
    extract_objects,
    plane_from_triple,
)
from .metrics import MetricsReport, PipelineOutputs, evaluate
from .pipeline import ClosedLoopRunner, PipelineConfig, PipelineEngine, run_pipeline
from .render import render_event_frame
from .simulate import GroundTruth, ObjectSpec, SceneSpec, generate, load_scenario
from .slicing import EventSlice, SlicePolicy, Slicer, adapt, slice_stream
from .triangulate import FeatureObservation, TriangulatedPoint, match_corners, object_distance, triangulate

__version__ = "0.1.0"
