"""Stage composition: filter -> slice -> detect -> corners -> depth -> avoid.

The engine consumes an ordered event stream (all at once or in incremental
batches) and fires one processing cycle per filled slice. Enabled stages
must form a prefix of the pipeline order, since each stage feeds the next.
A closed-loop runner couples the engine back to the scene simulator so
avoidance plans actually steer the vehicle.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .avoidance import (
    AvoidanceConfig,
    AvoidanceDecision,
    TrackManager,
    VehicleState,
    plan_decision,
)
from .corners import Corner, CornerParams, detect_corner
from .errors import (
    BehindCameraError,
    DegenerateGeometryError,
    InfeasiblePlanError,
    InsufficientDataError,
)
from .events import CameraPose, Event, SensorGeometry, TimestampSurface
from .filtering import FilterParams, filter_mask
from .hough import DetectedObject, HoughConfig, detect_objects
from .metrics import ObjectRecord, PipelineOutputs, PoiRecord, RangeRecord
from .simulate import SceneSimulator, SceneSpec
from .slicing import EventSlice, SlicePolicy, Slicer
from .triangulate import FeatureObservation, match_corners, object_distance, triangulate

STAGE_ORDER = ("filter", "slice", "detect", "corners", "depth", "avoid")


@dataclass(frozen=True)
class DepthParams:
    stride_s: float = 0.45  # time gap between the two corner views
    max_pixel_dist: float = 14.0
    max_dt_us: int = 700_000
    min_ray_angle_deg: float = 0.5


@dataclass(frozen=True)
class TrackingParams:
    gate_px: float = 20.0
    retire_after: int = 3
    min_kinematics_dt_s: float = 0.0  # range-pair spacing for velocity estimates


@dataclass(frozen=True)
class PipelineConfig:
    stages: tuple[str, ...] = STAGE_ORDER
    filter_params: FilterParams = field(default_factory=FilterParams)
    slice_policy: SlicePolicy = field(default_factory=SlicePolicy)
    adaptive_slicing: bool = True  # needs the detect stage for feedback
    hough: HoughConfig = field(default_factory=HoughConfig)
    corners: CornerParams = field(default_factory=CornerParams)
    depth: DepthParams = field(default_factory=DepthParams)
    tracking: TrackingParams = field(default_factory=TrackingParams)
    avoidance: AvoidanceConfig = field(default_factory=AvoidanceConfig)
    geometry: SensorGeometry = field(default_factory=SensorGeometry)
    seed: int = 0

    def __post_init__(self):
        order = [s for s in STAGE_ORDER if s in self.stages]
        if list(self.stages) != order or len(set(self.stages)) != len(self.stages):
            raise ValueError(f"stages must follow the order {STAGE_ORDER}, got {self.stages}")
        # Dataflow dependencies. The user-facing pipeline runs prefixes; stage
        # subcommands run suffix chains on a pre-filtered stream.
        deps = {"detect": ["slice"], "corners": ["slice"], "depth": ["detect", "corners"], "avoid": ["depth"]}
        for stage in self.stages:
            for needed in deps.get(stage, []):
                if needed not in self.stages:
                    raise ValueError(f"stage {stage!r} requires {needed!r}")

    def has(self, stage: str) -> bool:
        return stage in self.stages


def config_from_overrides(
    overrides: dict,
    stages: tuple[str, ...] = STAGE_ORDER,
    geometry: SensorGeometry | None = None,
    seed: int = 0,
) -> PipelineConfig:
    """PipelineConfig from a scenario's frozen per-stage overrides."""
    slicing = dict(overrides.get("slicing", {}))
    adaptive = bool(slicing.pop("adaptive", True))
    if "n_current" in slicing and "n_default" not in slicing:
        slicing["n_default"] = slicing["n_current"]
    return PipelineConfig(
        stages=stages,
        filter_params=FilterParams(**overrides.get("filter", {})),
        slice_policy=SlicePolicy(**slicing),
        adaptive_slicing=adaptive,
        hough=HoughConfig(**overrides.get("hough", {})),
        corners=CornerParams(**overrides.get("corners", {})),
        depth=DepthParams(**overrides.get("depth", {})),
        tracking=TrackingParams(**overrides.get("tracking", {})),
        avoidance=AvoidanceConfig(**overrides.get("avoidance", {})),
        geometry=geometry or SensorGeometry(),
        seed=seed,
    )


class PoseTrack:
    """Pose/vehicle lookup over a sampled trajectory (linear translation
    interpolation, nearest-sample rotation)."""

    def __init__(self, poses: list[tuple[int, CameraPose]]):
        if not poses:
            raise ValueError("pose track needs at least one sample")
        self.t_us = np.array([p[0] for p in poses], dtype=np.int64)
        self.poses = [p[1] for p in poses]
        self.centers = np.stack([p.center() for p in self.poses])

    def _center_at(self, t_us: int) -> np.ndarray:
        return np.array(
            [np.interp(t_us, self.t_us, self.centers[:, k]) for k in range(3)]
        )

    def pose_at(self, t_us: int) -> CameraPose:
        i = int(np.searchsorted(self.t_us, t_us))
        if i <= 0:
            nearest = 0
        elif i >= len(self.poses):
            nearest = len(self.poses) - 1
        else:
            nearest = i if self.t_us[i] - t_us < t_us - self.t_us[i - 1] else i - 1
        rot = self.poses[nearest].rotation
        return CameraPose(rot, -rot @ self._center_at(t_us))

    def vehicle_at(self, t_us: int) -> VehicleState:
        center = self._center_at(t_us)
        if len(self.t_us) > 1:
            i = min(max(int(np.searchsorted(self.t_us, t_us)), 1), len(self.t_us) - 1)
            dt = (self.t_us[i] - self.t_us[i - 1]) * 1e-6
            v = (self.centers[i, 2] - self.centers[i - 1, 2]) / dt if dt > 0 else 0.0
        else:
            v = 0.0
        return VehicleState(v=max(0.0, float(v)), lateral_offset=float(center[0]), t_us=t_us)


@dataclass
class CycleResult:
    slice_index: int
    t_mid_us: int
    slice_: EventSlice
    objects: list[DetectedObject]
    corners: list[Corner]
    ranges: dict[int, float]
    decision: AvoidanceDecision | None


class PipelineEngine:
    """Streaming pipeline; feed event batches, collect one cycle per slice."""

    def __init__(self, config: PipelineConfig, pose_track=None):
        if (config.has("depth") or config.has("avoid")) and pose_track is None:
            raise ValueError("depth/avoid stages need a pose track")
        self.config = config
        self.pose_track = pose_track
        g = config.geometry
        self._filter_surface = TimestampSurface(g.width, g.height)
        self.slicer = Slicer(config.slice_policy)
        self.corner_surface = TimestampSurface(g.width, g.height)
        # Second surface only in per-polarity mode (ON events go to the main one).
        self.corner_surface_off = (
            TimestampSurface(g.width, g.height) if config.corners.per_polarity else None
        )
        self._pending_corners: list[Corner] = []
        self._corner_history: list[tuple[int, list[Corner]]] = []
        self.tracks = TrackManager(
            config.tracking.gate_px,
            config.tracking.retire_after,
            int(config.tracking.min_kinematics_dt_s * 1e6),
        )
        self.outputs = PipelineOutputs(seed=config.seed)
        self.cycles: list[CycleResult] = []
        self._kept_flags: list[np.ndarray] = []
        self._prev_top_centroid: tuple[float, float] | None = None
        self.on_slice = None  # optional callback(CycleResult)

    # -- feeding -----------------------------------------------------------

    def process(self, events: np.ndarray) -> list[CycleResult]:
        """Feed an ordered batch; returns the cycles it completed."""
        if len(events) == 0:
            return []
        if self.config.has("filter"):
            mask = filter_mask(
                events, self.config.filter_params, surface=self._filter_surface
            )
            self._kept_flags.append(mask)
            kept = events[mask]
        else:
            kept = events
        if not self.config.has("slice"):
            return []
        completed = []
        want_corners = self.config.has("corners")
        for t, x, y, p in zip(kept["t"], kept["x"], kept["y"], kept["p"]):
            e = Event(int(t), int(x), int(y), int(p))
            if want_corners:
                surface = self.corner_surface
                if self.corner_surface_off is not None and e.p == 0:
                    surface = self.corner_surface_off
                surface.update(e)
                c = detect_corner(e, surface, self.config.corners)
                if c is not None:
                    self._pending_corners.append(c)
            s = self.slicer.push(e)
            if s is not None:
                completed.append(self._handle_slice(s))
        return completed

    def finish(self) -> list[CycleResult]:
        """Flush the partial final slice and seal the outputs."""
        completed = []
        tail = self.slicer.flush()
        if tail is not None:
            completed.append(self._handle_slice(tail))
        if self._pending_corners:
            self.outputs.corners.extend(self._pending_corners)
            self._pending_corners = []
        if self.config.has("filter") and self._kept_flags:
            self.outputs.kept_mask = np.concatenate(self._kept_flags)
        elif self.config.has("filter"):
            self.outputs.kept_mask = np.zeros(0, dtype=bool)
        return completed

    # -- cycle handling ----------------------------------------------------

    def _handle_slice(self, s: EventSlice) -> CycleResult:
        t_mid = (s.t_start + s.t_end) // 2
        objects: list[DetectedObject] = []
        if self.config.has("detect"):
            try:
                objects = detect_objects(s, self.config.hough, self.config.seed + s.slice_index)
            except InsufficientDataError:
                objects = []
            self._adapt_slicing(objects)

        slice_corners = self._pending_corners
        self._pending_corners = []
        self.outputs.corners.extend(slice_corners)

        ranges: dict[int, float] = {}
        if self.config.has("depth") and objects and slice_corners:
            ranges = self._estimate_ranges(t_mid, slice_corners, objects)
        if self.config.has("corners"):
            self._corner_history.append((t_mid, slice_corners))
            horizon = int(3 * self.config.depth.stride_s * 1e6) + 2 * self.config.depth.max_dt_us
            self._corner_history = [
                (t, cs) for t, cs in self._corner_history if t_mid - t <= horizon
            ]

        decision = None
        if self.config.has("avoid"):
            decision = self._avoid_cycle(t_mid, objects, ranges)

        for obj in objects:
            self.outputs.detections.append(
                ObjectRecord(
                    slice_index=s.slice_index,
                    t_mid_us=t_mid,
                    object_id=obj.id,
                    bbox=obj.bbox,
                    centroid=obj.centroid,
                    edges=obj.edges,
                    votes=obj.plane.votes,
                )
            )
        for obj in objects:
            if obj.id in ranges:
                self.outputs.ranges.append(
                    RangeRecord(t_us=t_mid, bbox=obj.bbox, rho=ranges[obj.id])
                )

        result = CycleResult(
            slice_index=s.slice_index,
            t_mid_us=t_mid,
            slice_=s,
            objects=objects,
            corners=slice_corners,
            ranges=ranges,
            decision=decision,
        )
        self.cycles.append(result)
        if self.on_slice is not None:
            self.on_slice(result)
        return result

    def _adapt_slicing(self, objects: list[DetectedObject]) -> None:
        if not self.config.adaptive_slicing:
            return
        if not objects:
            self.slicer.relax()
            self._prev_top_centroid = None
            return
        top = objects[0]
        if self._prev_top_centroid is not None:
            dx = top.centroid[0] - self._prev_top_centroid[0]
            dy = top.centroid[1] - self._prev_top_centroid[1]
            self.slicer.adapt(math.hypot(dx, dy))
        self._prev_top_centroid = top.centroid

    def _estimate_ranges(
        self, t_mid: int, slice_corners: list[Corner], objects: list[DetectedObject]
    ) -> dict[int, float]:
        stride_us = int(self.config.depth.stride_s * 1e6)
        older = [(t, cs) for t, cs in self._corner_history if t_mid - t >= stride_us and cs]
        if not older:
            return {}
        t_old, old_corners = older[-1]  # closest history entry at or past the stride
        pairs = match_corners(
            slice_corners,
            old_corners,
            self.config.depth.max_pixel_dist,
            self.config.depth.max_dt_us,
        )
        if not pairs:
            return {}
        g = self.config.geometry
        min_angle = math.radians(self.config.depth.min_ray_angle_deg)
        points = []
        pixels = []
        for ca, cb in pairs:
            obs_a = FeatureObservation(
                pixel=(float(ca.x), float(ca.y)),
                pose=self.pose_track.pose_at(ca.t),
                geometry=g,
                t=ca.t,
            )
            obs_b = FeatureObservation(
                pixel=(float(cb.x), float(cb.y)),
                pose=self.pose_track.pose_at(cb.t),
                geometry=g,
                t=cb.t,
            )
            try:
                tp = triangulate(obs_a, obs_b, min_angle)
            except (DegenerateGeometryError, BehindCameraError):
                continue
            points.append(tp)
            pixels.append((float(ca.x), float(ca.y)))
        if not points:
            return {}
        return object_distance(objects, points, pixels)

    def _avoid_cycle(
        self, t_mid: int, objects: list[DetectedObject], ranges: dict[int, float]
    ) -> AvoidanceDecision:
        vehicle = self.pose_track.vehicle_at(t_mid)
        g = self.config.geometry
        detections = []
        for obj in objects:
            rho = ranges.get(obj.id)
            edges_m = None
            if rho is not None:
                left = (obj.edges[0] - 0.5 - g.cx) * rho / g.fx + vehicle.lateral_offset
                right = (obj.edges[1] + 0.5 - g.cx) * rho / g.fx + vehicle.lateral_offset
                edges_m = (left, right)
            detections.append((obj.centroid, rho, edges_m))
        ready = self.tracks.update(t_mid, detections, vehicle)
        try:
            decision = plan_decision(ready, vehicle, self.config.avoidance)
        except InfeasiblePlanError:
            # Too late for a clean ramp: plan it anyway, the runner rate-limits.
            relaxed = dataclasses.replace(self.config.avoidance, max_lateral_rate=1e9)
            decision = plan_decision(ready, vehicle, relaxed)
        for tr in ready:
            self.outputs.pois.append(
                PoiRecord(
                    t_us=t_mid, track_id=tr.id, centroid_px=tr.centroid_px, poi=tr.poi
                )
            )
        self.outputs.decisions.append(
            {
                "t_us": t_mid,
                "tracks": [
                    {
                        "id": tr.id,
                        "rho": tr.rho_cur,
                        "v_obj": tr.v_obj,
                        "poi": tr.poi if math.isfinite(tr.poi) else None,
                        "priority": tr.priority,
                    }
                    for tr in ready
                ],
                "decision": {
                    "kind": decision.kind,
                    "branch": decision.branch,
                    "waypoints": [[t, off] for t, off in decision.plan],
                },
            }
        )
        return decision


def run_pipeline(
    events: np.ndarray,
    config: PipelineConfig,
    poses: list[tuple[int, CameraPose]] | None = None,
) -> PipelineEngine:
    """Run the whole stream through the configured stage prefix."""
    engine = PipelineEngine(config, PoseTrack(poses) if poses else None)
    engine.process(events)
    engine.finish()
    return engine


class ClosedLoopRunner:
    """Couples the simulator to the pipeline: decisions steer the vehicle.

    The simulator advances in small control steps; the vehicle's lateral
    offset follows the most recent plan, rate-limited. Poses fed to the
    depth stage come from the trajectory actually flown.
    """

    CONTROL_DT_S = 0.02

    def __init__(self, spec: SceneSpec, config: PipelineConfig):
        self.spec = spec
        self.sim = SceneSimulator(spec)
        self.config = config
        self.engine = PipelineEngine(config, pose_track=self)
        self.engine.on_slice = self._on_cycle
        self._plan: list[tuple[float, float]] = []
        self._lat = 0.0
        self._labels: list[np.ndarray] = []
        self._samples_cache_len = 0
        self._sample_t = np.zeros(1, dtype=np.int64)
        self._sample_lat = np.zeros(1)

    # Pose-provider interface (backed by the flown trajectory).

    def _refresh_samples(self):
        if len(self.sim.vehicle_samples) != self._samples_cache_len:
            self._sample_t = np.array([s[0] for s in self.sim.vehicle_samples], dtype=np.int64)
            self._sample_lat = np.array([s[1] for s in self.sim.vehicle_samples])
            self._samples_cache_len = len(self.sim.vehicle_samples)

    def _lat_at(self, t_us: int) -> float:
        self._refresh_samples()
        return float(np.interp(t_us, self._sample_t, self._sample_lat))

    def pose_at(self, t_us: int) -> CameraPose:
        z = self.spec.vehicle_speed * t_us * 1e-6
        return CameraPose(np.eye(3), -np.array([self._lat_at(t_us), 0.0, z]))

    def vehicle_at(self, t_us: int) -> VehicleState:
        return VehicleState(
            v=self.spec.vehicle_speed, lateral_offset=self._lat_at(t_us), t_us=t_us
        )

    def _on_cycle(self, cycle: CycleResult) -> None:
        if cycle.decision is not None and cycle.decision.plan:
            self._plan = cycle.decision.plan

    def _steer(self, t_s: float) -> float:
        if self._plan:
            ts = [w[0] for w in self._plan]
            offs = [w[1] for w in self._plan]
            target = float(np.interp(t_s, ts, offs))
        else:
            target = self._lat
        max_step = self.config.avoidance.max_lateral_rate * self.CONTROL_DT_S
        self._lat = min(max(target, self._lat - max_step), self._lat + max_step)
        return self._lat

    def run(self):
        """Returns (outputs, truth, engine) after the full scene."""
        t = 0.0
        while t < self.spec.duration - 1e-9:
            t_next = min(t + self.CONTROL_DT_S, self.spec.duration)
            lat = self._steer(t_next)
            events, labels = self.sim.advance_to(t_next, lateral=lat)
            if len(labels):
                self._labels.append(labels)
            self.engine.process(events)
            t = t_next
        self.engine.finish()
        labels = (
            np.concatenate(self._labels) if self._labels else np.zeros(0, dtype=np.int32)
        )
        truth = self.sim.truth(labels)
        self.engine.outputs.min_separation = (
            self.sim.min_separation if math.isfinite(self.sim.min_separation) else None
        )
        return self.engine.outputs, truth, self.engine
