"""Obstacle kinematics, impact-time prioritization, and avoidance decisions.

Per slice cycle each tracked obstacle's range history gives its apparent
closing velocity and a predicted time of impact (poi). Obstacles are ranked
by ascending poi; the decision procedure then either threads the gap between
obstacles that would hit at the same time, swerves around them as one merged
obstacle when the gap is too narrow, or avoids the single most urgent
obstacle. Plans are short constant-rate lateral ramps.

Sign conventions: v_obj > 0 means the obstacle closes distance beyond what
ego motion explains; lateral offsets are meters, positive to the right.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import (
    DegenerateIntervalError,
    IncompleteTrackError,
    InfeasiblePlanError,
    TimeRegressionError,
)

US = 1e-6

PASS_THROUGH_GAP = "PassThroughGap"
AVOID_MERGED = "AvoidMerged"
AVOID_PRIORITY = "AvoidPriority"
NO_ACTION = "NoAction"

# Branch labels recorded in decisions (which arm of the procedure fired).
BRANCH_GAP = "same-poi-gap"
BRANCH_MERGED = "same-poi-merged"
BRANCH_PRIORITY = "distinct-poi"
BRANCH_NONE = "no-threat"


@dataclass(frozen=True)
class VehicleState:
    v: float  # forward speed, m/s, >= 0
    lateral_offset: float  # meters
    t_us: int

    def __post_init__(self):
        if self.v < 0:
            raise ValueError("vehicle speed must be >= 0")


@dataclass
class ObstacleTrack:
    id: int
    rho_prev: float | None = None  # meters, at t_prev
    rho_cur: float | None = None  # meters, at t_cur
    t_prev_us: int | None = None
    t_cur_us: int | None = None
    v_obj: float | None = None  # m/s, positive = closing beyond ego motion
    poi: float = math.inf  # absolute seconds
    priority: int | None = None
    same_poi_group: int | None = None
    edges: tuple[float, float] | None = None  # lateral extent, meters (left, right)
    centroid_px: tuple[float, float] | None = None
    missed: int = 0
    history: list[tuple[int, float]] = field(default_factory=list)  # (t_us, rho)

    def lateral_center(self) -> float | None:
        if self.edges is None:
            return None
        return 0.5 * (self.edges[0] + self.edges[1])

    def half_extent(self) -> float:
        if self.edges is None:
            return 0.0
        return 0.5 * (self.edges[1] - self.edges[0])


@dataclass(frozen=True)
class AvoidanceConfig:
    r_c: float = 1.5  # collision radius / required clearance, meters
    poi_tie_eps: float = 0.1  # seconds; pois closer than this count as equal
    horizon: float = 3.0  # planning horizon, seconds
    max_lateral_rate: float = 2.0  # m/s
    plan_dt: float = 0.1  # waypoint spacing, seconds
    ramp_fraction: float = 0.9  # finish the ramp after this share of the window

    def __post_init__(self):
        for name in ("r_c", "poi_tie_eps", "horizon", "max_lateral_rate", "plan_dt"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0 < self.ramp_fraction <= 1):
            raise ValueError("ramp_fraction must be in (0, 1]")


@dataclass
class AvoidanceDecision:
    kind: str  # PASS_THROUGH_GAP | AVOID_MERGED | AVOID_PRIORITY | NO_ACTION
    branch: str  # which arm fired
    target_offset: float | None  # lateral offset the plan must reach
    deadline: float  # absolute seconds (poi driving the decision; inf if none)
    track_ids: list[int] = field(default_factory=list)
    plan: list[tuple[float, float]] = field(default_factory=list)  # (t_sec, offset)


def vehicle_travel(v: float, t_prev_us: int, t_cur_us: int) -> float:
    """Ego distance covered between the two timestamps, meters."""
    if t_cur_us < t_prev_us:
        raise TimeRegressionError(f"t_cur {t_cur_us} < t_prev {t_prev_us}")
    return v * (t_cur_us - t_prev_us) * US


def object_kinematics(track: ObstacleTrack, d_v: float) -> tuple[float, float]:
    """Distance the obstacle itself closed, and its apparent velocity.

    d_obj = rho_prev - d_v - rho_cur;  v_obj = d_obj / dt.
    """
    if track.rho_prev is None or track.rho_cur is None:
        raise IncompleteTrackError(f"track {track.id} lacks a range history")
    if track.t_prev_us is None or track.t_cur_us is None:
        raise IncompleteTrackError(f"track {track.id} lacks timestamps")
    dt = (track.t_cur_us - track.t_prev_us) * US
    if dt <= 0:
        raise DegenerateIntervalError(f"track {track.id}: dt = {dt} s")
    d_obj = track.rho_prev - d_v - track.rho_cur
    return d_obj, d_obj / dt


def compute_poi(track: ObstacleTrack, vehicle: VehicleState) -> float:
    """Predicted absolute impact time: t_cur + rho / closing speed; +inf if
    the obstacle is not closing."""
    if track.rho_cur is None or track.v_obj is None or track.t_cur_us is None:
        raise IncompleteTrackError(f"track {track.id} kinematics not updated")
    closing = vehicle.v + track.v_obj
    if closing <= 0:
        return math.inf
    return track.t_cur_us * US + track.rho_cur / closing


def assign_priorities(
    tracks: list[ObstacleTrack], poi_tie_eps: float = 0.1
) -> list[ObstacleTrack]:
    """Rank tracks by ascending poi (infinite last); pois within poi_tie_eps
    of a block's earliest member share a same_poi_group id.

    Ranks are a permutation (stable by track id inside a block); the group id
    is what marks ties. Returns the tracks sorted by rank.
    """
    ordered = sorted(tracks, key=lambda tr: (tr.poi, tr.id))
    group = -1
    group_start = None
    for rank, tr in enumerate(ordered):
        new_block = (
            group_start is None
            or (math.isinf(tr.poi) and not math.isinf(group_start))
            or (not math.isinf(tr.poi) and tr.poi - group_start > poi_tie_eps)
        )
        if new_block:
            group += 1
            group_start = tr.poi
        tr.priority = rank
        tr.same_poi_group = group
    return ordered


def gap_between(a: ObstacleTrack, b: ObstacleTrack) -> float:
    """Lateral gap between the facing edges of two obstacles, clamped at 0."""
    if a.edges is None or b.edges is None:
        raise IncompleteTrackError("gap computation needs lateral edges on both tracks")
    if a.lateral_center() <= b.lateral_center():
        left, right = a, b
    else:
        left, right = b, a
    return max(0.0, right.edges[0] - left.edges[1])


def _widest_gap(block: list[ObstacleTrack]) -> tuple[float, float]:
    """Widest adjacent gap in a laterally sorted block: (gap, gap midpoint)."""
    by_center = sorted(block, key=lambda tr: tr.lateral_center())
    best = (-1.0, 0.0)
    for left, right in zip(by_center, by_center[1:]):
        g = gap_between(left, right)
        mid = 0.5 * (left.edges[1] + right.edges[0])
        if g > best[0]:
            best = (g, mid)
    return best


def _swerve_offset(center: float, half_extent: float, current: float, r_c: float) -> float:
    """Closest lateral offset clearing an obstacle by r_c plus its half extent."""
    left = center - (r_c + half_extent)
    right = center + (r_c + half_extent)
    return left if abs(left - current) <= abs(right - current) else right


def decide(
    tracks: list[ObstacleTrack], vehicle: VehicleState, cfg: AvoidanceConfig
) -> AvoidanceDecision:
    """One decision per cycle; priorities must already be assigned.

    Branches: a same-poi group threads its widest gap when it exceeds r_c,
    is treated as one merged obstacle otherwise; distinct pois avoid the
    top-priority track; no closing track at all means no action.
    """
    live = [tr for tr in tracks if not math.isinf(tr.poi)]
    if not live:
        return AvoidanceDecision(
            kind=NO_ACTION, branch=BRANCH_NONE, target_offset=None, deadline=math.inf
        )
    ordered = sorted(live, key=lambda tr: tr.priority)
    top = ordered[0]
    block = [tr for tr in ordered if tr.same_poi_group == top.same_poi_group]
    deadline = min(tr.poi for tr in block)

    if len(block) > 1:
        gap, mid = _widest_gap(block)
        if gap > cfg.r_c:
            return AvoidanceDecision(
                kind=PASS_THROUGH_GAP,
                branch=BRANCH_GAP,
                target_offset=mid,
                deadline=deadline,
                track_ids=[tr.id for tr in block],
            )
        lefts = min(tr.edges[0] for tr in block)
        rights = max(tr.edges[1] for tr in block)
        center = 0.5 * (lefts + rights)
        half = 0.5 * (rights - lefts)
        return AvoidanceDecision(
            kind=AVOID_MERGED,
            branch=BRANCH_MERGED,
            target_offset=_swerve_offset(center, half, vehicle.lateral_offset, cfg.r_c),
            deadline=deadline,
            track_ids=[tr.id for tr in block],
        )

    center = top.lateral_center()
    if center is None:
        center = vehicle.lateral_offset  # no edges: assume dead ahead
    return AvoidanceDecision(
        kind=AVOID_PRIORITY,
        branch=BRANCH_PRIORITY,
        target_offset=_swerve_offset(center, top.half_extent(), vehicle.lateral_offset, cfg.r_c),
        deadline=deadline,
        track_ids=[top.id],
    )


def short_term_plan(
    decision: AvoidanceDecision, vehicle: VehicleState, cfg: AvoidanceConfig
) -> list[tuple[float, float]]:
    """Constant-rate lateral ramp to the decision's target offset.

    Waypoints every plan_dt seconds up to min(deadline, now + horizon); the
    ramp completes after ramp_fraction of that window so the clearance is
    reached before the predicted impact. Raises InfeasiblePlanError when the
    required lateral rate exceeds max_lateral_rate.
    """
    if decision.kind == NO_ACTION or decision.target_offset is None:
        return []
    t0 = vehicle.t_us * US
    t_end = min(decision.deadline, t0 + cfg.horizon)
    window = t_end - t0
    start = vehicle.lateral_offset
    delta = decision.target_offset - start
    if window <= 0:
        if abs(delta) < 1e-12:
            return [(t0, start)]
        raise InfeasiblePlanError("no time left before predicted impact")
    t_done = t0 + cfg.ramp_fraction * window
    rate = abs(delta) / (t_done - t0)
    if rate > cfg.max_lateral_rate:
        raise InfeasiblePlanError(
            f"needs {rate:.2f} m/s lateral, limit {cfg.max_lateral_rate:.2f} m/s"
        )
    plan = []
    k = 1
    while True:
        t = t0 + k * cfg.plan_dt
        if t > t_end + 1e-9:
            break
        frac = min(1.0, (t - t0) / (t_done - t0))
        plan.append((t, start + delta * frac))
        k += 1
    if not plan or plan[-1][0] < t_end - 1e-9:
        plan.append((t_end, decision.target_offset))
    return plan


def plan_decision(
    tracks: list[ObstacleTrack], vehicle: VehicleState, cfg: AvoidanceConfig
) -> AvoidanceDecision:
    """assign_priorities + decide + short_term_plan in one call."""
    assign_priorities(tracks, cfg.poi_tie_eps)
    decision = decide(tracks, vehicle, cfg)
    decision.plan = short_term_plan(decision, vehicle, cfg)
    return decision


class TrackManager:
    """Associates per-slice detections to persistent obstacle tracks.

    Nearest-centroid association with a pixel gate; unmatched detections
    open new tracks; tracks unseen for retire_after cycles retire. Tracks
    only participate in a cycle's decision once they have a two-point range
    history (so kinematics and poi are defined). min_kinematics_dt_us widens
    the range pair used for the velocity estimate: the previous sample is the
    newest one at least that much older than the current measurement, which
    keeps v_obj stable when per-cycle range noise would otherwise swamp it.
    """

    def __init__(
        self,
        gate_px: float = 20.0,
        retire_after: int = 3,
        min_kinematics_dt_us: int = 0,
    ):
        self.gate_px = gate_px
        self.retire_after = retire_after
        self.min_kinematics_dt_us = min_kinematics_dt_us
        self.tracks: list[ObstacleTrack] = []
        self._next_id = 0

    def update(
        self,
        t_us: int,
        detections: list[tuple[tuple[float, float], float | None, tuple[float, float] | None]],
        vehicle: VehicleState,
    ) -> list[ObstacleTrack]:
        """Advance one cycle.

        detections: (centroid_px, range_m or None, lateral_edges_m or None)
        per detected object. Returns the tracks with fresh kinematics this
        cycle, ready for assign_priorities/decide.
        """
        candidates = []
        for tr in self.tracks:
            if tr.centroid_px is None:
                continue
            for j, (centroid, _, _) in enumerate(detections):
                d = math.hypot(centroid[0] - tr.centroid_px[0], centroid[1] - tr.centroid_px[1])
                if d <= self.gate_px:
                    candidates.append((d, tr.id, j))
        candidates.sort()
        matched_tracks: set[int] = set()
        matched_dets: set[int] = set()
        assignment: dict[int, int] = {}
        for d, tid, j in candidates:
            if tid in matched_tracks or j in matched_dets:
                continue
            assignment[j] = tid
            matched_tracks.add(tid)
            matched_dets.add(j)

        ready = []
        by_id = {tr.id: tr for tr in self.tracks}
        for j, tid in assignment.items():
            tr = by_id[tid]
            centroid, rho, edges = detections[j]
            tr.centroid_px = centroid
            tr.missed = 0
            if rho is None:
                continue  # no range this cycle: track stays alive, sits out
            prev = None
            for t_old, rho_old in reversed(tr.history):
                if t_us - t_old >= max(1, self.min_kinematics_dt_us):
                    prev = (t_old, rho_old)
                    break
            tr.history.append((t_us, rho))
            if len(tr.history) > 64:
                del tr.history[0]
            tr.rho_cur = rho
            tr.t_cur_us = t_us
            if edges is not None:
                tr.edges = edges
            if prev is not None:
                tr.t_prev_us, tr.rho_prev = prev
                d_v = vehicle_travel(vehicle.v, tr.t_prev_us, t_us)
                _, tr.v_obj = object_kinematics(tr, d_v)
                tr.poi = compute_poi(tr, vehicle)
                ready.append(tr)

        for tr in self.tracks:
            if tr.id not in matched_tracks:
                tr.missed += 1
        self.tracks = [tr for tr in self.tracks if tr.missed < self.retire_after]

        for j, det in enumerate(detections):
            if j in matched_dets:
                continue
            centroid, rho, edges = det
            tr = ObstacleTrack(id=self._next_id, centroid_px=centroid, edges=edges)
            self._next_id += 1
            if rho is not None:
                tr.rho_cur = rho
                tr.t_cur_us = t_us
                tr.history.append((t_us, rho))
            self.tracks.append(tr)
        return ready
