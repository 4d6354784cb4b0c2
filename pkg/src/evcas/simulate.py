"""Synthetic event-scene generator with analytic ground truth.

The scene model is deliberately minimal: frontoparallel rectangles moving at
constant velocity in front of a forward-driving camera, plus uniform Poisson
background noise. Events fire only on silhouette edges with nonzero normal
motion, at a rate proportional to edge length times normal sweep speed
(1/contrast_threshold events per pixel crossing) — enough to exercise every
pipeline stage while keeping every quantity (boundaries, ranges, impact
times, per-event labels) analytically checkable.

The simulator is incremental so a closed-loop runner can steer the vehicle's
lateral offset between event batches; ``generate`` wraps it for the
open-loop, straight-ahead case.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import BinaryIO, Union

import numpy as np

from .errors import ParseError, ProvenanceError
from .events import EVENT_DTYPE, CameraPose, SensorGeometry

NOISE_LABEL = -1
NEAR_PLANE_M = 0.5


@dataclass(frozen=True)
class ObjectSpec:
    size: tuple[float, float]  # (width, height) meters
    position: tuple[float, float, float]  # center at t=0, world frame
    velocity: tuple[float, float, float]  # m/s

    def center(self, t_s: float) -> np.ndarray:
        p = np.asarray(self.position, dtype=float)
        v = np.asarray(self.velocity, dtype=float)
        return p + v * t_s


@dataclass(frozen=True)
class SceneSpec:
    duration: float  # seconds
    objects: tuple[ObjectSpec, ...] = ()
    vehicle_speed: float = 0.0  # m/s along +z
    noise_rate: float = 0.0  # events / pixel / second
    contrast_threshold: float = 0.3  # 1 / (events per pixel crossing)
    seed: int = 0
    geometry: SensorGeometry = field(default_factory=SensorGeometry)
    step_s: float = 0.002  # internal integration step

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.noise_rate < 0:
            raise ValueError("noise_rate must be >= 0")
        if self.contrast_threshold <= 0:
            raise ValueError("contrast_threshold must be positive")
        if self.step_s <= 0:
            raise ValueError("step_s must be positive")

    def to_dict(self) -> dict:
        return {
            "duration": self.duration,
            "vehicle_speed": self.vehicle_speed,
            "noise_rate": self.noise_rate,
            "contrast_threshold": self.contrast_threshold,
            "seed": self.seed,
            "step_s": self.step_s,
            "geometry": {
                "width": self.geometry.width,
                "height": self.geometry.height,
                "fx": self.geometry.fx,
                "fy": self.geometry.fy,
                "cx": self.geometry.cx,
                "cy": self.geometry.cy,
            },
            "objects": [
                {"size": list(o.size), "position": list(o.position), "velocity": list(o.velocity)}
                for o in self.objects
            ],
        }

    @staticmethod
    def from_dict(d: dict) -> "SceneSpec":
        geometry = SensorGeometry(**d["geometry"]) if "geometry" in d else SensorGeometry()
        objects = tuple(
            ObjectSpec(
                size=tuple(o["size"]),
                position=tuple(o["position"]),
                velocity=tuple(o["velocity"]),
            )
            for o in d.get("objects", [])
        )
        return SceneSpec(
            duration=float(d["duration"]),
            objects=objects,
            vehicle_speed=float(d.get("vehicle_speed", 0.0)),
            noise_rate=float(d.get("noise_rate", 0.0)),
            contrast_threshold=float(d.get("contrast_threshold", 0.3)),
            seed=int(d.get("seed", 0)),
            geometry=geometry,
            step_s=float(d.get("step_s", 0.002)),
        )


class GroundTruth:
    """Per-event labels plus analytic accessors for object geometry.

    Labels partition the stream: NOISE_LABEL (-1) or the object index. The
    analytic accessors take the vehicle trajectory actually flown into
    account, so they stay valid for closed-loop runs.
    """

    def __init__(
        self,
        spec: SceneSpec,
        labels: np.ndarray,
        vehicle_t_us: np.ndarray,
        vehicle_lat: np.ndarray,
        warnings: list[str] | None = None,
        min_separation: float | None = None,
    ):
        self.spec = spec
        self.labels = np.asarray(labels, dtype=np.int32)
        self.vehicle_t_us = np.asarray(vehicle_t_us, dtype=np.int64)
        self.vehicle_lat = np.asarray(vehicle_lat, dtype=float)
        self.warnings = warnings or []
        self.min_separation = min_separation

    # -- vehicle ---------------------------------------------------------

    def lateral_at(self, t_us: int) -> float:
        if len(self.vehicle_t_us) == 0:
            return 0.0
        return float(np.interp(t_us, self.vehicle_t_us, self.vehicle_lat))

    def vehicle_position(self, t_us: int) -> tuple[float, float]:
        """(lateral, z) of the vehicle at t."""
        return self.lateral_at(t_us), self.spec.vehicle_speed * t_us * 1e-6

    # -- objects ---------------------------------------------------------

    def object_depth(self, idx: int, t_us: int) -> float | None:
        """Camera-frame depth (range rho) of the object center; None if behind."""
        t_s = t_us * 1e-6
        z_rel = self.spec.objects[idx].center(t_s)[2] - self.spec.vehicle_speed * t_s
        return float(z_rel) if z_rel > 0 else None

    def object_bbox_px(self, idx: int, t_us: int):
        """Projected bbox (u0, v0, u1, v1) at t, unclipped floats; None if behind."""
        t_s = t_us * 1e-6
        obj = self.spec.objects[idx]
        cx, cy, cz = obj.center(t_s)
        lat, z_v = self.vehicle_position(t_us)
        z_rel = cz - z_v
        if z_rel < NEAR_PLANE_M:
            return None
        g = self.spec.geometry
        w2, h2 = obj.size[0] / 2.0, obj.size[1] / 2.0
        u0 = g.fx * (cx - w2 - lat) / z_rel + g.cx
        u1 = g.fx * (cx + w2 - lat) / z_rel + g.cx
        v0 = g.fy * (cy - h2) / z_rel + g.cy
        v1 = g.fy * (cy + h2) / z_rel + g.cy
        return (u0, v0, u1, v1)

    def object_mask(self, idx: int, t_us: int) -> np.ndarray:
        """Filled silhouette as a boolean (height, width) image."""
        g = self.spec.geometry
        mask = np.zeros((g.height, g.width), dtype=bool)
        bbox = self.object_bbox_px(idx, t_us)
        if bbox is None:
            return mask
        u0, v0, u1, v1 = bbox
        x0 = max(0, int(round(u0)))
        x1 = min(g.width - 1, int(round(u1)))
        y0 = max(0, int(round(v0)))
        y1 = min(g.height - 1, int(round(v1)))
        if x0 <= x1 and y0 <= y1:
            mask[y0 : y1 + 1, x0 : x1 + 1] = True
        return mask

    def object_vertices_px(self, idx: int, t_us: int) -> np.ndarray | None:
        bbox = self.object_bbox_px(idx, t_us)
        if bbox is None:
            return None
        u0, v0, u1, v1 = bbox
        return np.array([[u0, v0], [u1, v0], [u0, v1], [u1, v1]])

    def object_closing_speed(self, idx: int) -> float:
        """vehicle_speed - object z velocity (positive = gap shrinking)."""
        return self.spec.vehicle_speed - self.spec.objects[idx].velocity[2]

    def object_apparent_velocity(self, idx: int) -> float:
        """The closing component beyond ego motion (what Eq-style kinematics see)."""
        return -self.spec.objects[idx].velocity[2]

    def impact_time(self, idx: int) -> float:
        """Absolute time (s) when range reaches zero; inf if never."""
        closing = self.object_closing_speed(idx)
        if closing <= 0:
            return math.inf
        return self.spec.objects[idx].position[2] / closing

    def boundary_distance_px(self, idx: int, t_us: int, u: float, v: float) -> float:
        """Distance from a pixel to the projected silhouette boundary."""
        bbox = self.object_bbox_px(idx, t_us)
        if bbox is None:
            return math.inf
        u0, v0, u1, v1 = bbox
        inside_u = u0 <= u <= u1
        inside_v = v0 <= v <= v1
        du = min(abs(u - u0), abs(u - u1))
        dv = min(abs(v - v0), abs(v - v1))
        if inside_u and inside_v:
            return min(du, dv)
        if inside_u:
            return dv
        if inside_v:
            return du
        return math.hypot(du, dv)

    def separation(self, t_us: int) -> float:
        """Min distance from the vehicle point to any object slab at t."""
        lat, z_v = self.vehicle_position(t_us)
        t_s = t_us * 1e-6
        best = math.inf
        for obj in self.spec.objects:
            cx, cy, cz = obj.center(t_s)
            dx = max(0.0, abs(cx - lat) - obj.size[0] / 2.0)
            dy = max(0.0, abs(cy) - obj.size[1] / 2.0)
            dz = cz - z_v
            best = min(best, math.hypot(dx, dy, dz))
        return best

    # -- persistence -----------------------------------------------------

    def save(self, sink: Union[str, os.PathLike, BinaryIO]) -> None:
        lines = [
            json.dumps({"kind": "meta", "spec": self.spec.to_dict(), "n_events": int(len(self.labels))}),
            json.dumps(
                {
                    "kind": "vehicle",
                    "t_us": self.vehicle_t_us.tolist(),
                    "lat": self.vehicle_lat.tolist(),
                }
            ),
            json.dumps({"kind": "labels", "values": self.labels.tolist()}),
            json.dumps(
                {
                    "kind": "summary",
                    "warnings": self.warnings,
                    "min_separation": self.min_separation,
                }
            ),
        ]
        data = ("\n".join(lines) + "\n").encode("ascii")
        if isinstance(sink, (str, os.PathLike)):
            with open(sink, "wb") as f:
                f.write(data)
        else:
            sink.write(data)

    @staticmethod
    def load(source: Union[str, os.PathLike, BinaryIO]) -> "GroundTruth":
        if isinstance(source, (str, os.PathLike)):
            with open(source, "rb") as f:
                raw = f.read()
        else:
            raw = source.read()
        records = {}
        for lineno, line in enumerate(raw.decode("ascii").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                records[rec["kind"]] = rec
            except (json.JSONDecodeError, KeyError) as exc:
                raise ParseError(str(exc), line=lineno) from exc
        try:
            spec = SceneSpec.from_dict(records["meta"]["spec"])
            truth = GroundTruth(
                spec=spec,
                labels=np.array(records["labels"]["values"], dtype=np.int32),
                vehicle_t_us=np.array(records["vehicle"]["t_us"], dtype=np.int64),
                vehicle_lat=np.array(records["vehicle"]["lat"], dtype=float),
                warnings=records.get("summary", {}).get("warnings", []),
                min_separation=records.get("summary", {}).get("min_separation"),
            )
        except KeyError as exc:
            raise ParseError(f"missing ground-truth record: {exc}") from exc
        return truth


class SceneSimulator:
    """Incremental event generator; lateral offset can change between calls."""

    def __init__(self, spec: SceneSpec):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self.t_s = 0.0
        self.lateral = 0.0
        self.vehicle_samples: list[tuple[int, float]] = [(0, 0.0)]
        self.warnings: list[str] = []
        self.min_separation = math.inf
        self._was_visible = [True] * len(spec.objects)

    # -- geometry helpers --------------------------------------------------

    def _vehicle_z(self, t_s: float) -> float:
        return self.spec.vehicle_speed * t_s

    def _project(self, obj: ObjectSpec, t_s: float, lateral: float):
        cx, cy, cz = obj.center(t_s)
        z_rel = cz - self._vehicle_z(t_s)
        if z_rel < NEAR_PLANE_M:
            return None
        g = self.spec.geometry
        w2, h2 = obj.size[0] / 2.0, obj.size[1] / 2.0
        return (
            g.fx * (cx - w2 - lateral) / z_rel + g.cx,
            g.fy * (cy - h2) / z_rel + g.cy,
            g.fx * (cx + w2 - lateral) / z_rel + g.cx,
            g.fy * (cy + h2) / z_rel + g.cy,
        )

    def _separation(self, t_s: float, lateral: float) -> float:
        z_v = self._vehicle_z(t_s)
        best = math.inf
        for obj in self.spec.objects:
            cx, cy, cz = obj.center(t_s)
            dx = max(0.0, abs(cx - lateral) - obj.size[0] / 2.0)
            dy = max(0.0, abs(cy) - obj.size[1] / 2.0)
            best = min(best, math.hypot(dx, dy, cz - z_v))
        return best

    # -- stepping ----------------------------------------------------------

    def advance_to(self, t_target_s: float, lateral: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Generate events from the current time up to t_target_s.

        Returns (events, labels); timestamps are non-decreasing and continue
        the previous chunk. The lateral offset is held constant during the
        whole call (piecewise-constant steering).
        """
        if lateral is not None:
            self.lateral = float(lateral)
        chunks: list[np.ndarray] = []
        label_chunks: list[np.ndarray] = []
        while self.t_s < t_target_s - 1e-12:
            t1 = min(self.t_s + self.spec.step_s, t_target_s)
            ev, lab = self._step(self.t_s, t1)
            if len(ev):
                chunks.append(ev)
                label_chunks.append(lab)
            self.t_s = t1
            self.vehicle_samples.append((int(round(t1 * 1e6)), self.lateral))
            self.min_separation = min(self.min_separation, self._separation(t1, self.lateral))
        if chunks:
            return np.concatenate(chunks), np.concatenate(label_chunks)
        return np.empty(0, dtype=EVENT_DTYPE), np.empty(0, dtype=np.int32)

    def _step(self, t0: float, t1: float) -> tuple[np.ndarray, np.ndarray]:
        dt = t1 - t0
        g = self.spec.geometry
        ts: list[np.ndarray] = []
        xs: list[np.ndarray] = []
        ys: list[np.ndarray] = []
        ps: list[np.ndarray] = []
        labels: list[np.ndarray] = []

        for idx, obj in enumerate(self.spec.objects):
            r0 = self._project(obj, t0, self.lateral)
            r1 = self._project(obj, t1, self.lateral)
            if r0 is None or r1 is None:
                if self._was_visible[idx] and (r0 is None and r1 is None):
                    self.warnings.append(
                        f"object {idx} left the frustum near t={t0:.3f}s; labels truncated"
                    )
                    self._was_visible[idx] = False
                continue
            self._was_visible[idx] = True
            # Four silhouette edges: (moving coord at t0/t1, span at t0/t1, vertical?)
            edges = [
                (r0[0], r1[0], (r0[1], r0[3]), (r1[1], r1[3]), True),  # left
                (r0[2], r1[2], (r0[1], r0[3]), (r1[1], r1[3]), True),  # right
                (r0[1], r1[1], (r0[0], r0[2]), (r1[0], r1[2]), False),  # top
                (r0[3], r1[3], (r0[0], r0[2]), (r1[0], r1[2]), False),  # bottom
            ]
            for k, (c0, c1, span0, span1, vertical) in enumerate(edges):
                sweep = abs(c1 - c0)
                length = max(0.0, span0[1] - span0[0])
                lam = length * sweep / self.spec.contrast_threshold
                if lam <= 0:
                    continue
                m = int(self.rng.poisson(lam))
                if m == 0:
                    continue
                tau = self.rng.random(m)
                coord = c0 + tau * (c1 - c0)
                lo = span0[0] + tau * (span1[0] - span0[0])
                hi = span0[1] + tau * (span1[1] - span0[1])
                along = lo + self.rng.random(m) * (hi - lo)
                if vertical:
                    px = np.round(coord).astype(np.int64)
                    py = np.round(along).astype(np.int64)
                else:
                    px = np.round(along).astype(np.int64)
                    py = np.round(coord).astype(np.int64)
                ok = (px >= 0) & (px < g.width) & (py >= 0) & (py < g.height)
                if not ok.any():
                    continue
                # Leading edge (moving outward) brightens, trailing darkens.
                outward = (c1 - c0) > 0 if k in (1, 3) else (c1 - c0) < 0
                pol = 1 if outward else 0
                ts.append(((t0 + tau[ok] * dt) * 1e6).round().astype(np.int64))
                xs.append(px[ok])
                ys.append(py[ok])
                ps.append(np.full(int(ok.sum()), pol, dtype=np.uint8))
                labels.append(np.full(int(ok.sum()), idx, dtype=np.int32))

        if self.spec.noise_rate > 0:
            lam = self.spec.noise_rate * g.width * g.height * dt
            m = int(self.rng.poisson(lam))
            if m:
                ts.append(((t0 + self.rng.random(m) * dt) * 1e6).round().astype(np.int64))
                xs.append(self.rng.integers(0, g.width, m))
                ys.append(self.rng.integers(0, g.height, m))
                ps.append(self.rng.integers(0, 2, m).astype(np.uint8))
                labels.append(np.full(m, NOISE_LABEL, dtype=np.int32))

        if not ts:
            return np.empty(0, dtype=EVENT_DTYPE), np.empty(0, dtype=np.int32)
        t = np.concatenate(ts)
        order = np.argsort(t, kind="stable")
        ev = np.empty(len(t), dtype=EVENT_DTYPE)
        ev["t"] = t[order]
        ev["x"] = np.concatenate(xs)[order]
        ev["y"] = np.concatenate(ys)[order]
        ev["p"] = np.concatenate(ps)[order]
        return ev, np.concatenate(labels)[order]

    # -- outputs -----------------------------------------------------------

    def pose(self, t_us: int | None = None, lateral: float | None = None) -> CameraPose:
        """World-to-camera pose of the (axis-aligned) vehicle camera."""
        t_s = self.t_s if t_us is None else t_us * 1e-6
        lat = self.lateral if lateral is None else lateral
        return CameraPose(np.eye(3), -np.array([lat, 0.0, self._vehicle_z(t_s)]))

    def truth(self, labels: np.ndarray) -> GroundTruth:
        t_us = np.array([s[0] for s in self.vehicle_samples], dtype=np.int64)
        lat = np.array([s[1] for s in self.vehicle_samples], dtype=float)
        return GroundTruth(
            spec=self.spec,
            labels=labels,
            vehicle_t_us=t_us,
            vehicle_lat=lat,
            warnings=self.warnings,
            min_separation=self.min_separation if math.isfinite(self.min_separation) else None,
        )


def generate(
    spec: SceneSpec, pose_interval_s: float = 0.01
) -> tuple[np.ndarray, list[tuple[int, CameraPose]], GroundTruth]:
    """Run the full scene open-loop (vehicle straight ahead).

    Returns (events, poses sampled every pose_interval_s, ground truth).
    Deterministic given spec.seed.
    """
    sim = SceneSimulator(spec)
    events, labels = sim.advance_to(spec.duration, lateral=0.0)
    poses = []
    n = max(1, int(round(spec.duration / pose_interval_s)))
    for i in range(n + 1):
        t_s = min(spec.duration, i * pose_interval_s)
        t_us = int(round(t_s * 1e6))
        poses.append((t_us, CameraPose(np.eye(3), -np.array([0.0, 0.0, spec.vehicle_speed * t_s]))))
    return events, poses, sim.truth(labels)


def check_provenance(truth: GroundTruth, seed: int) -> None:
    if truth.spec.seed != seed:
        raise ProvenanceError(
            f"outputs seeded with {seed} but ground truth was generated with {truth.spec.seed}"
        )


# -- scenario library -------------------------------------------------------

SCENARIO_DIR = os.path.join(os.path.dirname(__file__), "scenarios")


def scenario_names() -> list[str]:
    return sorted(
        os.path.splitext(f)[0] for f in os.listdir(SCENARIO_DIR) if f.endswith(".json")
    )


def load_scenario(name_or_path: str, seed: int | None = None) -> tuple[SceneSpec, dict]:
    """Load a scenario config: returns (scene spec, per-stage overrides).

    Accepts a bundled scenario name or a path to a JSON file. seed, when
    given, replaces the spec's seed (for seeded acceptance sweeps).
    """
    path = name_or_path
    if not os.path.exists(path):
        candidate = os.path.join(SCENARIO_DIR, name_or_path + ".json")
        if os.path.exists(candidate):
            path = candidate
        else:
            raise FileNotFoundError(f"no scenario file or bundled scenario {name_or_path!r}")
    with open(path, "rb") as f:
        cfg = json.loads(f.read().decode("utf-8"))
    spec = SceneSpec.from_dict(cfg["scene"])
    if seed is not None:
        spec = replace(spec, seed=seed)
    return spec, cfg.get("overrides", {})
