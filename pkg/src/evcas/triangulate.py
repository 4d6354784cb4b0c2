"""Two-view triangulation of matched corners and per-object range estimation.

Triangulation uses the midpoint of the common perpendicular between the two
back-projected rays: geometrically exact for noiseless input and free of
the homogeneous-scale pitfalls of linear methods at this problem size. A
DLT variant is kept behind a flag for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corners import Corner
from .errors import BehindCameraError, DegenerateGeometryError
from .events import CameraPose, SensorGeometry
from .hough import DetectedObject

DEFAULT_MIN_RAY_ANGLE = math.radians(0.5)


@dataclass(frozen=True)
class FeatureObservation:
    pixel: tuple[float, float]  # (u, v), sub-pixel
    pose: CameraPose
    geometry: SensorGeometry
    t: int  # microseconds

    def __post_init__(self):
        u, v = self.pixel
        if not (-1.0 <= u < self.geometry.width + 1.0 and -1.0 <= v < self.geometry.height + 1.0):
            raise ValueError(f"pixel ({u}, {v}) outside sensor (1 px slack)")


@dataclass(frozen=True)
class TriangulatedPoint:
    point: np.ndarray  # world frame, meters
    depth: float  # along the first camera's optical axis
    condition: float  # angle between the two rays, radians


def triangulate(
    obs_a: FeatureObservation,
    obs_b: FeatureObservation,
    min_ray_angle: float = DEFAULT_MIN_RAY_ANGLE,
    method: str = "midpoint",
) -> TriangulatedPoint:
    """3D point from two posed observations.

    Raises DegenerateGeometryError when the rays are closer to parallel than
    min_ray_angle (which covers the zero-baseline case) and BehindCameraError
    when the point falls behind either camera.
    """
    o1 = obs_a.pose.center()
    o2 = obs_b.pose.center()
    d1 = obs_a.pose.ray_world(obs_a.geometry, *obs_a.pixel)
    d2 = obs_b.pose.ray_world(obs_b.geometry, *obs_b.pixel)

    angle = float(np.arccos(np.clip(d1 @ d2, -1.0, 1.0)))
    if angle < min_ray_angle or np.linalg.norm(o1 - o2) < 1e-12:
        raise DegenerateGeometryError(
            f"ray angle {math.degrees(angle):.4f} deg below "
            f"{math.degrees(min_ray_angle):.4f} deg or zero baseline"
        )

    if method == "midpoint":
        w0 = o1 - o2
        b = float(d1 @ d2)
        d = float(d1 @ w0)
        e = float(d2 @ w0)
        denom = 1.0 - b * b
        s = (b * e - d) / denom
        u = (e - b * d) / denom
        point = 0.5 * ((o1 + s * d1) + (o2 + u * d2))
    elif method == "dlt":
        point = _triangulate_dlt(obs_a, obs_b)
    else:
        raise ValueError(f"unknown triangulation method: {method!r}")

    z_a = float(obs_a.pose.to_camera(point)[2])
    z_b = float(obs_b.pose.to_camera(point)[2])
    if z_a <= 0 or z_b <= 0:
        raise BehindCameraError(f"depths ({z_a:.3f}, {z_b:.3f}) m; point behind a camera")
    return TriangulatedPoint(point=point, depth=z_a, condition=angle)


def _projection_matrix(obs: FeatureObservation) -> np.ndarray:
    g = obs.geometry
    k = np.array([[g.fx, 0, g.cx], [0, g.fy, g.cy], [0, 0, 1.0]])
    return k @ np.hstack([obs.pose.rotation, obs.pose.translation.reshape(3, 1)])


def _triangulate_dlt(obs_a: FeatureObservation, obs_b: FeatureObservation) -> np.ndarray:
    pa = _projection_matrix(obs_a)
    pb = _projection_matrix(obs_b)
    ua, va = obs_a.pixel
    ub, vb = obs_b.pixel
    a = np.stack(
        [
            ua * pa[2] - pa[0],
            va * pa[2] - pa[1],
            ub * pb[2] - pb[0],
            vb * pb[2] - pb[1],
        ]
    )
    _, _, vt = np.linalg.svd(a)
    h = vt[-1]
    return h[:3] / h[3]


def match_corners(
    corners_a: list[Corner],
    corners_b: list[Corner],
    max_pixel_dist: float,
    max_dt_us: int,
) -> list[tuple[Corner, Corner]]:
    """Mutual-nearest-neighbor corner pairs within the pixel and time gates."""
    if not corners_a or not corners_b:
        return []
    pa = np.array([[c.x, c.y] for c in corners_a], dtype=float)
    pb = np.array([[c.x, c.y] for c in corners_b], dtype=float)
    ta = np.array([c.t for c in corners_a], dtype=np.int64)
    tb = np.array([c.t for c in corners_b], dtype=np.int64)
    d = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=2)
    dt_ok = np.abs(ta[:, None] - tb[None, :]) <= max_dt_us
    d[~dt_ok] = np.inf
    d[d > max_pixel_dist] = np.inf
    best_b = d.argmin(axis=1)
    best_a = d.argmin(axis=0)
    pairs = []
    for i, j in enumerate(best_b):
        if np.isinf(d[i, j]):
            continue
        if best_a[j] == i:
            pairs.append((corners_a[i], corners_b[int(j)]))
    return pairs


def object_distance(
    objects: list[DetectedObject],
    points: list[TriangulatedPoint],
    pixels: list[tuple[float, float]],
) -> dict[int, float]:
    """Median point depth per object; pixels are the first-view projections
    used to attribute each point to the object whose bbox contains it.

    Objects that attract no points are absent from the result (excluded from
    avoidance this cycle).
    """
    if len(points) != len(pixels):
        raise ValueError("points and pixels must be parallel lists")
    depths: dict[int, list[float]] = {}
    for pt, (u, v) in zip(points, pixels):
        for obj in objects:
            x0, y0, x1, y1 = obj.bbox
            if x0 <= u <= x1 and y0 <= v <= y1:
                depths.setdefault(obj.id, []).append(pt.depth)
                break
    return {oid: float(np.median(ds)) for oid, ds in depths.items()}
