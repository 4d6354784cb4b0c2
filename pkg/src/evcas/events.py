"""Core domain types: events, the per-pixel timestamp surface, camera geometry.

Timestamps are integer microseconds everywhere; conversion to seconds happens
only at the kinematics boundary. Event streams are handled in two shapes:
scalar ``Event`` tuples for per-event APIs and structured numpy arrays
(``EVENT_DTYPE``) for bulk processing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .errors import BoundsError

ON = 1
OFF = 0

DEFAULT_WIDTH = 240
DEFAULT_HEIGHT = 180

# Sentinel for "no event seen yet" on timestamp surfaces (timestamps are >= 0).
NEVER = -1

EVENT_DTYPE = np.dtype(
    [("t", np.int64), ("x", np.int32), ("y", np.int32), ("p", np.uint8)]
)


class Event(NamedTuple):
    t: int  # microseconds
    x: int
    y: int
    p: int  # ON (1) / OFF (0)


def events_to_array(events: Iterable[Event]) -> np.ndarray:
    """Pack events into a structured array (copies)."""
    seq = list(events)
    arr = np.empty(len(seq), dtype=EVENT_DTYPE)
    for i, e in enumerate(seq):
        arr[i] = (e.t, e.x, e.y, e.p)
    return arr


def array_to_events(arr: np.ndarray) -> list[Event]:
    """Unpack a structured array into Event tuples."""
    return [
        Event(int(t), int(x), int(y), int(p))
        for t, x, y, p in zip(arr["t"], arr["x"], arr["y"], arr["p"])
    ]


def check_bounds(x: int, y: int, width: int, height: int) -> None:
    if not (0 <= x < width and 0 <= y < height):
        raise BoundsError(f"event at ({x}, {y}) outside {width}x{height} sensor")


class TimestampSurface:
    """Per-pixel most-recent-event timestamp map.

    ``last[y, x]`` holds the latest event timestamp at that pixel, NEVER (-1)
    for untouched pixels. Single writer; readers only between updates.
    """

    __slots__ = ("width", "height", "last")

    def __init__(self, width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT):
        self.width = int(width)
        self.height = int(height)
        self.last = np.full((self.height, self.width), NEVER, dtype=np.int64)

    def update(self, e: Event) -> None:
        """Record event e; touches exactly the pixel (e.x, e.y)."""
        check_bounds(e.x, e.y, self.width, self.height)
        self.last[e.y, e.x] = e.t

    def get(self, x: int, y: int) -> int:
        check_bounds(x, y, self.width, self.height)
        return int(self.last[y, x])

    def window(self, cx: int, cy: int, half: int) -> np.ndarray:
        """(2*half+1)^2 window centered at (cx, cy), NEVER outside the sensor."""
        side = 2 * half + 1
        out = np.full((side, side), NEVER, dtype=np.int64)
        x0, x1 = max(0, cx - half), min(self.width, cx + half + 1)
        y0, y1 = max(0, cy - half), min(self.height, cy + half + 1)
        out[y0 - (cy - half) : y1 - (cy - half), x0 - (cx - half) : x1 - (cx - half)] = (
            self.last[y0:y1, x0:x1]
        )
        return out

    def copy(self) -> "TimestampSurface":
        s = TimestampSurface(self.width, self.height)
        s.last[:] = self.last
        return s


def surface_update(surface: TimestampSurface, e: Event) -> TimestampSurface:
    """Update the surface with e in place and return it."""
    surface.update(e)
    return surface


@dataclass(frozen=True)
class SensorGeometry:
    """Pinhole intrinsics. fx/fy in pixels, (cx, cy) principal point."""

    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    fx: float = 200.0  # placeholder default, not from any calibration
    fy: float = 200.0
    cx: float = 119.5
    cy: float = 89.5

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the sensor")

    def project(self, p_cam: np.ndarray) -> tuple[float, float]:
        """Project a camera-frame 3D point to pixel coordinates (z > 0)."""
        return (
            self.fx * p_cam[0] / p_cam[2] + self.cx,
            self.fy * p_cam[1] / p_cam[2] + self.cy,
        )

    def ray(self, u: float, v: float) -> np.ndarray:
        """Unit ray through pixel (u, v) in the camera frame."""
        d = np.array([(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0])
        return d / np.linalg.norm(d)


_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform: p_cam = rotation @ p_world + translation."""

    rotation: np.ndarray  # 3x3, orthonormal, det +1
    translation: np.ndarray  # 3-vector, meters

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ValueError("rotation determinant must be +1")

    @staticmethod
    def identity() -> "CameraPose":
        return CameraPose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_quaternion(q_wxyz, translation) -> "CameraPose":
        """Pose from a unit quaternion (w, x, y, z) for the world-to-camera rotation."""
        w, x, y, z = (float(v) for v in q_wxyz)
        n = np.sqrt(w * w + x * x + y * y + z * z)
        if n == 0:
            raise ValueError("zero quaternion")
        w, x, y, z = w / n, x / n, y / n, z / n
        r = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )
        return CameraPose(r, np.asarray(translation, dtype=float))

    def to_quaternion(self) -> tuple[float, float, float, float]:
        """Rotation as a unit quaternion (w, x, y, z), w >= 0."""
        r = self.rotation
        tr = np.trace(r)
        if tr > 0:
            s = np.sqrt(tr + 1.0) * 2
            w = 0.25 * s
            x = (r[2, 1] - r[1, 2]) / s
            y = (r[0, 2] - r[2, 0]) / s
            z = (r[1, 0] - r[0, 1]) / s
        elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
            s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
            w = (r[2, 1] - r[1, 2]) / s
            x = 0.25 * s
            y = (r[0, 1] + r[1, 0]) / s
            z = (r[0, 2] + r[2, 0]) / s
        elif r[1, 1] > r[2, 2]:
            s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
            w = (r[0, 2] - r[2, 0]) / s
            x = (r[0, 1] + r[1, 0]) / s
            y = 0.25 * s
            z = (r[1, 2] + r[2, 1]) / s
        else:
            s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
            w = (r[1, 0] - r[0, 1]) / s
            x = (r[0, 2] + r[2, 0]) / s
            y = (r[1, 2] + r[2, 1]) / s
            z = 0.25 * s
        if w < 0:
            w, x, y, z = -w, -x, -y, -z
        return (float(w), float(x), float(y), float(z))

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_camera(self, p_world: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(p_world, dtype=float) + self.translation

    def ray_world(self, geometry: SensorGeometry, u: float, v: float) -> np.ndarray:
        """Unit direction in world coordinates of the ray through pixel (u, v)."""
        return self.rotation.T @ geometry.ray(u, v)
