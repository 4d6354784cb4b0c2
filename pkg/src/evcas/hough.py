"""Object detection by randomized plane voting in (x, y, scaled-time) space.

Events of a slice are lifted to 3D points (x, y, z) with z = elapsed slice
time in seconds times time_scale (pixels per second). Random event triples
propose planes; proposals are accumulated on a quantized (theta, phi, rho)
grid held in a sparse hash. Accepted cells get their votes recounted exactly
as the number of slice events within inlier_eps of the cell-center plane, so
the final vote counts do not depend on the quantization path.

Plane parameterization: unit normal n = (sin(theta)cos(phi),
sin(theta)sin(phi), cos(theta)) with n_z >= 0, and rho = n . p for points p
on the plane. theta in [0, pi], phi in [0, 2*pi).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError
from .events import Event
from .slicing import EventSlice

DEGENERATE_NORM = 1e-9

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class HoughConfig:
    n_triples: int = 500
    bin_theta: float = 0.05  # radians
    bin_phi: float = 0.05  # radians
    bin_rho: float = 0.5  # same units as x/y (pixels)
    inlier_eps: float = 1.0
    min_votes: int = 50
    time_scale: float = 1000.0  # pixels per second of elapsed slice time
    max_objects: int = 5

    def __post_init__(self):
        for name in ("n_triples", "bin_theta", "bin_phi", "bin_rho", "inlier_eps",
                     "min_votes", "time_scale", "max_objects"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class PlaneHypothesis:
    theta: float
    phi: float
    rho: float
    votes: int

    def normal(self) -> np.ndarray:
        st = np.sin(self.theta)
        return np.array(
            [st * np.cos(self.phi), st * np.sin(self.phi), np.cos(self.theta)]
        )


@dataclass(frozen=True)
class DetectedObject:
    id: int
    plane: PlaneHypothesis
    support: np.ndarray  # inlier events (EVENT_DTYPE)
    centroid: tuple[float, float]
    bbox: tuple[int, int, int, int]  # x_min, y_min, x_max, y_max
    edges: tuple[int, int]  # extreme support columns at the centroid row


def lift_points(slice_: EventSlice, cfg: HoughConfig) -> np.ndarray:
    """Slice events as (N, 3) float points; z is elapsed time scaled to pixels."""
    z = (slice_.events["t"].astype(np.float64) - slice_.t_start) * 1e-6 * cfg.time_scale
    return np.column_stack(
        [slice_.events["x"].astype(np.float64), slice_.events["y"].astype(np.float64), z]
    )


def _canonical(n: np.ndarray, rho: float) -> tuple[np.ndarray, float]:
    """Flip (n, rho) so n_z >= 0, tie-broken toward positive n_x then n_y."""
    flip = n[2] < 0 or (n[2] == 0 and (n[0] < 0 or (n[0] == 0 and n[1] < 0)))
    if flip:
        return -n, -rho
    return n, rho


def plane_params_from_points(p1, p2, p3):
    """(theta, phi, rho) of the plane through three 3D points, or None."""
    p1 = np.asarray(p1, dtype=float)
    n = np.cross(np.asarray(p2, dtype=float) - p1, np.asarray(p3, dtype=float) - p1)
    norm = np.linalg.norm(n)
    if norm < DEGENERATE_NORM:
        return None
    n = n / norm
    n, rho = _canonical(n, float(n @ p1))
    theta = float(np.arccos(np.clip(n[2], -1.0, 1.0)))
    phi = float(np.arctan2(n[1], n[0])) % TWO_PI
    return theta, phi, rho


def plane_from_triple(
    e1: Event, e2: Event, e3: Event, time_scale: float, t_ref: int = 0
):
    """Plane through three events in (x, y, scaled-time) space; None if collinear.

    t_ref anchors the time axis (detect_planes uses the slice start so the
    geometry is slice-local).
    """
    pts = [
        (e.x, e.y, (e.t - t_ref) * 1e-6 * time_scale) for e in (e1, e2, e3)
    ]
    return plane_params_from_points(*pts)


def sample_triples(rng: np.random.Generator, n_events: int, n_triples: int) -> np.ndarray:
    """(n_triples, 3) index array of distinct-index triples.

    Draws with replacement then drops rows with repeated indices, so the
    draw sequence is identical for any consumer seeded the same way.
    """
    idx = rng.integers(0, n_events, size=(n_triples, 3))
    distinct = (
        (idx[:, 0] != idx[:, 1]) & (idx[:, 0] != idx[:, 2]) & (idx[:, 1] != idx[:, 2])
    )
    return idx[distinct]


def _cell_center(cell: tuple[int, int, int], cfg: HoughConfig):
    theta = (cell[0] + 0.5) * cfg.bin_theta
    phi = ((cell[1] + 0.5) * cfg.bin_phi) % TWO_PI
    rho = (cell[2] + 0.5) * cfg.bin_rho
    return theta, phi, rho


def count_inliers(points: np.ndarray, theta: float, phi: float, rho: float, eps: float) -> int:
    """Exact inlier count of a plane over lifted points."""
    st = np.sin(theta)
    n = np.array([st * np.cos(phi), st * np.sin(phi), np.cos(theta)])
    return int(np.count_nonzero(np.abs(points @ n - rho) <= eps))


def detect_planes(
    slice_: EventSlice, cfg: HoughConfig, rng_seed: int
) -> list[PlaneHypothesis]:
    """Plane hypotheses of a slice, vote-descending.

    Deterministic given rng_seed. Each returned hypothesis carries the exact
    inlier count of its cell-center plane; cells below min_votes are dropped.
    Raises InsufficientDataError for slices of fewer than 3 events; returns
    an empty list when every sampled triple was collinear.
    """
    n = len(slice_.events)
    if n < 3:
        raise InsufficientDataError(f"slice has {n} events; plane voting needs >= 3")
    points = lift_points(slice_, cfg)
    rng = np.random.default_rng(rng_seed)
    triples = sample_triples(rng, n, cfg.n_triples)
    if len(triples) == 0:
        return []

    p1 = points[triples[:, 0]]
    normals = np.cross(points[triples[:, 1]] - p1, points[triples[:, 2]] - p1)
    norms = np.linalg.norm(normals, axis=1)
    ok = norms >= DEGENERATE_NORM
    if not ok.any():
        return []
    normals = normals[ok] / norms[ok, None]
    p1 = p1[ok]
    rhos = np.einsum("ij,ij->i", normals, p1)

    # Canonical orientation: n_z >= 0, ties toward +x then +y.
    nz = normals[:, 2]
    nx = normals[:, 0]
    ny = normals[:, 1]
    flip = (nz < 0) | ((nz == 0) & ((nx < 0) | ((nx == 0) & (ny < 0))))
    normals[flip] *= -1.0
    rhos[flip] *= -1.0

    thetas = np.arccos(np.clip(normals[:, 2], -1.0, 1.0))
    phis = np.arctan2(normals[:, 1], normals[:, 0]) % TWO_PI

    it = np.floor(thetas / cfg.bin_theta).astype(np.int64)
    ip = np.floor(phis / cfg.bin_phi).astype(np.int64)
    ir = np.floor(rhos / cfg.bin_rho).astype(np.int64)

    counts: dict[tuple[int, int, int], int] = {}
    for cell in zip(it.tolist(), ip.tolist(), ir.tolist()):
        counts[cell] = counts.get(cell, 0) + 1

    out = []
    for cell in counts:
        theta, phi, rho = _cell_center(cell, cfg)
        votes = count_inliers(points, theta, phi, rho, cfg.inlier_eps)
        if votes >= cfg.min_votes:
            out.append(PlaneHypothesis(theta=theta, phi=phi, rho=rho, votes=votes))
    out.sort(key=lambda h: (-h.votes, h.theta, h.phi, h.rho))
    return out


def extract_objects(
    slice_: EventSlice, hypotheses: list[PlaneHypothesis], cfg: HoughConfig
) -> list[DetectedObject]:
    """Greedy support assignment in vote order; disjoint supports.

    Each event supports the first (highest-voted) plane it is within
    inlier_eps of. Hypotheses whose remaining support falls below min_votes
    are skipped; at most max_objects objects are returned.
    """
    if not hypotheses or len(slice_.events) == 0:
        return []
    points = lift_points(slice_, cfg)
    assigned = np.zeros(len(points), dtype=bool)
    objects: list[DetectedObject] = []
    for hyp in hypotheses:
        if len(objects) >= cfg.max_objects:
            break
        st = np.sin(hyp.theta)
        n = np.array([st * np.cos(hyp.phi), st * np.sin(hyp.phi), np.cos(hyp.theta)])
        support_mask = ~assigned & (np.abs(points @ n - hyp.rho) <= cfg.inlier_eps)
        if int(support_mask.sum()) < cfg.min_votes:
            continue
        assigned |= support_mask
        support = slice_.events[support_mask]
        xs = support["x"]
        ys = support["y"]
        centroid = (float(xs.mean()), float(ys.mean()))
        bbox = (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
        band = np.abs(ys.astype(np.float64) - centroid[1]) <= 1.0
        if band.any():
            edges = (int(xs[band].min()), int(xs[band].max()))
        else:
            edges = (bbox[0], bbox[2])  # no support at the centroid row
        objects.append(
            DetectedObject(
                id=len(objects),
                plane=hyp,
                support=support,
                centroid=centroid,
                bbox=bbox,
                edges=edges,
            )
        )
    return objects


def detect_objects(
    slice_: EventSlice, cfg: HoughConfig, rng_seed: int
) -> list[DetectedObject]:
    """detect_planes followed by extract_objects."""
    return extract_objects(slice_, detect_planes(slice_, cfg, rng_seed), cfg)
