"""Quantitative evaluation of pipeline outputs against simulator ground truth."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .corners import Corner
from .simulate import NOISE_LABEL, GroundTruth, check_provenance


@dataclass(frozen=True)
class ObjectRecord:
    slice_index: int
    t_mid_us: int
    object_id: int
    bbox: tuple[int, int, int, int]
    centroid: tuple[float, float]
    edges: tuple[int, int]
    votes: int


@dataclass(frozen=True)
class RangeRecord:
    t_us: int
    bbox: tuple[int, int, int, int]  # detected bbox, for truth association
    rho: float


@dataclass(frozen=True)
class PoiRecord:
    t_us: int
    track_id: int
    centroid_px: tuple[float, float] | None
    poi: float  # absolute seconds


@dataclass
class PipelineOutputs:
    """Everything evaluate() needs, collected while the pipeline runs."""

    seed: int
    kept_mask: np.ndarray | None = None  # aligned with the labeled input stream
    detections: list[ObjectRecord] = field(default_factory=list)
    corners: list[Corner] = field(default_factory=list)
    ranges: list[RangeRecord] = field(default_factory=list)
    pois: list[PoiRecord] = field(default_factory=list)
    decisions: list[dict] = field(default_factory=list)
    min_separation: float | None = None


@dataclass
class SliceDetectionScore:
    slice_index: int
    t_mid_us: int
    n_detected: int
    n_truth_visible: int
    ious: list[float]  # best IoU per visible truth object


@dataclass
class MetricsReport:
    signal_retention: float | None = None
    noise_rejection: float | None = None
    detection_slices: list[SliceDetectionScore] = field(default_factory=list)
    mean_iou: float | None = None
    count_match_rate: float | None = None
    corner_count: int = 0
    corner_within_2px: float | None = None
    corner_median_dist: float | None = None
    rho_rel_errors: list[float] = field(default_factory=list)
    poi_samples: list[tuple[float, float, float]] = field(default_factory=list)  # (t_s, poi, true impact)
    min_separation: float | None = None

    def rho_median_rel_error(self) -> float | None:
        if not self.rho_rel_errors:
            return None
        return float(np.median(self.rho_rel_errors))

    def poi_rel_errors(self, window_s: float | None = None) -> list[float]:
        """|poi - impact| / impact, optionally only within window_s of impact."""
        out = []
        for t_s, poi, impact in self.poi_samples:
            if not math.isfinite(impact) or not math.isfinite(poi):
                continue
            if window_s is not None and not (impact - window_s <= t_s <= impact):
                continue
            out.append(abs(poi - impact) / impact)
        return out

    def to_dict(self) -> dict:
        return {
            "signal_retention": self.signal_retention,
            "noise_rejection": self.noise_rejection,
            "mean_iou": self.mean_iou,
            "count_match_rate": self.count_match_rate,
            "detection_slices": [
                {
                    "slice_index": s.slice_index,
                    "t_mid_us": s.t_mid_us,
                    "n_detected": s.n_detected,
                    "n_truth_visible": s.n_truth_visible,
                    "ious": s.ious,
                }
                for s in self.detection_slices
            ],
            "corner_count": self.corner_count,
            "corner_within_2px": self.corner_within_2px,
            "corner_median_dist": self.corner_median_dist,
            "rho_median_rel_error": self.rho_median_rel_error(),
            "rho_samples": len(self.rho_rel_errors),
            "poi_median_rel_error": (
                float(np.median(self.poi_rel_errors())) if self.poi_rel_errors() else None
            ),
            "poi_samples": len(self.poi_samples),
            "min_separation": self.min_separation,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        d = self.to_dict()
        rows = [
            ("signal retention", d["signal_retention"]),
            ("noise rejection", d["noise_rejection"]),
            ("mean detection IoU", d["mean_iou"]),
            ("slice count-match rate", d["count_match_rate"]),
            ("corners emitted", d["corner_count"]),
            ("corners within 2 px of a vertex", d["corner_within_2px"]),
            ("median corner-vertex distance (px)", d["corner_median_dist"]),
            ("median range rel. error", d["rho_median_rel_error"]),
            ("median impact-time rel. error", d["poi_median_rel_error"]),
            ("min vehicle-obstacle separation (m)", d["min_separation"]),
        ]
        width = max(len(r[0]) for r in rows)
        lines = []
        for name, value in rows:
            if value is None:
                shown = "-"
            elif isinstance(value, float):
                shown = f"{value:.4f}"
            else:
                shown = str(value)
            lines.append(f"{name.ljust(width)}  {shown}")
        return "\n".join(lines)


def bbox_iou(det: tuple[int, int, int, int], truth: tuple[float, float, float, float]) -> float:
    """IoU of a detected pixel bbox (inclusive int corners) and a truth rect.

    Detected pixel (x0..x1, y0..y1) covers the continuous rect extended by
    half a pixel on each side.
    """
    ax0, ay0, ax1, ay1 = det[0] - 0.5, det[1] - 0.5, det[2] + 0.5, det[3] + 0.5
    bx0, by0, bx1, by1 = truth
    ix = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    iy = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = ix * iy
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def _truth_object_at(truth: GroundTruth, t_us: int, u: float, v: float) -> int | None:
    """Truth object whose bbox contains (u, v) at t, nearest center on ties."""
    best = None
    best_d = math.inf
    for idx in range(len(truth.spec.objects)):
        bbox = truth.object_bbox_px(idx, t_us)
        if bbox is None:
            continue
        u0, v0, u1, v1 = bbox
        if u0 - 1 <= u <= u1 + 1 and v0 - 1 <= v <= v1 + 1:
            d = math.hypot(u - (u0 + u1) / 2, v - (v0 + v1) / 2)
            if d < best_d:
                best, best_d = idx, d
    return best


def evaluate(outputs: PipelineOutputs, truth: GroundTruth) -> MetricsReport:
    """Score pipeline outputs against the ground truth of the same run."""
    check_provenance(truth, outputs.seed)
    report = MetricsReport()

    if outputs.kept_mask is not None:
        kept = np.asarray(outputs.kept_mask, dtype=bool)
        if len(kept) != len(truth.labels):
            raise ValueError(
                f"kept mask covers {len(kept)} events, truth labels {len(truth.labels)}"
            )
        signal = truth.labels != NOISE_LABEL
        noise = ~signal
        if signal.any():
            report.signal_retention = float(kept[signal].mean())
        if noise.any():
            report.noise_rejection = float(1.0 - kept[noise].mean())

    if outputs.detections:
        by_slice: dict[int, list[ObjectRecord]] = {}
        for rec in outputs.detections:
            by_slice.setdefault(rec.slice_index, []).append(rec)
        all_ious = []
        count_matches = []
        for slice_index in sorted(by_slice):
            recs = by_slice[slice_index]
            t_mid = recs[0].t_mid_us
            ious = []
            n_visible = 0
            for idx in range(len(truth.spec.objects)):
                bbox = truth.object_bbox_px(idx, t_mid)
                if bbox is None:
                    continue
                n_visible += 1
                best = max((bbox_iou(r.bbox, bbox) for r in recs), default=0.0)
                ious.append(best)
            report.detection_slices.append(
                SliceDetectionScore(
                    slice_index=slice_index,
                    t_mid_us=t_mid,
                    n_detected=len(recs),
                    n_truth_visible=n_visible,
                    ious=ious,
                )
            )
            all_ious.extend(ious)
            count_matches.append(len(recs) == n_visible)
        if all_ious:
            report.mean_iou = float(np.mean(all_ious))
        if count_matches:
            report.count_match_rate = float(np.mean(count_matches))

    if outputs.corners:
        dists = []
        for c in outputs.corners:
            best = math.inf
            for idx in range(len(truth.spec.objects)):
                verts = truth.object_vertices_px(idx, c.t)
                if verts is None:
                    continue
                d = float(np.min(np.hypot(verts[:, 0] - c.x, verts[:, 1] - c.y)))
                best = min(best, d)
            if math.isfinite(best):
                dists.append(best)
        report.corner_count = len(outputs.corners)
        if dists:
            report.corner_within_2px = float(np.mean(np.array(dists) <= 2.0))
            report.corner_median_dist = float(np.median(dists))

    for rec in outputs.ranges:
        cx = (rec.bbox[0] + rec.bbox[2]) / 2.0
        cy = (rec.bbox[1] + rec.bbox[3]) / 2.0
        idx = _truth_object_at(truth, rec.t_us, cx, cy)
        if idx is None:
            continue
        rho_true = truth.object_depth(idx, rec.t_us)
        if rho_true is None or rho_true <= 0:
            continue
        report.rho_rel_errors.append(abs(rec.rho - rho_true) / rho_true)

    for rec in outputs.pois:
        if rec.centroid_px is not None:
            idx = _truth_object_at(truth, rec.t_us, rec.centroid_px[0], rec.centroid_px[1])
        else:
            idx = 0 if len(truth.spec.objects) == 1 else None
        if idx is None:
            continue
        report.poi_samples.append((rec.t_us * 1e-6, rec.poi, truth.impact_time(idx)))

    report.min_separation = outputs.min_separation
    if report.min_separation is None:
        report.min_separation = truth.min_separation
    return report


def truth_as_outputs(
    truth: GroundTruth, slice_times_us: list[int] | None = None
) -> PipelineOutputs:
    """Feed the ground truth back as if a perfect pipeline produced it.

    Used to sanity-check evaluate(): every rate comes out 1.0, every error 0.
    """
    out = PipelineOutputs(seed=truth.spec.seed)
    out.kept_mask = truth.labels != NOISE_LABEL
    times = slice_times_us or [int(truth.spec.duration * 5e5)]  # scene midpoint
    for k, t_us in enumerate(times):
        for idx in range(len(truth.spec.objects)):
            bbox = truth.object_bbox_px(idx, t_us)
            if bbox is None:
                continue
            u0, v0, u1, v1 = bbox
            # bbox_iou expands pixel boxes by half a pixel, so shrink by half a
            # pixel here to land back on the truth rect (up to rounding).
            det = (
                int(round(u0 + 0.5)),
                int(round(v0 + 0.5)),
                int(round(u1 - 0.5)),
                int(round(v1 - 0.5)),
            )
            centroid = ((u0 + u1) / 2, (v0 + v1) / 2)
            out.detections.append(
                ObjectRecord(
                    slice_index=k,
                    t_mid_us=t_us,
                    object_id=idx,
                    bbox=det,
                    centroid=centroid,
                    edges=(det[0], det[2]),
                    votes=0,
                )
            )
            verts = truth.object_vertices_px(idx, t_us)
            for u, v in verts:
                out.corners.append(Corner(x=float(u), y=float(v), t=t_us, score=1.0))
            rho = truth.object_depth(idx, t_us)
            if rho is not None:
                out.ranges.append(RangeRecord(t_us=t_us, bbox=det, rho=rho))
            out.pois.append(
                PoiRecord(
                    t_us=t_us,
                    track_id=idx,
                    centroid_px=centroid,
                    poi=truth.impact_time(idx),
                )
            )
    out.min_separation = truth.min_separation
    return out
