"""Background-activity noise cancellation.

An incoming event is kept when enough neighboring pixels inside a small
window fired recently; isolated events are discarded as noise. The decision
for each event looks only at the timestamp surface built from events
strictly before it, and the surface is aged with every event (kept or not)
so that correlated noise bursts are judged consistently.

Two equivalent implementations: ``filter_event`` is the per-event reference,
``filter_stream`` runs a compiled kernel over whole arrays. Both must agree
exactly; the test suite enforces this.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundsError
from .events import DEFAULT_HEIGHT, DEFAULT_WIDTH, NEVER, Event, TimestampSurface

try:
    import numba as nb

    _NUMBA_OK = True
except Exception:  # pragma: no cover
    nb = None
    _NUMBA_OK = False


@dataclass(frozen=True)
class FilterParams:
    """window: odd side length (pixels); k_min: required fresh neighbors;
    dt_max_us: neighbor freshness horizon."""

    window: int = 9
    k_min: int = 2
    dt_max_us: int = 5000
    # Discarded events still age the surface by default; flip for experiments.
    update_on_discard: bool = True

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 3")
        if self.k_min < 1:
            raise ValueError("k_min must be >= 1")
        if self.dt_max_us <= 0:
            raise ValueError("dt_max_us must be positive")


def filter_event(e: Event, surface: TimestampSurface, params: FilterParams) -> bool:
    """Decide keep (True) / discard (False) for one event, then age the surface.

    The surface must reflect all events strictly before e. The center pixel is
    excluded from the neighbor count, so an event's own pixel history never
    keeps it alive. Border events use the clipped window; k_min is not
    rescaled there.
    """
    if not (0 <= e.x < surface.width and 0 <= e.y < surface.height):
        raise BoundsError(
            f"event at ({e.x}, {e.y}) outside {surface.width}x{surface.height} sensor"
        )
    half = params.window // 2
    win = surface.window(e.x, e.y, half)
    fresh = (win != NEVER) & ((e.t - win) <= params.dt_max_us)
    fresh[half, half] = False
    keep = int(fresh.sum()) >= params.k_min
    if keep or params.update_on_discard:
        surface.last[e.y, e.x] = e.t
    return keep


if _NUMBA_OK:

    @nb.njit(cache=True)
    def _filter_kernel(t, x, y, last, half, k_min, dt_max, update_on_discard):
        n = t.shape[0]
        keep = np.zeros(n, dtype=np.uint8)
        height, width = last.shape
        for i in range(n):
            xi = int(x[i])
            yi = int(y[i])
            ti = int(t[i])
            x0 = xi - half
            if x0 < 0:
                x0 = 0
            x1 = xi + half
            if x1 > width - 1:
                x1 = width - 1
            y0 = yi - half
            if y0 < 0:
                y0 = 0
            y1 = yi + half
            if y1 > height - 1:
                y1 = height - 1
            cnt = 0
            for yy in range(y0, y1 + 1):
                for xx in range(x0, x1 + 1):
                    if xx == xi and yy == yi:
                        continue
                    tl = last[yy, xx]
                    if tl >= 0 and ti - tl <= dt_max:
                        cnt += 1
                if cnt >= k_min:
                    break
            if cnt >= k_min:
                keep[i] = 1
                last[yi, xi] = ti
            elif update_on_discard:
                last[yi, xi] = ti
        return keep


def filter_mask(
    events: np.ndarray,
    params: FilterParams,
    width: int = DEFAULT_WIDTH,
    height: int = DEFAULT_HEIGHT,
    surface: TimestampSurface | None = None,
    use_kernel: bool | None = None,
) -> np.ndarray:
    """Keep/discard decision per event as a boolean mask.

    A fresh surface is used unless one is passed in; either way the surface
    ends up aged by every event of the stream. use_kernel=None picks the
    compiled kernel when numba is importable.
    """
    if surface is None:
        surface = TimestampSurface(width, height)
    if len(events):
        x, y = events["x"], events["y"]
        if x.min() < 0 or x.max() >= surface.width or y.min() < 0 or y.max() >= surface.height:
            raise BoundsError(
                f"event outside {surface.width}x{surface.height} sensor"
            )
    if use_kernel is None:
        use_kernel = _NUMBA_OK
    half = params.window // 2
    if use_kernel:
        if not _NUMBA_OK:  # pragma: no cover
            raise RuntimeError("numba is not available; pass use_kernel=False")
        keep = _filter_kernel(
            events["t"],
            events["x"],
            events["y"],
            surface.last,
            half,
            params.k_min,
            params.dt_max_us,
            params.update_on_discard,
        )
        return keep.view(np.bool_)
    keep = np.zeros(len(events), dtype=bool)
    for i in range(len(events)):
        e = Event(int(events["t"][i]), int(events["x"][i]), int(events["y"][i]), int(events["p"][i]))
        keep[i] = filter_event(e, surface, params)
    return keep


def filter_stream(
    events: np.ndarray,
    params: FilterParams,
    width: int = DEFAULT_WIDTH,
    height: int = DEFAULT_HEIGHT,
    surface: TimestampSurface | None = None,
    use_kernel: bool | None = None,
) -> tuple[np.ndarray, int]:
    """Filter an ordered stream; returns (kept events, discarded count).

    The kept subsequence preserves input order and together with the
    discarded events partitions the input.
    """
    keep = filter_mask(events, params, width, height, surface, use_kernel)
    kept = events[keep]
    return kept, int(len(events) - len(kept))


class StreamingFilter:
    """Stateful per-event filter for incremental (closed-loop) use.

    Wraps filter_event around a persistent surface so callers can interleave
    event batches with other work without re-reading the stream.
    """

    def __init__(
        self,
        params: FilterParams,
        width: int = DEFAULT_WIDTH,
        height: int = DEFAULT_HEIGHT,
    ):
        self.params = params
        self.surface = TimestampSurface(width, height)
        self.discarded = 0

    def push(self, e: Event) -> bool:
        keep = filter_event(e, self.surface, self.params)
        if not keep:
            self.discarded += 1
        return keep

    def push_batch(self, events: np.ndarray) -> np.ndarray:
        """Filter a batch in stream order; returns the kept subsequence."""
        keep = filter_mask(
            events, self.params, self.surface.width, self.surface.height, self.surface
        )
        self.discarded += int(len(events) - keep.sum())
        return events[keep]
