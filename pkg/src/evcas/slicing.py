"""Count-based event slicing with speed-adaptive slice size.

Events are accumulated into slices of N events each. N adapts between
slices so that the highest-priority object moves about d_target pixels per
slice: too many events smear fast motion, too few starve the detector.
The adaptation law is inverse-proportional with clamping; the change always
takes effect at the next slice boundary, never inside an open slice.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .events import EVENT_DTYPE, Event

# Displacements below this are treated as "no measurable motion".
MIN_DISPLACEMENT_PX = 0.25


@dataclass(frozen=True)
class SlicePolicy:
    n_current: int = 2000
    n_min: int = 500
    n_max: int = 20000
    d_target: float = 3.0  # pixels of object motion per slice
    n_default: int = 2000  # recovery target when nothing is detected

    def __post_init__(self):
        if not (self.n_min <= self.n_current <= self.n_max):
            raise ValueError("n_current must lie within [n_min, n_max]")
        if self.d_target <= 0:
            raise ValueError("d_target must be positive")


@dataclass(frozen=True)
class EventSlice:
    events: np.ndarray  # structured EVENT_DTYPE, owned copy
    t_start: int  # first event's timestamp (us)
    t_end: int  # last event's timestamp (us)
    slice_index: int
    n_target: int  # the N in force when this slice was opened

    def __len__(self) -> int:
        return len(self.events)


def adapt(policy: SlicePolicy, observed_displacement: float) -> SlicePolicy:
    """New policy whose N aims the next slice at d_target pixels of motion.

    n_next = clamp(round(n * d_target / max(observed, 0.25 px)), n_min, n_max).
    """
    if observed_displacement < 0:
        raise ValueError("observed displacement must be >= 0")
    d = max(observed_displacement, MIN_DISPLACEMENT_PX)
    n_next = int(round(policy.n_current * policy.d_target / d))
    n_next = min(max(n_next, policy.n_min), policy.n_max)
    return replace(policy, n_current=n_next)


def relax(policy: SlicePolicy) -> SlicePolicy:
    """Decay N 10% toward the default; used when no object was detected."""
    n_next = int(round(policy.n_current + 0.1 * (policy.n_default - policy.n_current)))
    n_next = min(max(n_next, policy.n_min), policy.n_max)
    return replace(policy, n_current=n_next)


class Slicer:
    """Accumulates events and emits slices of the policy's current size.

    Single-consumer transducer; emitted slices copy their events, so the
    accumulator is never aliased downstream.
    """

    def __init__(self, policy: SlicePolicy | None = None):
        self.policy = policy or SlicePolicy()
        self._buf: list[tuple[int, int, int, int]] = []
        self._n_open: int | None = None
        self._index = 0

    def push(self, e: Event) -> EventSlice | None:
        """Add one event; returns a slice exactly when the count fills up."""
        if self._n_open is None:
            self._n_open = self.policy.n_current
        self._buf.append((e.t, e.x, e.y, e.p))
        if len(self._buf) >= self._n_open:
            return self._emit()
        return None

    def flush(self) -> EventSlice | None:
        """Emit the partial remainder at end of stream (None when empty)."""
        if not self._buf:
            return None
        return self._emit()

    def adapt(self, observed_displacement: float) -> None:
        """Apply the adaptation law; effective from the next slice boundary."""
        self.policy = adapt(self.policy, observed_displacement)

    def relax(self) -> None:
        self.policy = relax(self.policy)

    def _emit(self) -> EventSlice:
        arr = np.array(self._buf, dtype=EVENT_DTYPE)
        s = EventSlice(
            events=arr,
            t_start=int(arr["t"][0]),
            t_end=int(arr["t"][-1]),
            slice_index=self._index,
            n_target=int(self._n_open if self._n_open is not None else self.policy.n_current),
        )
        self._index += 1
        self._buf = []
        self._n_open = None
        return s


def slice_stream(events: np.ndarray, policy: SlicePolicy | None = None) -> list[EventSlice]:
    """Slice a whole stream with a fixed policy, including the remainder."""
    slicer = Slicer(policy)
    out = []
    for t, x, y, p in zip(events["t"], events["x"], events["y"], events["p"]):
        s = slicer.push(Event(int(t), int(x), int(y), int(p)))
        if s is not None:
            out.append(s)
    tail = slicer.flush()
    if tail is not None:
        out.append(tail)
    return out
