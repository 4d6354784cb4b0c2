"""Grayscale rendering of event batches for visual inspection."""

from __future__ import annotations

import numpy as np

from .errors import BoundsError
from .events import DEFAULT_HEIGHT, DEFAULT_WIDTH

BACKGROUND = 128
STEP = 32  # intensity step per net polarity count


def render_event_frame(
    events: np.ndarray, width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT
) -> np.ndarray:
    """Accumulate events into a mid-gray image; ON brightens, OFF darkens.

    Pixel value is 128 + 32 * (n_on - n_off), clipped to [0, 255].
    Deterministic for a fixed input.
    """
    if len(events):
        x, y = events["x"], events["y"]
        if x.min() < 0 or x.max() >= width or y.min() < 0 or y.max() >= height:
            raise BoundsError(f"event outside {width}x{height} sensor")
    net = np.zeros((height, width), dtype=np.int64)
    if len(events):
        sign = np.where(events["p"] > 0, 1, -1)
        np.add.at(net, (events["y"], events["x"]), sign)
    img = np.clip(BACKGROUND + STEP * net, 0, 255).astype(np.uint8)
    return img
