"""Event stream file I/O, pose/intrinsics files, and PGM frame export.

Two event formats:

* text — one event per line, ASCII ``t x y p``; ``t`` either decimal seconds
  or integer microseconds (caller-selected), ``p`` in {0, 1}.
* binary — 16-byte header (magic ``EVS1``, u16 width, u16 height, 8 reserved
  bytes), then packed little-endian 13-byte records (u64 t_us, u16 x, u16 y,
  u8 p).
"""

from __future__ import annotations

import io
import json
import os
from typing import BinaryIO, Union

import numpy as np

from .errors import OrderingError, ParseError
from .events import DEFAULT_HEIGHT, DEFAULT_WIDTH, EVENT_DTYPE, CameraPose, SensorGeometry

MAGIC = b"EVS1"
HEADER_SIZE = 16

# On-disk record layout; in-memory arrays use EVENT_DTYPE instead.
RECORD_DTYPE = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")]
)
assert RECORD_DTYPE.itemsize == 13

Source = Union[str, os.PathLike, BinaryIO]


def _open(source: Source, mode: str):
    if isinstance(source, (str, os.PathLike)):
        return open(source, mode), True
    return source, False


def _check_order(t: np.ndarray, tolerance_us: int) -> None:
    if len(t) < 2:
        return
    d = np.diff(t)
    bad = np.nonzero(d < -tolerance_us)[0]
    if len(bad):
        i = int(bad[0])
        raise OrderingError(
            f"timestamp regression at record {i + 2}: "
            f"{int(t[i + 1])} after {int(t[i])} (tolerance {tolerance_us} us)",
            index=i + 1,
        )


def read_events(
    source: Source,
    fmt: str = "text",
    time_unit: str = "seconds",
    tolerance_us: int = 0,
) -> np.ndarray:
    """Read an event stream into a structured array (EVENT_DTYPE).

    time_unit applies to the text format only: "seconds" parses decimal
    seconds, "microseconds" parses integer microseconds. Regressions beyond
    tolerance_us raise OrderingError; smaller jitter passes through as-is.
    """
    if fmt == "text":
        arr = _read_text(source, time_unit)
    elif fmt == "binary":
        arr = _read_binary(source)
    else:
        raise ValueError(f"unknown event format: {fmt!r}")
    _check_order(arr["t"], tolerance_us)
    return arr


def _read_text(source: Source, time_unit: str) -> np.ndarray:
    if time_unit not in ("seconds", "microseconds"):
        raise ValueError(f"unknown time unit: {time_unit!r}")
    f, close = _open(source, "rb")
    try:
        rows = []
        for lineno, raw in enumerate(f, start=1):
            line = raw.decode("ascii", errors="replace").strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ParseError(f"expected 4 fields, got {len(parts)}", line=lineno)
            try:
                if time_unit == "seconds":
                    t = round(float(parts[0]) * 1e6)
                else:
                    t = int(parts[0])
                x = int(parts[1])
                y = int(parts[2])
                p = int(parts[3])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from exc
            if p not in (0, 1):
                raise ParseError(f"polarity must be 0 or 1, got {p}", line=lineno)
            if t < 0:
                raise ParseError(f"negative timestamp {t}", line=lineno)
            rows.append((t, x, y, p))
        arr = np.empty(len(rows), dtype=EVENT_DTYPE)
        for i, r in enumerate(rows):
            arr[i] = r
        return arr
    finally:
        if close:
            f.close()


def _read_binary(source: Source) -> np.ndarray:
    f, close = _open(source, "rb")
    try:
        header = f.read(HEADER_SIZE)
        if len(header) == 0:
            return np.empty(0, dtype=EVENT_DTYPE)
        if len(header) < HEADER_SIZE or header[:4] != MAGIC:
            raise ParseError("bad or truncated header (expected EVS1 magic)", line=1)
        payload = f.read()
        if len(payload) % RECORD_DTYPE.itemsize != 0:
            raise ParseError(
                f"truncated record: {len(payload)} bytes is not a multiple of "
                f"{RECORD_DTYPE.itemsize}",
                line=1 + len(payload) // RECORD_DTYPE.itemsize,
            )
        raw = np.frombuffer(payload, dtype=RECORD_DTYPE)
        arr = np.empty(len(raw), dtype=EVENT_DTYPE)
        arr["t"] = raw["t"].astype(np.int64)
        arr["x"] = raw["x"]
        arr["y"] = raw["y"]
        arr["p"] = raw["p"]
        return arr
    finally:
        if close:
            f.close()


def binary_header(source: Source) -> tuple[int, int]:
    """Sensor (width, height) recorded in a binary stream's header."""
    f, close = _open(source, "rb")
    try:
        header = f.read(HEADER_SIZE)
        if len(header) < HEADER_SIZE or header[:4] != MAGIC:
            raise ParseError("bad or truncated header (expected EVS1 magic)", line=1)
        width = int.from_bytes(header[4:6], "little")
        height = int.from_bytes(header[6:8], "little")
        return width, height
    finally:
        if close:
            f.close()


def write_events(
    events: np.ndarray,
    sink: Source,
    fmt: str = "text",
    time_unit: str = "seconds",
    width: int = DEFAULT_WIDTH,
    height: int = DEFAULT_HEIGHT,
) -> int:
    """Write an event stream; returns the number of bytes written.

    Output parses back to an identical array with read_events (round-trip).
    """
    f, close = _open(sink, "wb")
    try:
        if fmt == "text":
            buf = io.StringIO()
            if time_unit == "seconds":
                for t, x, y, p in zip(events["t"], events["x"], events["y"], events["p"]):
                    buf.write(f"{t / 1e6:.6f} {x} {y} {p}\n")
            elif time_unit == "microseconds":
                for t, x, y, p in zip(events["t"], events["x"], events["y"], events["p"]):
                    buf.write(f"{t} {x} {y} {p}\n")
            else:
                raise ValueError(f"unknown time unit: {time_unit!r}")
            data = buf.getvalue().encode("ascii")
            f.write(data)
            return len(data)
        elif fmt == "binary":
            header = MAGIC + int(width).to_bytes(2, "little") + int(height).to_bytes(
                2, "little"
            ) + b"\x00" * 8
            f.write(header)
            raw = np.empty(len(events), dtype=RECORD_DTYPE)
            raw["t"] = events["t"].astype(np.uint64)
            raw["x"] = events["x"].astype(np.uint16)
            raw["y"] = events["y"].astype(np.uint16)
            raw["p"] = events["p"]
            data = raw.tobytes()
            f.write(data)
            return HEADER_SIZE + len(data)
        raise ValueError(f"unknown event format: {fmt!r}")
    finally:
        if close:
            f.close()


def write_pgm(image: np.ndarray, sink: Source) -> int:
    """Write a grayscale image as binary PGM (P5), one byte per pixel."""
    img = np.asarray(image, dtype=np.uint8)
    if img.ndim != 2:
        raise ValueError("PGM export expects a 2D grayscale image")
    h, w = img.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    f, close = _open(sink, "wb")
    try:
        f.write(header)
        f.write(img.tobytes())
        return len(header) + img.size
    finally:
        if close:
            f.close()


def read_pgm(source: Source) -> np.ndarray:
    f, close = _open(source, "rb")
    try:
        data = f.read()
    finally:
        if close:
            f.close()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise ParseError("not a binary PGM (P5) file", line=1)
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ParseError(f"unsupported maxval {maxval}", line=1)
    pos += 1  # single whitespace after maxval
    pixels = np.frombuffer(data[pos : pos + w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise ParseError("truncated pixel data", line=1)
    return pixels.reshape(h, w).copy()


def write_poses(poses: list[tuple[int, CameraPose]], sink: Source) -> int:
    """Pose trajectory as JSON lines: {t_us, quaternion wxyz, translation xyz}."""
    lines = []
    for t_us, pose in poses:
        q = pose.to_quaternion()
        rec = {
            "t_us": int(t_us),
            "quaternion": [q[0], q[1], q[2], q[3]],
            "translation": [float(v) for v in pose.translation],
        }
        lines.append(json.dumps(rec))
    data = ("\n".join(lines) + ("\n" if lines else "")).encode("ascii")
    f, close = _open(sink, "wb")
    try:
        f.write(data)
        return len(data)
    finally:
        if close:
            f.close()


def read_poses(source: Source) -> list[tuple[int, CameraPose]]:
    f, close = _open(source, "rb")
    try:
        out = []
        for lineno, raw in enumerate(f, start=1):
            line = raw.decode("ascii").strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                pose = CameraPose.from_quaternion(rec["quaternion"], rec["translation"])
                out.append((int(rec["t_us"]), pose))
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise ParseError(str(exc), line=lineno) from exc
        return out
    finally:
        if close:
            f.close()


def write_geometry(geometry: SensorGeometry, sink: Source) -> int:
    rec = {
        "fx": geometry.fx,
        "fy": geometry.fy,
        "cx": geometry.cx,
        "cy": geometry.cy,
        "width": geometry.width,
        "height": geometry.height,
    }
    data = (json.dumps(rec, indent=2) + "\n").encode("ascii")
    f, close = _open(sink, "wb")
    try:
        f.write(data)
        return len(data)
    finally:
        if close:
            f.close()


def read_geometry(source: Source) -> SensorGeometry:
    f, close = _open(source, "rb")
    try:
        rec = json.loads(f.read().decode("ascii"))
    finally:
        if close:
            f.close()
    return SensorGeometry(
        width=int(rec["width"]),
        height=int(rec["height"]),
        fx=float(rec["fx"]),
        fy=float(rec["fy"]),
        cx=float(rec["cx"]),
        cy=float(rec["cy"]),
    )
