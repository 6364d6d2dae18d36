"""Binary event streams (PEV1), ground truth files (GTV1) and raw rasters.

All multi-byte fields are little-endian.

PEV1 layout::

    header  magic "PEV1" | version u32 | height u32 | width u32 |
            frame_count u64 | rep_period f64 | irf_variance f64
    frame   K u32, then K records of (pixel u32, toa f64), pixels ascending

GTV1 layout::

    header  magic "GTV1" | version u32 | height u32 | width u32 |
            frame_count u64 | mode u8
    body    mode 0: one block; mode 1: frame_count blocks.
            A block is the range, signal-fraction and detection-probability
            maps as row-major f64, in that order.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Optional, Union

import numpy as np

from .engine import FrameEvents
from .errors import ParseError
from .scenes import GroundTruthFrame, SceneSpec, is_static, scene_eval

PathLike = Union[str, os.PathLike]

EVENT_MAGIC = b"PEV1"
TRUTH_MAGIC = b"GTV1"
FORMAT_VERSION = 1
_EV_HEADER = struct.Struct("<4sIIIQdd")
_GT_HEADER = struct.Struct("<4sIIIQB")
_COUNT = struct.Struct("<I")
RECORD_DTYPE = np.dtype([("pixel", "<u4"), ("toa", "<f8")])


@dataclass(frozen=True)
class EventStreamHeader:
    height: int
    width: int
    frame_count: int
    rep_period: float
    irf_variance: float
    version: int = FORMAT_VERSION

    def pack(self) -> bytes:
        return _EV_HEADER.pack(EVENT_MAGIC, self.version, self.height, self.width,
                               self.frame_count, self.rep_period, self.irf_variance)


@dataclass(frozen=True)
class GroundTruthHeader:
    height: int
    width: int
    frame_count: int
    mode: int
    version: int = FORMAT_VERSION

    def pack(self) -> bytes:
        return _GT_HEADER.pack(TRUTH_MAGIC, self.version, self.height, self.width, self.frame_count, self.mode)

    @property
    def block_bytes(self) -> int:
        return 3 * self.height * self.width * 8

    @property
    def expected_size(self) -> int:
        blocks = 1 if self.mode == 0 else self.frame_count
        return _GT_HEADER.size + blocks * self.block_bytes


# ---------------------------------------------------------------------------
# event streams


class EventStreamWriter:
    """Write frames one at a time; the header's frame count is patched on close."""

    def __init__(self, path: PathLike, height: int, width: int, rep_period: float, irf_variance: float):
        self.path = Path(path)
        self._fh: BinaryIO = open(self.path, "wb")
        self._proto = EventStreamHeader(height, width, 0, rep_period, irf_variance)
        self._fh.write(self._proto.pack())
        self.frames_written = 0

    def write_frame(self, events: FrameEvents) -> None:
        if events.frame_index != self.frames_written + 1:
            raise ValueError(f"expected frame {self.frames_written + 1}, got {events.frame_index}")
        events.validate(self._proto.height * self._proto.width, self._proto.rep_period)
        rec = np.empty(len(events), dtype=RECORD_DTYPE)
        rec["pixel"] = events.pixels
        rec["toa"] = events.toas
        self._fh.write(_COUNT.pack(len(events)))
        self._fh.write(rec.tobytes())
        self.frames_written += 1

    def close(self) -> None:
        if self._fh.closed:
            return
        self._fh.seek(0)
        hdr = EventStreamHeader(self._proto.height, self._proto.width, self.frames_written,
                                self._proto.rep_period, self._proto.irf_variance)
        self._fh.write(hdr.pack())
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _parse_event_header(raw: bytes, where: str) -> EventStreamHeader:
    if len(raw) < _EV_HEADER.size:
        raise ParseError(f"{where}: truncated header ({len(raw)} of {_EV_HEADER.size} bytes)")
    magic, version, h, w, n, t_r, s2 = _EV_HEADER.unpack(raw)
    if magic != EVENT_MAGIC:
        raise ParseError(f"{where}: bad magic {magic!r}, expected {EVENT_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise ParseError(f"{where}: unsupported version {version}")
    if h == 0 or w == 0:
        raise ParseError(f"{where}: zero image dimension {h}x{w}")
    if not (np.isfinite(t_r) and t_r > 0):
        raise ParseError(f"{where}: invalid rep_period {t_r}")
    if not (np.isfinite(s2) and s2 > 0):
        raise ParseError(f"{where}: invalid irf_variance {s2}")
    return EventStreamHeader(h, w, n, t_r, s2, version)


class EventStreamReader:
    """Lazy frame-by-frame reader; only one frame is ever held in memory."""

    def __init__(self, path: PathLike):
        self.path = Path(path)
        self._fh: BinaryIO = open(self.path, "rb")
        try:
            self.header = _parse_event_header(self._fh.read(_EV_HEADER.size), str(self.path))
        except Exception:
            self._fh.close()
            raise

    def __iter__(self) -> Iterator[FrameEvents]:
        hdr = self.header
        n_pix = hdr.height * hdr.width
        fh = self._fh
        fh.seek(_EV_HEADER.size)
        for f in range(1, hdr.frame_count + 1):
            off = fh.tell()
            raw = fh.read(_COUNT.size)
            if len(raw) < _COUNT.size:
                raise ParseError(f"{self.path}: frame {f} at byte {off}: truncated detection count")
            (k,) = _COUNT.unpack(raw)
            if k > n_pix:
                raise ParseError(f"{self.path}: frame {f} at byte {off}: {k} detections for {n_pix} pixels")
            body = fh.read(k * RECORD_DTYPE.itemsize)
            if len(body) < k * RECORD_DTYPE.itemsize:
                raise ParseError(f"{self.path}: frame {f} at byte {off}: truncated records")
            rec = np.frombuffer(body, dtype=RECORD_DTYPE)
            pix = rec["pixel"].astype(np.int64)
            toa = rec["toa"].astype(np.float64)
            if k and (np.any(np.diff(pix) <= 0) or pix[-1] >= n_pix):
                raise ParseError(f"{self.path}: frame {f} at byte {off}: pixel indices not ascending or out of range")
            if k and not np.all((toa >= 0) & (toa < hdr.rep_period)):
                raise ParseError(f"{self.path}: frame {f} at byte {off}: ToA outside [0, {hdr.rep_period})")
            yield FrameEvents(f, pix, toa)
        if fh.read(1):
            raise ParseError(f"{self.path}: trailing bytes after frame {hdr.frame_count} at byte {fh.tell() - 1}")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass(frozen=True)
class EventStream:
    header: EventStreamHeader
    frames: list[FrameEvents]


def write_events(stream: EventStream, path: PathLike) -> None:
    h = stream.header
    with EventStreamWriter(path, h.height, h.width, h.rep_period, h.irf_variance) as w:
        for ev in stream.frames:
            w.write_frame(ev)


def read_events(path: PathLike) -> EventStream:
    with EventStreamReader(path) as r:
        return EventStream(r.header, list(r))


# ---------------------------------------------------------------------------
# ground truth


def write_truth(path: PathLike, spec: SceneSpec, static: Optional[bool] = None) -> GroundTruthHeader:
    """Write every frame of ``spec`` (one block only for static scenes)."""
    static = is_static(spec) if static is None else static
    h, w = spec.dims
    hdr = GroundTruthHeader(h, w, spec.frames, 0 if static else 1)
    with open(path, "wb") as fh:
        fh.write(hdr.pack())
        for n in range(1 if static else spec.frames):
            _write_block(fh, scene_eval(spec, n))
    return hdr


def write_truth_frames(path: PathLike, frames: Iterable[GroundTruthFrame], frame_count: int, shape) -> GroundTruthHeader:
    hdr = GroundTruthHeader(shape[0], shape[1], frame_count, 1)
    written = 0
    with open(path, "wb") as fh:
        fh.write(hdr.pack())
        for gt in frames:
            _write_block(fh, gt)
            written += 1
    if written != frame_count:
        raise ValueError(f"wrote {written} truth frames, header says {frame_count}")
    return hdr


def _write_block(fh: BinaryIO, gt: GroundTruthFrame) -> None:
    for arr in (gt.range_map, gt.signal_frac_map, gt.detect_prob_map):
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


class TruthReader:
    """Random access to GTV1 frames; static files serve the same block for every frame."""

    def __init__(self, path: PathLike):
        self.path = Path(path)
        size = self.path.stat().st_size
        self._fh: BinaryIO = open(self.path, "rb")
        raw = self._fh.read(_GT_HEADER.size)
        where = str(self.path)
        try:
            if len(raw) < _GT_HEADER.size:
                raise ParseError(f"{where}: truncated header ({len(raw)} of {_GT_HEADER.size} bytes)")
            magic, version, h, w, n, mode = _GT_HEADER.unpack(raw)
            if magic != TRUTH_MAGIC:
                raise ParseError(f"{where}: bad magic {magic!r}, expected {TRUTH_MAGIC!r}")
            if version != FORMAT_VERSION:
                raise ParseError(f"{where}: unsupported version {version}")
            if h == 0 or w == 0:
                raise ParseError(f"{where}: zero image dimension {h}x{w}")
            if mode not in (0, 1):
                raise ParseError(f"{where}: unknown mode byte {mode}")
            self.header = GroundTruthHeader(h, w, n, mode, version)
            if size != self.header.expected_size:
                raise ParseError(f"{where}: file has {size} bytes, header implies {self.header.expected_size}")
        except ParseError:
            self._fh.close()
            raise
        self._static: Optional[GroundTruthFrame] = None

    @property
    def is_static(self) -> bool:
        return self.header.mode == 0

    def frame(self, n: int) -> GroundTruthFrame:
        """Truth for scene frame ``n`` (0-based; event frame ``n + 1``)."""
        hdr = self.header
        if not 0 <= n < hdr.frame_count:
            raise IndexError(f"truth frame {n} outside [0, {hdr.frame_count})")
        if self.is_static:
            if self._static is None:
                self._static = self._read_block(0)
            return self._static
        return self._read_block(n)

    def _read_block(self, b: int) -> GroundTruthFrame:
        hdr = self.header
        self._fh.seek(_GT_HEADER.size + b * hdr.block_bytes)
        data = np.frombuffer(self._fh.read(hdr.block_bytes), dtype="<f8").astype(np.float64)
        data = data.reshape(3, hdr.height, hdr.width)
        try:
            return GroundTruthFrame(data[0], data[1], data[2])
        except ValueError as e:
            raise ParseError(f"{self.path}: block {b}: {e}") from e

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_truth(path: PathLike) -> tuple[GroundTruthHeader, list[GroundTruthFrame]]:
    with TruthReader(path) as r:
        blocks = 1 if r.is_static else r.header.frame_count
        return r.header, [r._read_block(b) for b in range(blocks)]


# ---------------------------------------------------------------------------
# rasters


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".hdr")


def write_raster(path: PathLike, array: np.ndarray, **meta) -> None:
    """Raw row-major little-endian f64 block plus a ``<name>.hdr`` text sidecar."""
    path = Path(path)
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("rasters are 2-D")
    path.write_bytes(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    lines = [f"height = {arr.shape[0]}", f"width = {arr.shape[1]}", "dtype = float64-le"]
    lines += [f"{k} = {v}" for k, v in meta.items()]
    _sidecar(path).write_text("\n".join(lines) + "\n")


def read_raster_header(path: PathLike) -> dict[str, str]:
    out = {}
    for line in _sidecar(Path(path)).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def read_raster(path: PathLike) -> np.ndarray:
    path = Path(path)
    meta = read_raster_header(path)
    try:
        h, w = int(meta["height"]), int(meta["width"])
    except (KeyError, ValueError) as e:
        raise ParseError(f"{path}: raster sidecar lacks height/width") from e
    raw = path.read_bytes()
    if len(raw) != h * w * 8:
        raise ParseError(f"{path}: {len(raw)} bytes, sidecar implies {h * w * 8}")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(h, w)
