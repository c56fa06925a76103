"""Technical metadata extraction, 1 fps frame sampling, and pixel preparation.

Probing goes through a pluggable tool. ``FfprobeTool`` shells out to ffprobe
in JSON mode (streams[], format.duration, format.bit_rate, and the packet
list for the head/tail bitrate windows). ``DecoderProbeTool`` is a built-in
fallback for hosts without ffprobe: it decodes with OpenCV and reads per-frame
sizes/timestamps straight from the mp4 sample tables when the container
allows, so the bitrate trend stays available.
"""

from __future__ import annotations

import json
import math
import shutil
import struct
import subprocess
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np
from pydantic import model_validator

from .domain import (
    BitrateTrend,
    BoundingRegion,
    FrameSample,
    FrozenModel,
    MediaInput,
    MediaKind,
    MediaMetadata,
)
from .errors import ProbeError, ProbeToolMissing

# relative bitrate change below which the trend counts as constant
TREND_DELTA_LIMIT = 0.1
# constant-high vs constant-low split, bits/second (3 Mbps)
HIGH_BITRATE_BPS = 3_000_000
# head/tail windows cover the first and last 10% of the duration
WINDOW_FRACTION = 0.1


class BitrateWindow(FrozenModel):
    """Mean bitrate over the head and tail windows plus the relative change."""

    b_head: float
    b_tail: float
    delta: float

    @model_validator(mode="after")
    def _consistent(self) -> "BitrateWindow":
        if self.b_head < 0 or self.b_tail < 0:
            raise ValueError("window bitrates must be >= 0")
        expect = (self.b_tail - self.b_head) / max(self.b_head, 1.0)
        if not math.isclose(self.delta, expect, rel_tol=0, abs_tol=1e-9):
            raise ValueError(f"delta {self.delta} inconsistent with rates (expected {expect})")
        return self

    @classmethod
    def from_rates(cls, b_head: float, b_tail: float) -> "BitrateWindow":
        return cls(b_head=b_head, b_tail=b_tail, delta=(b_tail - b_head) / max(b_head, 1.0))


def classify_trend(b_head: float, b_tail: float, b_avg: float) -> BitrateTrend:
    """Four-class bitrate trend from head/tail window rates and the average rate.

    The relative change ratio decides increasing/decreasing with a strict
    |delta| > 0.1 test; the constant cases split on the average bitrate
    against the 3 Mbps threshold.
    """
    delta = (b_tail - b_head) / max(b_head, 1.0)
    if delta > TREND_DELTA_LIMIT:
        return BitrateTrend.increasing
    if delta < -TREND_DELTA_LIMIT:
        return BitrateTrend.decreasing
    if b_avg > HIGH_BITRATE_BPS:
        return BitrateTrend.constant_high
    return BitrateTrend.constant_low


def bitrate_windows(packets: Sequence[tuple[float, int]], duration: float) -> BitrateWindow:
    """Head/tail window rates from (timestamp seconds, size bytes) packet stats.

    A window with no packets falls back to the single first/last packet.
    """
    if duration <= 0:
        raise ProbeError("cannot compute bitrate windows for zero duration")
    window = WINDOW_FRACTION * duration
    head_end = window
    tail_start = duration - window
    ordered = sorted(packets, key=lambda p: p[0])
    head_bytes = sum(size for t, size in ordered if t < head_end)
    tail_bytes = sum(size for t, size in ordered if t >= tail_start)
    if head_bytes == 0 and ordered:
        head_bytes = ordered[0][1]
    if tail_bytes == 0 and ordered:
        tail_bytes = ordered[-1][1]
    return BitrateWindow.from_rates(head_bytes * 8 / window, tail_bytes * 8 / window)


class FfprobeTool:
    """ffprobe in JSON-output mode; the primary probe backend."""

    def __init__(self, binary: str = "ffprobe"):
        self.binary = binary

    def available(self) -> bool:
        return shutil.which(self.binary) is not None

    def _run(self, args: list[str]) -> dict:
        try:
            proc = subprocess.run(
                [self.binary, "-v", "error", "-print_format", "json", *args],
                capture_output=True,
                text=True,
                check=False,
            )
        except FileNotFoundError as exc:
            raise ProbeToolMissing(f"probe tool {self.binary!r} not found on PATH") from exc
        if proc.returncode != 0:
            raise ProbeError(f"{self.binary} failed: {proc.stderr.strip()[:300]}")
        try:
            return json.loads(proc.stdout)
        except ValueError as exc:
            raise ProbeError(f"unparseable {self.binary} output") from exc

    def probe(self, media: MediaInput) -> MediaMetadata:
        doc = self._run(["-show_format", "-show_streams", str(media.path)])
        meta = parse_probe_document(doc, media)
        if media.kind is MediaKind.video and meta.duration:
            try:
                packets = self.video_packets(media.path)
            except ProbeError:
                packets = []
            if packets:
                win = bitrate_windows(packets, meta.duration)
                trend = classify_trend(win.b_head, win.b_tail, meta.avg_bitrate or 0.0)
                meta = meta.model_copy(update={"bitrate_trend": trend})
        return meta

    def video_packets(self, path: str | Path) -> list[tuple[float, int]]:
        doc = self._run(
            [
                "-select_streams",
                "v:0",
                "-show_entries",
                "packet=pts_time,dts_time,size",
                str(path),
            ]
        )
        return parse_packet_document(doc)


def parse_probe_document(doc: dict, media: MediaInput) -> MediaMetadata:
    """MediaMetadata from an ffprobe -show_format -show_streams JSON document."""
    streams = doc.get("streams") or []
    video = next((s for s in streams if s.get("codec_type") == "video"), None)
    if video is None or "width" not in video or "height" not in video:
        raise ProbeError("no video stream with dimensions in probe output")
    resolution = (int(video["width"]), int(video["height"]))
    if media.kind is MediaKind.image:
        return MediaMetadata(resolution=resolution)

    fmt = doc.get("format") or {}
    frame_rate = _parse_rate(video.get("avg_frame_rate")) or _parse_rate(video.get("r_frame_rate"))
    duration = _parse_float(fmt.get("duration")) or _parse_float(video.get("duration"))
    if duration is not None and duration <= 0:
        raise ProbeError("zero-duration stream")
    bitrate = _parse_float(fmt.get("bit_rate")) or _parse_float(video.get("bit_rate"))
    if bitrate is None and duration:
        size = _parse_float(fmt.get("size"))
        if size is None:
            size = float(Path(media.path).stat().st_size)
        bitrate = 8.0 * size / duration
    return MediaMetadata(
        resolution=resolution,
        frame_rate=frame_rate,
        duration=duration,
        avg_bitrate=bitrate if bitrate and bitrate > 0 else None,
    )


def parse_packet_document(doc: dict) -> list[tuple[float, int]]:
    out = []
    for pkt in doc.get("packets") or []:
        t = _parse_float(pkt.get("pts_time"))
        if t is None:  # t == 0.0 is a valid timestamp, so no `or` chaining
            t = _parse_float(pkt.get("dts_time"))
        size = _parse_float(pkt.get("size"))
        if t is None or size is None:
            continue
        out.append((t, int(size)))
    return out


def _parse_rate(value) -> float | None:
    if not value or value in ("0/0", "N/A"):
        return None
    try:
        return float(Fraction(value))
    except (ValueError, ZeroDivisionError):
        return _parse_float(value)


def _parse_float(value) -> float | None:
    if value is None:
        return None
    try:
        return float(value)
    except (TypeError, ValueError):
        return None


class DecoderProbeTool:
    """Built-in probe backend: OpenCV decode plus mp4 sample-table statistics."""

    def probe(self, media: MediaInput) -> MediaMetadata:
        if media.kind is MediaKind.image:
            img = cv2.imread(media.path)
            if img is None:
                raise ProbeError(f"unparseable image: {media.path}")
            h, w = img.shape[:2]
            return MediaMetadata(resolution=(w, h))

        cap = cv2.VideoCapture(media.path)
        try:
            if not cap.isOpened():
                raise ProbeError(f"unparseable video: {media.path}")
            width = int(cap.get(cv2.CAP_PROP_FRAME_WIDTH))
            height = int(cap.get(cv2.CAP_PROP_FRAME_HEIGHT))
            fps = float(cap.get(cv2.CAP_PROP_FPS))
            n_frames = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
        finally:
            cap.release()
        if width <= 0 or height <= 0 or fps <= 0 or n_frames <= 0:
            raise ProbeError(f"unparseable video: {media.path}")
        duration = n_frames / fps
        if duration <= 0:
            raise ProbeError("zero-duration stream")

        samples = mp4_video_samples(media.path)
        if samples:
            total_bytes = sum(size for _, size in samples)
            avg_bitrate = total_bytes * 8 / duration
            win = bitrate_windows(samples, duration)
            trend = classify_trend(win.b_head, win.b_tail, avg_bitrate)
        else:
            avg_bitrate = 8.0 * Path(media.path).stat().st_size / duration
            trend = None
        return MediaMetadata(
            resolution=(width, height),
            frame_rate=fps,
            duration=duration,
            avg_bitrate=avg_bitrate if avg_bitrate > 0 else None,
            bitrate_trend=trend,
        )


def default_probe_tool():
    tool = FfprobeTool()
    return tool if tool.available() else DecoderProbeTool()


def probe(media: MediaInput, tool=None) -> MediaMetadata:
    """Extract technical metadata; images carry only the spatial resolution."""
    if tool is None:
        tool = default_probe_tool()
    meta = tool.probe(media)
    if media.kind is MediaKind.image:
        # image inputs never carry temporal/bitrate fields
        return MediaMetadata(resolution=meta.resolution)
    return meta


# --- minimal ISO-BMFF reader for per-frame (timestamp, size) statistics ---

_CONTAINER_BOXES = {b"moov", b"trak", b"mdia", b"minf", b"stbl"}


def mp4_video_samples(path: str | Path) -> list[tuple[float, int]] | None:
    """(timestamp seconds, size bytes) per sample of the first video track.

    Reads mdhd (timescale), stts (sample durations), hdlr (track type) and
    stsz (sample sizes). Returns None when the container is not mp4-like or
    any table is missing.
    """
    try:
        data = Path(path).read_bytes()
        for trak in _iter_boxes(data, 0, len(data), [b"moov", b"trak"]):
            hdlr = _find_box(data, trak, [b"mdia", b"hdlr"])
            # handler_type sits at body offset 8 (after version/flags + pre_defined)
            if hdlr is None or data[hdlr[0] + 8 : hdlr[0] + 12] != b"vide":
                continue
            mdhd = _find_box(data, trak, [b"mdia", b"mdhd"])
            stts = _find_box(data, trak, [b"mdia", b"minf", b"stbl", b"stts"])
            stsz = _find_box(data, trak, [b"mdia", b"minf", b"stbl", b"stsz"])
            if not (mdhd and stts and stsz):
                return None
            timescale = _mdhd_timescale(data, mdhd)
            times = _stts_times(data, stts, timescale)
            sizes = _stsz_sizes(data, stsz)
            if not times or len(times) != len(sizes):
                return None
            return list(zip(times, sizes))
        return None
    except (struct.error, IndexError, ValueError):
        return None


def _iter_boxes(data: bytes, start: int, end: int, path: list[bytes]):
    target, rest = path[0], path[1:]
    off = start
    while off + 8 <= end:
        size = struct.unpack(">I", data[off : off + 4])[0]
        btype = data[off + 4 : off + 8]
        header = 8
        if size == 1:
            size = struct.unpack(">Q", data[off + 8 : off + 16])[0]
            header = 16
        elif size == 0:
            size = end - off
        if size < header:
            return
        if btype == target:
            if not rest:
                yield (off + header, off + size)
            else:
                yield from _iter_boxes(data, off + header, off + size, rest)
        off += size


def _find_box(data: bytes, span: tuple[int, int], path: list[bytes]) -> tuple[int, int] | None:
    return next(_iter_boxes(data, span[0], span[1], path), None)


def _mdhd_timescale(data: bytes, span: tuple[int, int]) -> int:
    off = span[0]
    version = data[off]
    if version == 0:
        return struct.unpack(">I", data[off + 12 : off + 16])[0]
    return struct.unpack(">I", data[off + 20 : off + 24])[0]


def _stts_times(data: bytes, span: tuple[int, int], timescale: int) -> list[float]:
    off = span[0]
    count = struct.unpack(">I", data[off + 4 : off + 8])[0]
    entries = struct.unpack(f">{2 * count}I", data[off + 8 : off + 8 + 8 * count])
    times, t = [], 0
    for i in range(count):
        n, dur = entries[2 * i], entries[2 * i + 1]
        for _ in range(n):
            times.append(t / timescale)
            t += dur
    return times


def _stsz_sizes(data: bytes, span: tuple[int, int]) -> list[int]:
    off = span[0]
    uniform, count = struct.unpack(">II", data[off + 4 : off + 12])
    if uniform:
        return [uniform] * count
    return list(struct.unpack(f">{count}I", data[off + 12 : off + 12 + 4 * count]))


# --- frame sampling and pixel preparation ---


def sample_frames(media: MediaInput, fps: float = 1.0) -> list[FrameSample]:
    """One frame per 1/fps seconds (nearest decodable frame to each target);
    images yield a single sample at t=0. The reference policy is fps=1."""
    if fps <= 0:
        raise ValueError(f"sampling fps must be > 0, got {fps}")
    if media.kind is MediaKind.image:
        img = cv2.imread(media.path)
        if img is None:
            raise ProbeError(f"cannot decode image: {media.path}")
        return [FrameSample(timestamp=0.0, index=0, pixels=img)]

    cap = cv2.VideoCapture(media.path)
    if not cap.isOpened():
        raise ProbeError(f"cannot decode video: {media.path}")
    video_fps = float(cap.get(cv2.CAP_PROP_FPS))
    n_frames = 0
    while cap.grab():
        n_frames += 1
    cap.release()
    if video_fps <= 0 or n_frames == 0:
        raise ProbeError(f"cannot decode video: {media.path}")

    duration = n_frames / video_fps
    targets = [k / fps for k in range(int(math.floor(duration * fps)) + 1)]
    chosen: list[int] = []
    used: set[int] = set()
    for target in targets:
        idx = min(round(target * video_fps), n_frames - 1)
        # round() can land a hair off for fractional rates; check neighbors
        best = min(
            (i for i in (idx - 1, idx, idx + 1) if 0 <= i < n_frames),
            key=lambda i: (abs(i / video_fps - target), i),
        )
        if best in used:
            continue
        used.add(best)
        chosen.append(best)

    samples: list[FrameSample] = []
    cap = cv2.VideoCapture(media.path)
    want = set(chosen)
    idx = 0
    while want:
        ok, frame = cap.read()
        if not ok:
            break
        if idx in want:
            samples.append(FrameSample(timestamp=idx / video_fps, index=idx, pixels=frame))
            want.discard(idx)
        idx += 1
    cap.release()
    if not samples:
        raise ProbeError(f"no decodable frames in {media.path}")
    samples.sort(key=lambda s: s.timestamp)
    return samples


def prepare_for_role(frames: Sequence[FrameSample], role: str, size: int = 448) -> list[FrameSample]:
    """Main-role frames are resized (aspect-distorting) to size x size; the
    aux role sees original-resolution pixels untouched."""
    if role == "aux":
        return list(frames)
    if role != "main":
        raise ValueError(f"unknown role {role!r}")
    out = []
    for f in frames:
        if f.width == size and f.height == size:
            out.append(f)
        else:
            resized = cv2.resize(f.pixels, (size, size), interpolation=cv2.INTER_LINEAR)
            out.append(FrameSample(timestamp=f.timestamp, index=f.index, pixels=resized))
    return out


@dataclass
class CropResult:
    pixels: np.ndarray
    box: tuple[int, int, int, int]
    fallback: bool


def crop_subject(
    frame: FrameSample,
    regions: Sequence[BoundingRegion],
    focus: str | None = None,
) -> CropResult:
    """Subject-centric crop: union of region boxes padded by 10% per side.

    ``focus`` is accepted for call-site symmetry but never filters pixels;
    it is passed to the model as text only. No regions means the full frame
    is returned with the fallback flag set.
    """
    del focus
    h, w = frame.pixels.shape[:2]
    if not regions:
        return CropResult(pixels=frame.pixels, box=(0, 0, w, h), fallback=True)
    for r in regions:
        r.check_within(w, h)
    x0 = min(r.x0 for r in regions)
    y0 = min(r.y0 for r in regions)
    x1 = max(r.x1 for r in regions)
    y1 = max(r.y1 for r in regions)
    pad_x = 0.1 * (x1 - x0)
    pad_y = 0.1 * (y1 - y0)
    cx0 = int(math.floor(max(0.0, x0 - pad_x)))
    cy0 = int(math.floor(max(0.0, y0 - pad_y)))
    cx1 = int(math.ceil(min(float(w), x1 + pad_x)))
    cy1 = int(math.ceil(min(float(h), y1 + pad_y)))
    return CropResult(pixels=frame.pixels[cy0:cy1, cx0:cx1], box=(cx0, cy0, cx1, cy1), fallback=False)
