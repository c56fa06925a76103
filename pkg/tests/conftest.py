from __future__ import annotations

import math
from pathlib import Path

import cv2
import numpy as np
import pytest

WATERMARK_GRID = 12


def write_image(path: Path, width: int = 448, height: int = 448, seed: int = 0) -> Path:
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 255, (height, width, 3), dtype=np.uint8).astype(np.uint8)
    cv2.imwrite(str(path), img)
    return path


def write_clip(
    path: Path,
    n_frames: int,
    fps: float = 25.0,
    width: int = 640,
    height: int = 360,
    noisy_tail: bool = False,
    seed: int = 0,
) -> Path:
    """mp4 clip; optionally flat head + noisy tail so the bitrate rises."""
    rng = np.random.default_rng(seed)
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"mp4v"), fps, (width, height))
    assert writer.isOpened()
    for i in range(n_frames):
        if noisy_tail and i >= n_frames // 2:
            frame = rng.integers(0, 255, (height, width, 3), dtype=np.uint8).astype(np.uint8)
        else:
            frame = np.full((height, width, 3), 90, np.uint8)
        writer.write(frame)
    writer.release()
    return path


def write_watermarked_clip(
    path: Path, n_frames: int, fps: float = 25.0, width: int = 360, height: int = 360
) -> Path:
    """Each frame carries its index as a single bright grid cell."""
    assert n_frames <= WATERMARK_GRID * WATERMARK_GRID
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"mp4v"), fps, (width, height))
    assert writer.isOpened()
    cw, ch = width // WATERMARK_GRID, height // WATERMARK_GRID
    for i in range(n_frames):
        frame = np.zeros((height, width, 3), np.uint8)
        r, c = divmod(i, WATERMARK_GRID)
        frame[r * ch : (r + 1) * ch, c * cw : (c + 1) * cw] = 255
        writer.write(frame)
    writer.release()
    return path


def read_watermark(pixels: np.ndarray) -> int:
    """Recover the frame index from the bright grid cell."""
    height, width = pixels.shape[:2]
    cw, ch = width // WATERMARK_GRID, height // WATERMARK_GRID
    gray = pixels.mean(axis=2)
    best, best_val = 0, -1.0
    for r in range(WATERMARK_GRID):
        for c in range(WATERMARK_GRID):
            val = gray[r * ch : (r + 1) * ch, c * cw : (c + 1) * cw].mean()
            if val > best_val:
                best, best_val = r * WATERMARK_GRID + c, val
    return best


@pytest.fixture(scope="session")
def media_dir(tmp_path_factory) -> Path:
    return tmp_path_factory.mktemp("media")


@pytest.fixture(scope="session")
def image_448(media_dir) -> Path:
    return write_image(media_dir / "image_448.png", 448, 448)


@pytest.fixture(scope="session")
def image_small(media_dir) -> Path:
    return write_image(media_dir / "image_small.png", 80, 60, seed=1)


@pytest.fixture(scope="session")
def clip_2s(media_dir) -> Path:
    # 2 s, 640x360 @ 25 fps, flat head + noisy tail (bitrate trend rises)
    return write_clip(media_dir / "clip_2s.mp4", n_frames=50, noisy_tail=True)


@pytest.fixture(scope="session")
def clip_5_4s(media_dir) -> Path:
    # 5.4 s @ 25 fps = 135 frames, watermarked with frame indices
    return write_watermarked_clip(media_dir / "clip_5_4s.mp4", n_frames=135)


@pytest.fixture(scope="session")
def clip_short(media_dir) -> Path:
    # 0.5 s @ 24 fps
    return write_clip(media_dir / "clip_short.mp4", n_frames=12, fps=24.0, width=320, height=240)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = []
    for status in ("passed", "failed", "skipped"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py" in nodeid:
                name = nodeid.split("::")[-1]
                lines.append((name, status.upper()))
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, status in sorted(lines):
            terminalreporter.write_line(f"{status:8s} {name}")
