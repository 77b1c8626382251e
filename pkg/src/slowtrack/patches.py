"""Grayscale frames, normalized patches, and training-set assembly.

Frames come from binary 8-bit PGM (P5) files. Patches are square windows
normalized to zero mean and unit variance so downstream objectives see
inputs on a common scale; constant windows normalize to the all-zero
patch. Training data is organized sequence-by-sequence with explicit
boundaries, because consecutive-frame feature differences are only
meaningful within one video.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, PgmFormatError

PATCH_SIDES = (16, 32)

# below this standard deviation a window counts as constant
_CONST_STD = 1e-12


@dataclass(frozen=True)
class Frame:
    """A grayscale image with row-major intensities in [0, 1]."""

    width: int
    height: int
    pixels: np.ndarray  # (height, width) float64

    def __post_init__(self):
        # own copy: the frame must stay immutable without freezing the
        # caller's array
        px = np.array(self.pixels, dtype=np.float64)
        if px.shape != (self.height, self.width):
            raise ValueError(
                f"pixel block of shape {px.shape} does not match "
                f"{self.height}x{self.width}"
            )
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise ValueError("frame intensities must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)


@dataclass(frozen=True)
class Patch:
    """A normalized square window: zero mean and unit variance, or all zeros."""

    side: int
    values: np.ndarray  # flat, length side**2

    def __post_init__(self):
        if self.side not in PATCH_SIDES:
            raise ValueError(
                f"unsupported patch side {self.side}; expected one of {PATCH_SIDES}"
            )
        v = np.array(self.values, dtype=np.float64).ravel()
        if v.size != self.side * self.side:
            raise ValueError(
                f"patch has {v.size} values, expected {self.side * self.side}"
            )
        if np.any(v):
            if abs(v.mean()) > 1e-9 or abs(v.var() - 1.0) > 1e-9:
                raise ValueError("patch values are not zero-mean unit-variance")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def image(self) -> np.ndarray:
        """Values reshaped to (side, side)."""
        return self.values.reshape(self.side, self.side)


@dataclass(frozen=True)
class PatchSequence:
    """Consecutive-frame patches from one video; uniform side, nonempty."""

    patches: tuple[Patch, ...]
    sequence_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "patches", tuple(self.patches))
        if not self.patches:
            raise ValueError("patch sequence may not be empty")
        sides = {p.side for p in self.patches}
        if len(sides) != 1:
            raise ValueError(f"mixed patch sides in one sequence: {sorted(sides)}")

    @property
    def side(self) -> int:
        return self.patches[0].side

    def __len__(self) -> int:
        return len(self.patches)

    def values_matrix(self) -> np.ndarray:
        """Stack patch values into an (L, side**2) matrix."""
        return np.stack([p.values for p in self.patches])


@dataclass(frozen=True)
class TrainingSet:
    """Multiple patch sequences; N is the total patch count across sequences."""

    sequences: tuple[PatchSequence, ...]

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))

    @property
    def n(self) -> int:
        return sum(len(s) for s in self.sequences)

    @property
    def pair_count(self) -> int:
        """Number of consecutive slowness pairs (sequence boundaries excluded)."""
        return sum(len(s) - 1 for s in self.sequences)

    def sequence_arrays(self) -> list[np.ndarray]:
        return [s.values_matrix() for s in self.sequences]


@dataclass(frozen=True)
class SampleResult:
    """Training set plus bookkeeping from `sample_training_set`."""

    training_set: TrainingSet
    skipped_sequences: int


def normalize_values(values: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance normalization; constant input maps to zeros."""
    v = np.asarray(values, dtype=np.float64).ravel()
    centered = v - v.mean()
    std = centered.std()
    if std < _CONST_STD:
        return np.zeros_like(v)
    return centered / std


def _next_token(buf: bytes, pos: int) -> tuple[bytes, int, int]:
    """Skip whitespace/comments; return (token, token_start, next_pos)."""
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise PgmFormatError(f"unexpected end of header at byte offset {pos}")
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    return buf[start:pos], start, pos


def load_frame(path) -> Frame:
    """Load a binary 8-bit PGM (P5) file; intensities are divided by 255."""
    buf = Path(path).read_bytes()
    if buf[:2] != b"P5":
        got = buf[:2].decode("latin-1") if buf else "<empty>"
        raise PgmFormatError(
            f"{path}: unsupported magic {got!r} at byte offset 0 (binary P5 required)"
        )
    pos = 2
    header = {}
    for name in ("width", "height", "maxval"):
        tok, start, pos = _next_token(buf, pos)
        try:
            header[name] = int(tok)
        except ValueError:
            raise PgmFormatError(
                f"{path}: bad {name} token {tok!r} at byte offset {start}"
            ) from None
        if header[name] <= 0:
            raise PgmFormatError(
                f"{path}: non-positive {name} at byte offset {start}"
            )
    if header["maxval"] != 255:
        raise PgmFormatError(
            f"{path}: unsupported maxval {header['maxval']} (8-bit, 255 required)"
        )
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise PgmFormatError(
            f"{path}: expected single whitespace before payload at byte offset {pos}"
        )
    pos += 1
    width, height = header["width"], header["height"]
    need = width * height
    payload = buf[pos : pos + need]
    if len(payload) < need:
        raise PgmFormatError(
            f"{path}: payload truncated at byte offset {pos + len(payload)} "
            f"({need} bytes required, {len(payload)} present)"
        )
    pixels = (
        np.frombuffer(payload, dtype=np.uint8)
        .astype(np.float64)
        .reshape(height, width)
        / 255.0
    )
    return Frame(width, height, pixels)


def save_frame(frame: Frame, path) -> None:
    """Write a frame as binary 8-bit PGM; intensities are scaled by 255."""
    data = np.rint(frame.pixels * 255.0).astype(np.uint8)
    header = f"P5\n{frame.width} {frame.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def load_frame_dir(directory) -> list[Frame]:
    """Load all *.pgm files in a directory, sorted by filename."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.pgm"))
    if not paths:
        raise DataError(f"no .pgm frames found in {directory}")
    return [load_frame(p) for p in paths]


def _nearest_indices(out_len: int, in_len: int) -> np.ndarray:
    # center of output cell k maps to input coordinate (2k+1)*in/(2*out)
    return (2 * np.arange(out_len) + 1) * in_len // (2 * out_len)


def extract_patch(frame: Frame, center, side: int, window: int | None = None) -> Patch:
    """Cut and normalize a side x side patch around `center` (x, y).

    The window is clamped to the frame bounds. An optional larger/smaller
    source `window` is resampled to `side` by nearest neighbor.
    """
    if side not in PATCH_SIDES:
        raise ValueError(f"unsupported patch side {side}; expected one of {PATCH_SIDES}")
    win = side if window is None else int(window)
    if win <= 0:
        raise ValueError(f"window size must be positive, got {win}")
    if frame.width < win or frame.height < win:
        raise DataError(
            f"window {win}x{win} exceeds frame {frame.width}x{frame.height} "
            "even after clamping"
        )
    cx, cy = float(center[0]), float(center[1])
    x0 = int(round(cx - win / 2.0))
    y0 = int(round(cy - win / 2.0))
    x0 = min(max(x0, 0), frame.width - win)
    y0 = min(max(y0, 0), frame.height - win)
    block = frame.pixels[y0 : y0 + win, x0 : x0 + win]
    if win != side:
        idx = _nearest_indices(side, win)
        block = block[np.ix_(idx, idx)]
    return Patch(side, normalize_values(block))


def sample_training_set(
    frame_sequences, box_sequences, side: int, stride: int
) -> SampleResult:
    """Cut a fixed stride grid of patch sequences from tracked videos.

    The grid is anchored at each sequence's first box and kept at identical
    pixel coordinates across all frames of that sequence, so grid cell k in
    frame t corresponds spatially to cell k in frame t+1. Sequences whose
    box is smaller than `side` are skipped and counted.
    """
    if side not in PATCH_SIDES:
        raise ValueError(f"unsupported patch side {side}; expected one of {PATCH_SIDES}")
    if stride <= 0:
        raise ValueError(f"stride must be positive, got {stride}")
    if len(frame_sequences) != len(box_sequences):
        raise DataError(
            f"{len(frame_sequences)} frame sequences but "
            f"{len(box_sequences)} box sequences"
        )
    sequences = []
    skipped = 0
    for si, (frames, boxes) in enumerate(zip(frame_sequences, box_sequences)):
        frames = list(frames)
        boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        if not frames:
            continue
        if len(boxes) != len(frames):
            raise DataError(
                f"sequence {si}: {len(frames)} frames but {len(boxes)} boxes"
            )
        bx, by, bw, bh = (int(round(v)) for v in boxes[0])
        if bw < side or bh < side:
            skipped += 1
            continue
        frame0 = frames[0]
        xs = [
            x
            for x in range(bx, bx + bw - side + 1, stride)
            if 0 <= x <= frame0.width - side
        ]
        ys = [
            y
            for y in range(by, by + bh - side + 1, stride)
            if 0 <= y <= frame0.height - side
        ]
        for gy in ys:
            for gx in xs:
                patches = tuple(
                    Patch(
                        side,
                        normalize_values(f.pixels[gy : gy + side, gx : gx + side]),
                    )
                    for f in frames
                )
                sequences.append(
                    PatchSequence(patches, sequence_id=f"{si}:{gx},{gy}")
                )
    return SampleResult(TrainingSet(tuple(sequences)), skipped)


def read_boxes_csv(path) -> np.ndarray:
    """Read `frame_index,x,y,w,h` rows into an (n, 4) array.

    Frame indices must be 0-based and contiguous.
    """
    rows = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"box file not found: {path}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise DataError(f"{path}: malformed row at line {lineno}")
        try:
            idx = int(parts[0])
            vals = [float(p) for p in parts[1:]]
        except ValueError:
            raise DataError(f"{path}: malformed row at line {lineno}") from None
        if idx != len(rows):
            raise DataError(
                f"{path}: frame index {idx} out of order at line {lineno}"
            )
        rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no box rows")
    return np.asarray(rows, dtype=np.float64)


def write_boxes_csv(path, boxes) -> None:
    """Write (n, 4) boxes as `frame_index,x,y,w,h` lines (LF, no header)."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    lines = [
        ",".join([str(i)] + [repr(float(v)) for v in row])
        for i, row in enumerate(boxes)
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
