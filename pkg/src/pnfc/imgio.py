"""Image and frame-stack persistence, plus CSV and SVG report emission.

Images are stored as binary PGM (P5).  A frame stack is a directory holding
numbered PGM frames and a JSON manifest carrying the timing metadata.
Everything in memory stays in float64; quantization happens only on write.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np


class PGMFormatError(ValueError):
    """Malformed PGM header.  ``offset`` is the byte offset of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class PGMTruncatedError(PGMFormatError):
    """PGM payload shorter than the header promises."""


class RangeError(ValueError):
    """A sample lies outside ``[0, peak]`` and would be silently clipped."""


@dataclass
class Image:
    """A single 2D grid of nonnegative real values with a dynamic-range peak."""

    data: np.ndarray
    peak: float = 255.0

    def __post_init__(self):
        self.data = np.array(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.size == 0:
            raise ValueError(f"image data must be a nonempty 2D array, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image data must be finite")
        if np.any(self.data < 0):
            raise ValueError("image data must be nonnegative")
        self.peak = float(self.peak)
        if not self.peak > 0:
            raise ValueError(f"peak must be positive, got {self.peak}")

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape


def storage_maxval(peak):
    """PGM maxval used to store an image with the given peak."""
    if peak <= 255:
        return 255
    if peak <= 65535:
        return 65535
    raise RangeError(f"peak {peak} exceeds the 16-bit PGM range")


def _skip_space_and_comments(buf, pos):
    while pos < len(buf):
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    return pos


def _read_header_int(buf, pos, what):
    pos = _skip_space_and_comments(buf, pos)
    start = pos
    while pos < len(buf) and buf[pos:pos + 1].isdigit():
        pos += 1
    if pos == start:
        if start >= len(buf):
            raise PGMTruncatedError(f"header ends before {what}", start)
        raise PGMFormatError(f"expected decimal {what}", start)
    return int(buf[start:pos]), pos


def decode_pgm(buf):
    """Decode P5 bytes into an :class:`Image` (peak = maxval)."""
    if len(buf) < 2:
        raise PGMTruncatedError("file too short for magic number", 0)
    if buf[:2] != b"P5":
        raise PGMFormatError(f"bad magic number {buf[:2]!r}, expected b'P5'", 0)
    pos = 2
    if pos < len(buf) and not (buf[pos:pos + 1].isspace() or buf[pos:pos + 1] == b"#"):
        raise PGMFormatError("missing whitespace after magic number", pos)
    width, pos = _read_header_int(buf, pos, "width")
    height, pos = _read_header_int(buf, pos, "height")
    maxval_offset = _skip_space_and_comments(buf, pos)
    maxval, pos = _read_header_int(buf, pos, "maxval")
    if width <= 0 or height <= 0:
        raise PGMFormatError(f"nonpositive dimensions {width}x{height}", pos)
    if not 0 < maxval <= 65535:
        raise PGMFormatError(f"maxval {maxval} outside 1..65535", maxval_offset)
    if pos >= len(buf):
        raise PGMTruncatedError("missing whitespace before raster", pos)
    if not buf[pos:pos + 1].isspace():
        raise PGMFormatError("expected single whitespace before raster", pos)
    pos += 1
    nbytes = 1 if maxval < 256 else 2
    need = width * height * nbytes
    if len(buf) - pos < need:
        raise PGMTruncatedError(
            f"raster truncated: need {need} bytes, have {len(buf) - pos}", len(buf))
    dtype = np.uint8 if nbytes == 1 else np.dtype(">u2")
    samples = np.frombuffer(buf, dtype=dtype, count=width * height, offset=pos)
    if np.any(samples > maxval):
        bad = int(np.argmax(samples > maxval))
        raise PGMFormatError(f"sample {int(samples[bad])} exceeds maxval {maxval}", pos + bad * nbytes)
    return Image(samples.reshape(height, width).astype(np.float64), peak=float(maxval))


def encode_pgm(img):
    """Encode an :class:`Image` as P5 bytes.

    Samples are rounded half-to-even.  Values outside ``[0, peak]`` raise
    :class:`RangeError`; nothing is clipped.
    """
    data = img.data
    if np.any(data > img.peak):
        raise RangeError(f"value {float(data.max())} exceeds peak {img.peak}")
    if np.any(data < 0):
        raise RangeError(f"negative value {float(data.min())}")
    maxval = storage_maxval(img.peak)
    q = np.rint(data)
    dtype = np.uint8 if maxval == 255 else np.dtype(">u2")
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    return header + q.astype(dtype).tobytes()


def read_pgm(path):
    with open(path, "rb") as fh:
        return decode_pgm(fh.read())


def write_pgm(img, path):
    payload = encode_pgm(img)
    with open(path, "wb") as fh:
        fh.write(payload)


# --------------------------------------------------------------------------
# frame stacks

@dataclass
class FrameStack:
    """Ordered same-shape frames plus the timing of the measurement record.

    ``exposure_scale`` converts clean-image units to expected counts
    (photons per unit radiance per ms times T); it is ``None`` when unknown.
    """

    frames: np.ndarray
    integration_time_ms: float
    measurement_interval_ms: float
    seed: int = 0
    peak: Optional[float] = None
    exposure_scale: Optional[float] = None
    coherence_time_ms: Optional[float] = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[0] == 0:
            raise ValueError(f"frames must be a nonempty (N, H, W) array, got {self.frames.shape}")
        if not self.integration_time_ms > 0:
            raise ValueError("integration_time_ms must be positive")
        if self.measurement_interval_ms < self.integration_time_ms:
            raise ValueError("measurement_interval_ms must be >= integration_time_ms")
        if self.peak is None:
            self.peak = default_stack_peak(self.frames)

    def __len__(self):
        return self.frames.shape[0]

    @property
    def shape(self):
        return self.frames.shape[1:]

    def frame(self, k):
        return Image(self.frames[k], peak=self.peak)


def default_stack_peak(frames):
    """Storage peak for a stack: 255 when 8 bits suffice, else 65535."""
    m = float(np.max(frames)) if np.size(frames) else 0.0
    if m <= 255:
        return 255.0
    if m <= 65535:
        return 65535.0
    return float(math.ceil(m))


@dataclass
class StackManifest:
    frame_paths: list
    integration_time_ms: float
    measurement_interval_ms: float
    seed: int
    clean_reference: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.integration_time_ms > 0:
            raise ValueError("integration_time_ms must be positive")
        if self.measurement_interval_ms < self.integration_time_ms:
            raise ValueError("measurement_interval_ms must be >= integration_time_ms")
        if len(self.frame_paths) < 2:
            raise ValueError("a stack manifest needs at least 2 frames")
        self.seed = int(self.seed)
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    def to_json(self):
        doc = {
            "frames": list(self.frame_paths),
            "integration_time_ms": self.integration_time_ms,
            "measurement_interval_ms": self.measurement_interval_ms,
            "seed": self.seed,
        }
        if self.clean_reference is not None:
            doc["clean_reference"] = self.clean_reference
        doc.update(self.extra)
        return json.dumps(doc, indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        try:
            return cls(
                frame_paths=list(doc.pop("frames")),
                integration_time_ms=float(doc.pop("integration_time_ms")),
                measurement_interval_ms=float(doc.pop("measurement_interval_ms")),
                seed=int(doc.pop("seed")),
                clean_reference=doc.pop("clean_reference", None),
                extra=doc,
            )
        except KeyError as exc:
            raise ValueError(f"stack manifest is missing key {exc}") from None


def save_stack(stack, out_dir, clean_reference=None):
    """Write ``stack`` as numbered PGMs plus ``manifest.json``; return the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    digits = max(4, len(str(len(stack) - 1)))
    names = []
    for k in range(len(stack)):
        name = f"frame_{k:0{digits}d}.pgm"
        write_pgm(stack.frame(k), out_dir / name)
        names.append(name)
    extra = {}
    if stack.exposure_scale is not None:
        extra["exposure_scale"] = stack.exposure_scale
    if stack.coherence_time_ms is not None:
        extra["coherence_time_ms"] = stack.coherence_time_ms
    manifest = StackManifest(names, stack.integration_time_ms, stack.measurement_interval_ms,
                             stack.seed, clean_reference, extra)
    path = out_dir / "manifest.json"
    path.write_text(manifest.to_json())
    return path


def load_stack(manifest_path):
    manifest_path = Path(manifest_path)
    manifest = StackManifest.from_json(manifest_path.read_text())
    base = manifest_path.parent
    images = [read_pgm(base / p) for p in manifest.frame_paths]
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ValueError(f"stack frames have differing shapes: {sorted(shapes)}")
    peaks = {im.peak for im in images}
    return FrameStack(
        frames=np.stack([im.data for im in images]),
        integration_time_ms=manifest.integration_time_ms,
        measurement_interval_ms=manifest.measurement_interval_ms,
        seed=manifest.seed,
        peak=max(peaks),
        exposure_scale=manifest.extra.get("exposure_scale"),
        coherence_time_ms=manifest.extra.get("coherence_time_ms"),
    )


# --------------------------------------------------------------------------
# CSV

def format_number(x):
    """Fixed-point decimal with 9 significant digits; ints pass through."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if x == 0:
        return "0.00000000"
    decimals = max(0, 8 - math.floor(math.log10(abs(x))))
    return f"{x:.{decimals}f}"


def format_csv(rows):
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to write")
    header = list(rows[0].keys())
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        if list(row.keys()) != header:
            raise ValueError(f"row keys {list(row.keys())} differ from header {header}")
        writer.writerow([v if isinstance(v, str) else ("" if v is None else format_number(v))
                         for v in row.values()])
    return buf.getvalue()


def write_csv(rows, path):
    text = format_csv(rows)
    with open(path, "w", newline="") as fh:
        fh.write(text)


# --------------------------------------------------------------------------
# SVG charts

SVG_WIDTH = 800
SVG_HEIGHT = 600
_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2")


def _check_series(series):
    if not series:
        raise ValueError("at least one series is required")
    for label, points in series:
        if len(points) == 0:
            raise ValueError(f"series {label!r} is empty")
        xs = [float(p[0]) for p in points]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError(f"x values of series {label!r} must be strictly increasing")


def _ticks(lo, hi, n=5):
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _fmt_tick(v):
    return f"{v:.4g}"


def render_svg_chart(series, x_label, y_label, title=None):
    """Return a standalone SVG line chart.

    ``series`` is a sequence of ``(label, [(x, y), ...])`` pairs (a dict is
    accepted too).  Layout is fixed: 800x600 with 10% margins, linear axes.
    """
    if isinstance(series, dict):
        series = list(series.items())
    series = [(str(label), [(float(x), float(y)) for x, y in pts]) for label, pts in series]
    _check_series(series)

    mx, my = SVG_WIDTH * 0.1, SVG_HEIGHT * 0.1
    pw, ph = SVG_WIDTH - 2 * mx, SVG_HEIGHT - 2 * my
    xs = [x for _, pts in series for x, _ in pts]
    ys = [y for _, pts in series for _, y in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1

    def sx(x):
        return mx + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return my + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" '
        f'viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">',
        f'<rect x="0" y="0" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>',
        f'<line x1="{mx:.2f}" y1="{my + ph:.2f}" x2="{mx + pw:.2f}" y2="{my + ph:.2f}" stroke="black"/>',
        f'<line x1="{mx:.2f}" y1="{my:.2f}" x2="{mx:.2f}" y2="{my + ph:.2f}" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{sx(t):.2f}" y1="{my + ph:.2f}" x2="{sx(t):.2f}" y2="{my + ph + 5:.2f}" stroke="black"/>')
        out.append(f'<text x="{sx(t):.2f}" y="{my + ph + 20:.2f}" font-size="12" text-anchor="middle">{_fmt_tick(t)}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{mx - 5:.2f}" y1="{sy(t):.2f}" x2="{mx:.2f}" y2="{sy(t):.2f}" stroke="black"/>')
        out.append(f'<text x="{mx - 8:.2f}" y="{sy(t) + 4:.2f}" font-size="12" text-anchor="end">{_fmt_tick(t)}</text>')
    out.append(f'<text x="{mx + pw / 2:.2f}" y="{SVG_HEIGHT - my / 3:.2f}" font-size="14" '
               f'text-anchor="middle">{_escape(x_label)}</text>')
    out.append(f'<text x="{mx / 4:.2f}" y="{my + ph / 2:.2f}" font-size="14" text-anchor="middle" '
               f'transform="rotate(-90 {mx / 4:.2f} {my + ph / 2:.2f})">{_escape(y_label)}</text>')
    if title:
        out.append(f'<text x="{SVG_WIDTH / 2:.2f}" y="{my / 2:.2f}" font-size="16" '
                   f'text-anchor="middle">{_escape(title)}</text>')
    for i, (label, pts) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        ly = my + 10 + 18 * i
        lx = mx + pw - 150
        out.append(f'<rect class="legend" x="{lx:.2f}" y="{ly:.2f}" width="12" height="12" fill="{color}"/>')
        out.append(f'<text x="{lx + 18:.2f}" y="{ly + 11:.2f}" font-size="12">{_escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s):
    return (str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace('"', "&quot;"))


def write_svg_chart(series, x_label, y_label, path, title=None):
    text = render_svg_chart(series, x_label, y_label, title)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
