"""Grid-series persistence, moving windows, normalization and splits.

GSF binary layout (little-endian, row-major ``[t][h][w]``)::

    offset  size        field
    0       4           magic b"GSF1"
    4       4   u32     version (= 1)
    8       24  3 x u64 T, H, W
    32      1   u8      georef flag (0 or 1)
    33      32  4 x f64 lat0, lon0, dlat, dlon        (only if flag == 1)
    ...     8T  i64     timestamps (epoch seconds, strictly increasing)
    ...     4THW f32    values
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng

MAGIC = b"GSF1"
VERSION = 1
_HEADER = struct.Struct("<4sIQQQB")
_GEOREF = struct.Struct("<4d")


class GSFError(ValueError):
    """Malformed GSF file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


@dataclass(frozen=True)
class Georef:
    lat0: float
    lon0: float
    dlat: float
    dlon: float


@dataclass
class GridSeries:
    timestamps: np.ndarray  # (T,) int64 epoch seconds
    values: np.ndarray  # (T, H, W) float32
    georef: Georef | None = None

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise ValueError(f"values must be T x H x W, got shape {self.values.shape}")
        if self.timestamps.shape != (self.values.shape[0],):
            raise ValueError(f"{len(self.timestamps)} timestamps for {self.values.shape[0]} frames")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if not np.isfinite(self.values).all():
            raise ValueError("values must be finite")
        if (self.values < 0).any():
            warnings.warn("grid series contains negative concentrations", stacklevel=2)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def as_float64(self) -> np.ndarray:
        return self.values.astype(np.float64)


def save_gsf(series: GridSeries, path) -> None:
    t, h, w = series.shape
    parts = [_HEADER.pack(MAGIC, VERSION, t, h, w, 1 if series.georef else 0)]
    if series.georef is not None:
        g = series.georef
        parts.append(_GEOREF.pack(g.lat0, g.lon0, g.dlat, g.dlon))
    parts.append(series.timestamps.astype("<i8").tobytes())
    parts.append(series.values.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_gsf(path) -> GridSeries:
    buf = Path(path).read_bytes()
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise GSFError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}", 0)
    if len(buf) < _HEADER.size:
        raise GSFError("truncated header", len(buf))
    _, version, t, h, w, flag = _HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise GSFError(f"unsupported version {version}", 4)
    if flag not in (0, 1):
        raise GSFError(f"bad georef flag {flag}", 32)
    off = _HEADER.size
    georef = None
    if flag:
        if len(buf) < off + _GEOREF.size:
            raise GSFError("truncated georef block", len(buf))
        georef = Georef(*_GEOREF.unpack_from(buf, off))
        off += _GEOREF.size
    need = off + 8 * t + 4 * t * h * w
    if len(buf) < need:
        raise GSFError(f"truncated file: {len(buf)} bytes, header implies {need}", len(buf))
    if len(buf) > need:
        raise GSFError(f"{len(buf) - need} trailing bytes after data", need)
    stamps = np.frombuffer(buf, dtype="<i8", count=t, offset=off).astype(np.int64)
    bad = np.nonzero(np.diff(stamps) <= 0)[0]
    if bad.size:
        raise GSFError(f"timestamps not strictly increasing at index {bad[0] + 1}", off + 8 * (bad[0] + 1))
    off += 8 * t
    values = np.frombuffer(buf, dtype="<f4", count=t * h * w, offset=off).reshape(t, h, w).astype(np.float32)
    if not np.isfinite(values).all():
        first = int(np.argmin(np.isfinite(values).reshape(-1)))
        raise GSFError("non-finite value", off + 4 * first)
    return GridSeries(stamps, values, georef)


def export_point_csv(path, timestamps, values) -> None:
    """Write a ``timestamp,value`` CSV for one grid point."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "value"])
        for t, v in zip(timestamps, values):
            writer.writerow([int(t), repr(float(v))])


def read_point_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return (
        np.array([int(r["timestamp"]) for r in rows], dtype=np.int64),
        np.array([float(r["value"]) for r in rows]),
    )


# ---------------------------------------------------------------------------
# windows and splits


@dataclass
class WindowSample:
    inputs: np.ndarray  # (k, H, W)
    targets: np.ndarray  # (m, H, W)
    start_timestamp: int
    start_index: int

    @property
    def length(self) -> int:
        return self.inputs.shape[0] + self.targets.shape[0]


@dataclass
class DatasetSplit:
    train: list[WindowSample]
    val: list[WindowSample]
    seed: int


def make_windows(series: GridSeries | np.ndarray, window_len: int = 26, k: int = 10, stride: int = 1,
                 timestamps=None) -> list[WindowSample]:
    """Cut dense moving windows of ``window_len`` frames: ``k`` inputs, the rest targets."""
    if isinstance(series, GridSeries):
        values, timestamps = series.as_float64(), series.timestamps
    else:
        values = np.asarray(series, dtype=np.float64)
        if timestamps is None:
            timestamps = np.arange(values.shape[0], dtype=np.int64) * 3600
    t = values.shape[0]
    if not 1 <= k < window_len:
        raise ValueError(f"need 1 <= k < window_len, got k={k}, window_len={window_len}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if t < window_len:
        raise ValueError(f"series of {t} steps is shorter than the {window_len}-step window")
    out = []
    for s in range(0, t - window_len + 1, stride):
        win = values[s : s + window_len]
        out.append(WindowSample(win[:k].copy(), win[k:].copy(), int(timestamps[s]), s))
    return out


def shuffle_split(windows: list[WindowSample], n_train: int, n_val: int, seed: int) -> DatasetSplit:
    """Shuffle with a seeded permutation, then take train and val in order."""
    if n_train < 0 or n_val < 0:
        raise ValueError("split sizes must be nonnegative")
    if n_train + n_val > len(windows):
        raise ValueError(f"requested {n_train}+{n_val} windows but only {len(windows)} exist")
    perm = rng.stream(seed, "data-pipeline").permutation(len(windows))
    train = [windows[i] for i in perm[:n_train]]
    val = [windows[i] for i in perm[n_train : n_train + n_val]]
    return DatasetSplit(train, val, seed)


@dataclass(frozen=True)
class Normalizer:
    """Global min-max scaling to ``[0, 1]``; no clipping."""

    vmin: float
    vmax: float

    def __post_init__(self):
        if not self.vmax > self.vmin:
            raise ValueError(f"degenerate normalizer: vmin={self.vmin}, vmax={self.vmax}")

    @property
    def span(self) -> float:
        return self.vmax - self.vmin

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.vmin) / self.span

    def invert(self, y):
        return np.asarray(y, dtype=np.float64) * self.span + self.vmin

    def apply_window(self, w: WindowSample) -> WindowSample:
        return WindowSample(self.apply(w.inputs), self.apply(w.targets), w.start_timestamp, w.start_index)


def fit_normalizer(train: list[WindowSample]) -> Normalizer:
    if not train:
        raise ValueError("cannot fit a normalizer on an empty training set")
    lo = min(min(w.inputs.min(), w.targets.min()) for w in train)
    hi = max(max(w.inputs.max(), w.targets.max()) for w in train)
    return Normalizer(float(lo), float(hi))


def grid_index_of(georef: Georef | None, lat: float, lon: float, shape: tuple[int, int]) -> tuple[int, int]:
    """Nearest grid cell of a coordinate (cell centers at ``lat0 + i * dlat``)."""
    if georef is None:
        raise ValueError("series has no georeference")
    row = int(np.rint((lat - georef.lat0) / georef.dlat))
    col = int(np.rint((lon - georef.lon0) / georef.dlon))
    h, w = shape
    if not (0 <= row < h and 0 <= col < w):
        raise ValueError(f"({lat}, {lon}) falls outside the {h}x{w} grid")
    return row, col
