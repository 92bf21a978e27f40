"""Error metrics, rollout evaluation, point series, extreme events and rendering."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import models as M
from .data import Georef, GridSeries, Normalizer, WindowSample, export_point_csv

METRICS = ("RMSE", "MAE", "RL2")

Predictor = Callable[[np.ndarray, int], np.ndarray]  # (B, k, H, W), n -> (B, n, H, W)


# ---------------------------------------------------------------------------
# metrics


def _pair(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if y.shape != yhat.shape:
        raise ValueError(f"shape mismatch: {y.size} vs {yhat.size} values")
    return y, yhat


def rmse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def mae(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def rl2(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    den = np.linalg.norm(y)
    if den == 0:
        raise ValueError("relative L2 is undefined for an all-zero ground truth")
    return float(np.linalg.norm(y - yhat) / den)


def r2(y, yhat) -> float:
    """Coefficient of determination ``1 - SSE / SST``."""
    y, yhat = _pair(y, yhat)
    if y.size < 2:
        raise ValueError("r2 needs at least two observations")
    sst = np.sum((y - y.mean()) ** 2)
    if sst == 0:
        raise ValueError("r2 is undefined for a constant observed series")
    return float(1.0 - np.sum((y - yhat) ** 2) / sst)


def _batch_metrics(y: np.ndarray, yhat: np.ndarray) -> dict[str, np.ndarray]:
    """Per-field metrics over the trailing two axes."""
    d = y - yhat
    n = y.shape[-1] * y.shape[-2]
    den = np.sqrt(np.sum(y * y, axis=(-2, -1)))
    if np.any(den == 0):
        raise ValueError("relative L2 is undefined for an all-zero ground truth")
    return {
        "RMSE": np.sqrt(np.sum(d * d, axis=(-2, -1)) / n),
        "MAE": np.sum(np.abs(d), axis=(-2, -1)) / n,
        "RL2": np.sqrt(np.sum(d * d, axis=(-2, -1))) / den,
    }


def format_cell(mean: float, std: float, digits: int = 3) -> str:
    return f"{mean:.{digits}f} ({std:.{digits}f})"


# ---------------------------------------------------------------------------
# rollout evaluation


@dataclass
class ErrorEvolution:
    """Per-sample, per-step metric logs with their mean and std curves."""

    label: str
    logs: dict[str, np.ndarray]  # metric -> (samples, n)

    @property
    def steps(self) -> int:
        return next(iter(self.logs.values())).shape[1]

    def mean(self, metric: str) -> np.ndarray:
        return self.logs[metric].mean(axis=0)

    def std(self, metric: str) -> np.ndarray:
        return self.logs[metric].std(axis=0)

    def prefix(self, m: int) -> "ErrorEvolution":
        return ErrorEvolution(self.label, {k: v[:, :m].copy() for k, v in self.logs.items()})

    def horizon_values(self, metric: str, h: int) -> np.ndarray:
        """Per-sample metric averaged over forecast steps ``1..h``."""
        if not 1 <= h <= self.steps:
            raise ValueError(f"horizon {h} outside 1..{self.steps}")
        return self.logs[metric][:, :h].mean(axis=1)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step"] + [f"{m.lower()}_{s}" for m in METRICS for s in ("mean", "std")])
            for i in range(self.steps):
                row = [i + 1]
                for m in METRICS:
                    row += [repr(float(self.mean(m)[i])), repr(float(self.std(m)[i]))]
                w.writerow(row)


@dataclass
class MetricTable:
    horizon: int
    labels: list[str] = field(default_factory=list)
    cells: dict[tuple[str, str], tuple[float, float]] = field(default_factory=dict)

    @classmethod
    def from_evolutions(cls, evolutions: list[ErrorEvolution], horizon: int) -> "MetricTable":
        table = cls(horizon)
        for ev in evolutions:
            table.add(ev, horizon)
        return table

    def add(self, ev: ErrorEvolution, horizon: int | None = None) -> None:
        h = self.horizon if horizon is None else horizon
        if ev.label not in self.labels:
            self.labels.append(ev.label)
        for m in METRICS:
            vals = ev.horizon_values(m, h)
            self.cells[(m, ev.label)] = (float(vals.mean()), float(vals.std()))

    def cell(self, metric: str, label: str) -> str:
        return format_cell(*self.cells[(metric, label)])

    def rows(self) -> list[list[str]]:
        out = [["metric"] + self.labels]
        for m in METRICS:
            out.append([m] + [self.cell(m, lab) if (m, lab) in self.cells else "" for lab in self.labels])
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(self.rows())

    def __str__(self) -> str:
        rows = self.rows()
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = [f"horizon {self.horizon} h"]
        lines += ["  ".join(c.ljust(wd) for c, wd in zip(r, widths)) for r in rows]
        return "\n".join(lines)


def model_predictor(model: M.OperatorModel) -> Predictor:
    def predict(inputs: np.ndarray, n: int) -> np.ndarray:
        return M.rollout(model, inputs, n).data

    return predict


def _as_predictor(model) -> tuple[Predictor, str]:
    if isinstance(model, M.OperatorModel):
        return model_predictor(model), model.label
    return model, getattr(model, "label", "model")


def evaluate_rollout(model, samples: list[WindowSample], n: int, *, normalizer: Normalizer | None = None,
                     label: str | None = None, batch_size: int = 32) -> ErrorEvolution:
    """Roll every sample out ``n`` steps and log per-step metrics.

    Samples are in model (normalized) space.  With a ``normalizer`` the
    metrics are taken on denormalized fields.
    """
    if not samples:
        raise ValueError("no samples to evaluate")
    short = [s.start_index for s in samples if s.targets.shape[0] < n]
    if short:
        raise ValueError(f"insufficient ground truth: windows starting at {short[:3]} have fewer than {n} targets")
    predict, default_label = _as_predictor(model)
    logs: dict[str, list[np.ndarray]] = {m: [] for m in METRICS}
    for s in range(0, len(samples), batch_size):
        chunk = samples[s : s + batch_size]
        inputs = np.stack([w.inputs for w in chunk])
        truth = np.stack([w.targets[:n] for w in chunk])
        pred = np.asarray(predict(inputs, n), dtype=np.float64)
        if normalizer is not None:
            truth, pred = normalizer.invert(truth), normalizer.invert(pred)
        for m, v in _batch_metrics(truth, pred).items():
            logs[m].append(v)
    return ErrorEvolution(label or default_label, {m: np.concatenate(v) for m, v in logs.items()})


# ---------------------------------------------------------------------------
# point series


@dataclass
class PointSeries:
    point: tuple[int, int]
    horizon: int
    timestamps: np.ndarray
    observed: np.ndarray
    predicted: np.ndarray

    @property
    def r2(self) -> float:
        return r2(self.observed, self.predicted)

    @property
    def rmse(self) -> float:
        return rmse(self.observed, self.predicted)

    @property
    def mae(self) -> float:
        return mae(self.observed, self.predicted)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestamp", "observed", "predicted"])
            for t, o, p in zip(self.timestamps, self.observed, self.predicted):
                w.writerow([int(t), repr(float(o)), repr(float(p))])


def forecast_all(predict: Predictor, values: np.ndarray, k: int, horizon: int, batch_size: int = 32):
    """``horizon``-step-ahead forecast for every admissible target index."""
    t = values.shape[0]
    targets = np.arange(k + horizon - 1, t)
    out = np.empty((targets.size,) + values.shape[1:])
    for s in range(0, targets.size, batch_size):
        idx = targets[s : s + batch_size]
        inputs = np.stack([values[i - horizon - k + 1 : i - horizon + 1] for i in idx])
        out[s : s + idx.size] = np.asarray(predict(inputs, horizon))[:, horizon - 1]
    return targets, out


def point_series(model, series: GridSeries, point: tuple[int, int], horizon: int = 1, *,
                 normalizer: Normalizer | None = None, k: int | None = None) -> PointSeries:
    """Observed vs ``horizon``-hour-ahead predicted series at one grid cell.

    ``series`` holds physical values; the model sees them normalized and the
    statistics are computed after denormalization.
    """
    _, h, w = series.shape
    r, c = point
    if not (0 <= r < h and 0 <= c < w):
        raise IndexError(f"grid point {point} outside the {h}x{w} grid")
    predict, _ = _as_predictor(model)
    if k is None:
        k = model.config.history_k if isinstance(model, M.OperatorModel) else 10
    values = series.as_float64()
    norm_values = normalizer.apply(values) if normalizer is not None else values
    idx, pred = forecast_all(predict, norm_values, k, horizon)
    if normalizer is not None:
        pred = normalizer.invert(pred)
    return PointSeries((r, c), horizon, series.timestamps[idx], values[idx, r, c], pred[:, r, c])


# ---------------------------------------------------------------------------
# extreme events


@dataclass
class ExtremeEvent:
    timestamp: int
    index: int
    total: float
    truth: np.ndarray
    prediction: np.ndarray | None = None

    @property
    def abs_error(self) -> np.ndarray | None:
        return None if self.prediction is None else np.abs(self.truth - self.prediction)


@dataclass
class ExtremeEventReport:
    events: list[ExtremeEvent]
    hour_filter: int | None = None

    @property
    def timestamps(self) -> list[int]:
        return [e.timestamp for e in self.events]


def hour_of_day(timestamps) -> np.ndarray:
    """UTC hour of epoch-second timestamps."""
    return (np.asarray(timestamps, dtype=np.int64) // 3600) % 24


def rank_by_total(values: np.ndarray, timestamps: np.ndarray) -> np.ndarray:
    """Indices sorted by descending spatial sum, earlier timestamp first on ties."""
    totals = values.reshape(values.shape[0], -1).sum(axis=1)
    return np.lexsort((timestamps, -totals))


def extreme_events(series: GridSeries, k: int, hour_filter: int | None = None, *, model=None,
                   normalizer: Normalizer | None = None, history_k: int = 10) -> ExtremeEventReport:
    """Top-``k`` timestamps by total concentration.

    With a model, each event gets a one-step prediction from the true
    preceding ``history_k`` frames (events too early to have a full history
    get none).
    """
    values = series.as_float64()
    if values.shape[0] < k:
        raise ValueError(f"series of {values.shape[0]} frames has fewer than k={k}")
    order = rank_by_total(values, series.timestamps)
    if hour_filter is not None:
        order = order[hour_of_day(series.timestamps[order]) == hour_filter]
    order = order[:k]
    predict = None
    if model is not None:
        predict, _ = _as_predictor(model)
        if isinstance(model, M.OperatorModel):
            history_k = model.config.history_k
    events = []
    totals = values.reshape(values.shape[0], -1).sum(axis=1)
    for i in order:
        pred = None
        if predict is not None and i >= history_k:
            hist = values[i - history_k : i]
            if normalizer is not None:
                hist = normalizer.apply(hist)
            pred = np.asarray(predict(hist[None], 1))[0, 0]
            if normalizer is not None:
                pred = normalizer.invert(pred)
        events.append(ExtremeEvent(int(series.timestamps[i]), int(i), float(totals[i]), values[i].copy(), pred))
    return ExtremeEventReport(events, hour_filter)


# ---------------------------------------------------------------------------
# rendering


def write_pgm(path, field2d: np.ndarray, vmin: float, vmax: float, *, flip_rows: bool = False) -> None:
    """16-bit binary PGM, linear between ``vmin`` and ``vmax`` (clipped).

    The scaling pair is recorded in a header comment.  ``flip_rows`` puts
    the last row at the top, for grids whose row index increases northward.
    """
    f = np.asarray(field2d, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError("heatmap needs a 2D field")
    if flip_rows:
        f = f[::-1]
    span = vmax - vmin
    scaled = np.zeros_like(f) if span <= 0 else (f - vmin) / span
    q = np.rint(np.clip(scaled, 0.0, 1.0) * 65535).astype(">u2")
    h, w = f.shape
    header = f"P5\n# vmin={vmin!r} vmax={vmax!r}\n{w} {h}\n65535\n".encode()
    Path(path).write_bytes(header + q.tobytes())


def read_pgm(path) -> tuple[np.ndarray, float | None, float | None]:
    """Return ``(levels, vmin, vmax)`` of a file written by :func:`write_pgm`."""
    buf = Path(path).read_bytes()
    tokens: list[bytes] = []
    vmin = vmax = None
    pos = 0
    while len(tokens) < 4:
        while buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            end = buf.index(b"\n", pos)
            for part in buf[pos + 1 : end].decode().split():
                key, _, val = part.partition("=")
                if key == "vmin":
                    vmin = float(val)
                elif key == "vmax":
                    vmax = float(val)
            pos = end + 1
            continue
        start = pos
        while not buf[pos : pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"not a binary PGM: magic {tokens[0]!r}")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 65535:
        raise ValueError(f"expected maxval 65535, got {maxval}")
    data = np.frombuffer(buf, dtype=">u2", count=w * h, offset=pos + 1).reshape(h, w)
    return data.astype(np.uint16), vmin, vmax


def pgm_to_field(levels: np.ndarray, vmin: float, vmax: float) -> np.ndarray:
    return vmin + levels.astype(np.float64) / 65535 * (vmax - vmin)


@dataclass
class Results:
    tables: list[MetricTable] = field(default_factory=list)
    evolutions: list[ErrorEvolution] = field(default_factory=list)
    points: list[PointSeries] = field(default_factory=list)
    events: ExtremeEventReport | None = None
    georef: Georef | None = None


def render_outputs(results: Results, outdir) -> list[Path]:
    """Write tables, curves, point series and event heatmaps; return the paths."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for table in results.tables:
        p = out / f"metrics_h{table.horizon}.csv"
        table.write_csv(p)
        written.append(p)
    for ev in results.evolutions:
        p = out / f"evolution_{ev.label}.csv"
        ev.write_csv(p)
        written.append(p)
    if results.points:
        stats = out / "points.csv"
        with open(stats, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "col", "horizon", "r2", "rmse", "mae"])
            for ps in results.points:
                p = out / f"point_{ps.point[0]}_{ps.point[1]}.csv"
                ps.write_csv(p)
                written.append(p)
                w.writerow([ps.point[0], ps.point[1], ps.horizon, repr(ps.r2), repr(ps.rmse), repr(ps.mae)])
        written.append(stats)
    if results.events is not None:
        flip = results.georef is not None and results.georef.dlat > 0
        evs = results.events.events
        listing = out / "events.csv"
        with open(listing, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "timestamp", "total", "vmin", "vmax", "error_vmax"])
            for rank, e in enumerate(evs, 1):
                fields_ = [e.truth] + ([e.prediction] if e.prediction is not None else [])
                vmin = float(min(f.min() for f in fields_))
                vmax = float(max(f.max() for f in fields_))
                emax = float(e.abs_error.max()) if e.prediction is not None else 0.0
                for tag, f, lo, hi in (("truth", e.truth, vmin, vmax), ("pred", e.prediction, vmin, vmax),
                                       ("abserr", e.abs_error, 0.0, emax)):
                    if f is None:
                        continue
                    p = out / f"event{rank:02d}_{tag}.pgm"
                    write_pgm(p, f, lo, hi, flip_rows=flip)
                    written.append(p)
                w.writerow([rank, e.timestamp, repr(e.total), repr(vmin), repr(vmax), repr(emax)])
        written.append(listing)
    return written


__all__ = [
    "METRICS", "rmse", "mae", "rl2", "r2", "format_cell", "ErrorEvolution", "MetricTable", "evaluate_rollout",
    "model_predictor", "forecast_all", "PointSeries", "point_series", "ExtremeEvent", "ExtremeEventReport", "extreme_events",
    "rank_by_total", "hour_of_day", "write_pgm", "read_pgm", "pgm_to_field", "Results", "render_outputs",
    "export_point_csv",
]
