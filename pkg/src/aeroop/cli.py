"""Command-line entry point: ``aeroop {gen-data,train,eval,forecast,report}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or shape
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import data as D
from . import evaluation as E
from . import models as M
from . import synth as S
from . import training as TR
from .tensor import ShapeError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

PRESETS = {"urban-toy": S.urban_toy}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class DataConfig:
    window_len: int = 26
    stride: int = 1
    n_train: int = 300
    n_val: int = 60


@dataclass
class RunConfig:
    seed: int = 0
    hours: int = 720
    preset: str | None = "urban-toy"
    sim: dict = field(default_factory=dict)
    data: DataConfig = field(default_factory=DataConfig)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def sim_config(self) -> S.SimConfig:
        if self.preset is not None and self.preset not in PRESETS:
            raise UsageError(f"unknown preset {self.preset!r} (known: {', '.join(PRESETS)})")
        base = PRESETS[self.preset]().to_dict() if self.preset else {}
        unknown = set(self.sim) - {f.name for f in fields(S.SimConfig)}
        if unknown:
            raise UsageError(f"unknown key(s) in 'sim': {', '.join(sorted(unknown))}")
        base.update(self.sim)
        return S.SimConfig.from_dict(base)

    def model_config(self) -> M.ModelConfig:
        _strict("model", self.model, M.ModelConfig)
        return M.ModelConfig(**self.model)

    def train_config(self) -> TR.TrainConfig:
        _strict("train", self.train, TR.TrainConfig)
        if "seed" in self.train:
            raise UsageError("'train.seed' is not configurable; use the top-level 'seed'")
        return TR.TrainConfig(**{**self.train, "seed": self.seed})


def _strict(section: str, d: dict, cls) -> None:
    if not isinstance(d, dict):
        raise UsageError(f"section {section!r} must be an object")
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise UsageError(f"unknown key(s) in {section!r}: {', '.join(sorted(unknown))}")


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    _strict("<top level>", raw, RunConfig)
    data = raw.pop("data", {})
    _strict("data", data, DataConfig)
    try:
        return RunConfig(**raw, data=DataConfig(**data))
    except TypeError as exc:
        raise UsageError(str(exc)) from None


def _load_series(path) -> D.GridSeries:
    try:
        return D.load_gsf(path)
    except FileNotFoundError:
        raise DataError(f"data file not found: {path}") from None
    except D.GSFError as exc:
        raise DataError(f"{path}: {exc}") from None


def _load_ckpt(path) -> TR.Checkpoint:
    try:
        return TR.load_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    except TR.CheckpointError as exc:
        raise DataError(f"{path}: {exc}") from None


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    try:
        sim = cfg.sim_config()
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"invalid sim config: {exc}") from None
    series = S.generate(sim, cfg.hours, seed)
    D.save_gsf(series, args.out)
    mass = series.as_float64().sum(axis=(1, 2))
    t, h, w = series.shape
    print(f"wrote {args.out}: T={t} H={h} W={w}")
    print(f"mass per frame: min {mass.min():.6g} mean {mass.mean():.6g} max {mass.max():.6g}")
    print(f"sha256 {_digest(args.out)}")
    return EXIT_OK


def prepare_split(series: D.GridSeries, cfg: RunConfig, k: int, seed: int):
    windows = D.make_windows(series, cfg.data.window_len, k, cfg.data.stride)
    split = D.shuffle_split(windows, cfg.data.n_train, cfg.data.n_val, seed)
    norm = D.fit_normalizer(split.train)
    split = D.DatasetSplit([norm.apply_window(w) for w in split.train], [norm.apply_window(w) for w in split.val], seed)
    return split, norm


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    try:
        mcfg, tcfg = cfg.model_config(), cfg.train_config()
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    series = _load_series(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        split, norm = prepare_split(series, cfg, mcfg.history_k, cfg.seed)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    grid = series.shape[1:]
    resume = _load_ckpt(args.resume) if args.resume else None
    if resume is not None and tuple(resume.grid) != tuple(grid):
        raise DataError(f"checkpoint grid {resume.grid} does not match data grid {grid}")
    model = M.init_model(mcfg, grid, cfg.seed)
    label = f"{model.label}({tcfg.n_rollout})"
    print(f"training {label}: {model.count_parameters()} parameters, {len(split.train)} train / "
          f"{len(split.val)} val windows, {tcfg.epochs} epochs")

    def log(epoch, tr, va):
        if not args.quiet:
            print(f"epoch {epoch:4d}  train {tr:.6f}  val {'-' if va is None else f'{va:.6f}'}", flush=True)

    model, record = TR.train(model, split, tcfg, normalizer=norm, checkpoint_dir=out, resume=resume, log=log)
    state = TR.final_state(model)
    state.seeds = {"global": cfg.seed}
    TR.save_checkpoint(TR.Checkpoint.from_state(state, tcfg), out / "final.aoc")
    record.write_csv(out / "loss.csv")
    if mcfg.flavor == "CoNO":
        print("alpha per layer: " + ", ".join(f"{a:.6f}" for a in model.alphas()))
    print(f"final checkpoint {out / 'final.aoc'} sha256 {_digest(out / 'final.aoc')}")
    return EXIT_OK


def _check_grid(model: M.OperatorModel, grid) -> None:
    if tuple(grid) != tuple(model.grid) and model.config.flavor == "CoNO":
        raise M.UnsupportedOperation(
            f"data grid {tuple(grid)} differs from the training grid {tuple(model.grid)}; cross-resolution "
            "evaluation is only defined for FNO models because the fractional Fourier eigenbasis depends on the "
            "grid size"
        )


def cmd_eval(args) -> int:
    ckpt = _load_ckpt(args.checkpoint)
    model = ckpt.to_model()
    norm = ckpt.get_normalizer()
    series = _load_series(args.data)
    _check_grid(model, series.shape[1:])
    k, n = model.config.history_k, args.horizon
    if n < 1:
        raise UsageError("--horizon must be >= 1")
    try:
        windows = D.make_windows(series, k + n, k)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    if norm is not None:
        windows = [norm.apply_window(w) for w in windows]
    trained_n = (ckpt.train_config or {}).get("n_rollout")
    label = model.label if trained_n is None else f"{model.label}({trained_n})"
    ev = E.evaluate_rollout(model, windows, n, label=label, normalizer=norm if args.physical else None)
    tables = [E.MetricTable.from_evolutions([ev], h) for h in sorted({1, n})]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # one-step forecasts for every admissible hour, consumed by ``report``
    values = series.as_float64()
    idx, pred = E.forecast_all(E.model_predictor(model), norm.apply(values) if norm else values, k, 1)
    if norm is not None:
        pred = norm.invert(pred)
    D.save_gsf(_quiet_series(series.timestamps[idx], pred, series.georef), out / "onestep.gsf")
    E.render_outputs(E.Results(tables=tables, evolutions=[ev]), out)
    manifest = {
        "checkpoint": str(Path(args.checkpoint).resolve()),
        "data": str(Path(args.data).resolve()),
        "predictions": "onestep.gsf",
        "label": label,
        "horizon": n,
        "units": "physical" if args.physical else "normalized",
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for t in tables:
        print(t)
    return EXIT_OK


def _quiet_series(stamps, values, georef=None) -> D.GridSeries:
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return D.GridSeries(stamps, values, georef)


def cmd_forecast(args) -> int:
    ckpt = _load_ckpt(args.checkpoint)
    model = ckpt.to_model()
    norm = ckpt.get_normalizer()
    hist = _load_series(args.history)
    _check_grid(model, hist.shape[1:])
    k = model.config.history_k
    if hist.shape[0] < k:
        raise DataError(f"history has {hist.shape[0]} frames, the model needs {k}")
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    x = hist.as_float64()[-k:]
    if norm is not None:
        x = norm.apply(x)
    pred = M.rollout(model, x[None], args.steps).data[0]
    if norm is not None:
        pred = norm.invert(pred)
    stamps = hist.timestamps[-1] + 3600 * np.arange(1, args.steps + 1, dtype=np.int64)
    D.save_gsf(_quiet_series(stamps, pred, hist.georef), args.out)
    print(f"wrote {args.steps}-step forecast to {args.out}")
    return EXIT_OK


def _parse_points(text: str) -> list[tuple[int, int]]:
    pts = []
    for part in filter(None, (p.strip() for p in text.split(";"))):
        try:
            r, c = (int(v) for v in part.split(","))
        except ValueError:
            raise UsageError(f"bad point {part!r}; expected 'row,col'") from None
        pts.append((r, c))
    return pts


def cmd_report(args) -> int:
    evdir = Path(args.eval_dir)
    try:
        manifest = json.loads((evdir / "manifest.json").read_text())
    except FileNotFoundError:
        raise DataError(f"{evdir} has no manifest.json; run 'eval' first") from None
    truth = _load_series(manifest["data"])
    pred = _load_series(evdir / manifest["predictions"])
    pos = {int(t): i for i, t in enumerate(truth.timestamps)}
    try:
        idx = np.array([pos[int(t)] for t in pred.timestamps])
    except KeyError as exc:
        raise DataError(f"prediction timestamp {exc} not present in the data") from None
    if pred.shape[1:] != truth.shape[1:]:
        raise DataError(f"prediction grid {pred.shape[1:]} differs from data grid {truth.shape[1:]}")
    tv, pv = truth.as_float64(), pred.as_float64()
    points = []
    for r, c in _parse_points(args.points):
        if not (0 <= r < tv.shape[1] and 0 <= c < tv.shape[2]):
            raise DataError(f"grid point ({r},{c}) outside the {tv.shape[1]}x{tv.shape[2]} grid")
        points.append(E.PointSeries((r, c), 1, truth.timestamps[idx], tv[idx, r, c], pv[:, r, c]))
    covered = D.GridSeries(truth.timestamps[idx], truth.values[idx], truth.georef)
    report = E.extreme_events(covered, min(args.top, len(idx)), args.hour)
    for e in report.events:
        e.prediction = pv[e.index]
    E.render_outputs(E.Results(points=points, events=report, georef=truth.georef), args.out)
    for ps in points:
        print(f"point {ps.point}: r2 {ps.r2:.4f} rmse {ps.rmse:.6g} mae {ps.mae:.6g}")
    for rank, e in enumerate(report.events, 1):
        print(f"event {rank}: t={e.timestamp} total {e.total:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="aeroop", description="Neural-operator air-quality forecasting toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="simulate a synthetic grid series")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a grid series")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", help="continue from a checkpoint written by an earlier run")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="rollout metrics on a grid series")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--horizon", type=int, default=16)
    e.add_argument("--out", required=True)
    e.add_argument("--physical", action="store_true", help="metrics on denormalized values")
    e.set_defaults(fn=cmd_eval)

    f = sub.add_parser("forecast", help="autoregressive forecast from a history")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--history", required=True)
    f.add_argument("--steps", type=int, required=True)
    f.add_argument("--out", required=True)
    f.set_defaults(fn=cmd_forecast)

    r = sub.add_parser("report", help="point series and extreme-event maps from an eval directory")
    r.add_argument("--eval-dir", required=True)
    r.add_argument("--points", default="")
    r.add_argument("--out", required=True)
    r.add_argument("--top", type=int, default=3)
    r.add_argument("--hour", type=int)
    r.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get("AEROOP_THREADS")
    try:
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=int(threads)):
                return args.fn(args)
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TR.NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ShapeError, M.UnsupportedOperation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
