"""Losses, Adam, the step schedule, rollout training and AOC1 checkpoints.

AOC1 container (little-endian)::

    4   magic b"AOC1"
    4   u32 version (= 1)
    8   u64 length n of the JSON header
    n   JSON header (UTF-8, sorted keys): model config, grid, train config,
        epoch, adam step count, normalizer, seeds, loss history
    4   u32 number of blocks
    then per block:
        2   u16 name length, name (UTF-8)
        1   u8 dtype tag: 0 real64, 1 complex128 (stored as interleaved re, im)
        1   u8 ndim, then ndim x u64 dims
        ... payload, real64 values

Blocks are named ``param/<name>``, ``adam.m/<name>`` and ``adam.v/<name>``.
"""

from __future__ import annotations

import csv
import json
import math
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import models as M
from . import rng
from . import tensor as T
from .data import DatasetSplit, Normalizer, WindowSample
from .tensor import Tensor

AOC_MAGIC = b"AOC1"
AOC_VERSION = 1
_TAG_REAL, _TAG_COMPLEX = 0, 1


class NumericFailure(FloatingPointError):
    """Raised when a loss or gradient stops being finite."""

    def __init__(self, message: str, checkpoint: str | None = None):
        super().__init__(message if checkpoint is None else f"{message}; diagnostic checkpoint at {checkpoint}")
        self.checkpoint = checkpoint


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 500
    lr0: float = 1e-3
    halve_every: int = 100
    n_rollout: int = 4
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0
    detach_rollout: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if self.n_rollout < 1 or self.batch_size < 1 or self.halve_every < 1:
            raise ValueError("n_rollout, batch_size and halve_every must be >= 1")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise KeyError(f"unknown TrainConfig key(s): {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass
class LossRecord:
    train: list[float] = field(default_factory=list)
    val: list[float | None] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            for i, (tr, va) in enumerate(zip(self.train, self.val)):
                w.writerow([i, repr(tr), "" if va is None else repr(va)])


# ---------------------------------------------------------------------------
# losses


def _norms(y: np.ndarray, axes) -> np.ndarray:
    n = np.sqrt(np.sum(np.square(y), axis=axes))
    if np.any(n == 0):
        raise ValueError("relative L2 is undefined for an all-zero ground truth")
    return n


def rl2_loss(y, yhat) -> Tensor:
    """``||y - yhat|| / ||y||`` over the whole field."""
    y = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    yhat = yhat if isinstance(yhat, Tensor) else T.tensor(yhat)
    if y.shape != yhat.shape:
        raise T.ShapeError(f"rl2_loss shapes differ: {y.shape} vs {yhat.shape}")
    d = T.sub(yhat, T.tensor(y))
    return T.scale(T.sqrt(T.reduce_sum(T.mul(d, d))), 1.0 / float(_norms(y, None)))


def _stepwise_rl2(pred: Tensor, targets: np.ndarray) -> Tensor:
    """Per-sample, per-step RL2 of ``(B, n, H, W)`` fields: shape ``(B, n)``."""
    d = T.sub(pred, T.tensor(targets))
    err = T.sqrt(T.reduce_sum(T.mul(d, d), axis=(2, 3)))
    return T.mul(err, T.tensor(1.0 / _norms(targets, (2, 3))))


def rollout_loss(model: M.OperatorModel, sample, n: int, *, detach: bool = False) -> Tensor:
    """Cumulative RL2 over an ``n``-step autoregressive rollout.

    ``sample`` is a :class:`WindowSample` or an ``(inputs, targets)`` pair of
    batched arrays; for a batch the per-sample sums are averaged.
    """
    if isinstance(sample, WindowSample):
        inputs, targets = sample.inputs[None], sample.targets[None]
    else:
        inputs, targets = sample
    if targets.shape[1] < n:
        raise ValueError(f"sample has {targets.shape[1]} target steps, rollout needs {n}")
    pred = M.rollout(model, inputs, n, detach=detach)
    per_sample = T.reduce_sum(_stepwise_rl2(pred, targets[:, :n]), axis=1)
    return T.reduce_mean(per_sample)


def lr_at(epoch: int, config: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return config.lr0 * 0.5 ** (epoch // config.halve_every)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls({k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()})


def _componentwise(fn, z):
    if np.iscomplexobj(z):
        return fn(z.real) + 1j * fn(z.imag)
    return fn(z)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState, lr: float,
              config: TrainConfig) -> None:
    """One in-place Adam update; complex entries are two independent reals."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericFailure(f"non-finite gradient for {name}")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * _componentwise(np.square, g)
        state.m[name], state.v[name] = m, v
        if np.iscomplexobj(p.data):
            step = m.real / (np.sqrt(v.real / c2) + config.eps) + 1j * (m.imag / (np.sqrt(v.imag / c2) + config.eps))
        else:
            step = m / (np.sqrt(v / c2) + config.eps)
        p.data = p.data - (lr / c1) * step


# ---------------------------------------------------------------------------
# training loop


def stack_windows(windows: list[WindowSample], n: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    inputs = np.stack([w.inputs for w in windows])
    targets = np.stack([w.targets if n is None else w.targets[:n] for w in windows])
    return inputs, targets


def gradients(model: M.OperatorModel, batch, n: int, *, detach: bool = False) -> tuple[float, dict[str, np.ndarray]]:
    params = model.named_parameters()
    loss, tape = T.record_forward(lambda: rollout_loss(model, batch, n, detach=detach))
    value = float(loss.data)
    if not math.isfinite(value):
        return value, {}
    g = T.backward(tape, loss)
    return value, {name: g.get(p, np.zeros_like(p.data)) for name, p in params.items()}


def validation_loss(model: M.OperatorModel, windows: list[WindowSample], n: int, batch_size: int = 32) -> float | None:
    if not windows:
        return None
    total = 0.0
    for s in range(0, len(windows), batch_size):
        chunk = windows[s : s + batch_size]
        total += float(rollout_loss(model, stack_windows(chunk, n), n).data) * len(chunk)
    return total / len(windows)


@dataclass
class TrainState:
    model: M.OperatorModel
    adam: AdamState
    epoch: int = 0
    history: LossRecord = field(default_factory=LossRecord)
    normalizer: Normalizer | None = None
    seeds: dict = field(default_factory=dict)


def train(model: M.OperatorModel, split: DatasetSplit, config: TrainConfig, *,
          normalizer: Normalizer | None = None, checkpoint_dir=None, resume: "Checkpoint | None" = None,
          stop_after: int | None = None, log=None) -> tuple[M.OperatorModel, LossRecord]:
    """Train on already-normalized windows.

    Each epoch visits the training windows in an order drawn from a stream
    keyed by the epoch index, so a run resumed from a checkpoint replays the
    same batches as an uninterrupted one.  ``stop_after`` ends the run after
    that many epochs in total (used to produce mid-run checkpoints).
    """
    if not split.train:
        raise ValueError("training split is empty")
    need = config.n_rollout
    short = [w.start_index for w in split.train + split.val if w.targets.shape[0] < need]
    if short:
        raise ValueError(f"windows starting at {short[:3]} have fewer than {need} targets")

    if resume is not None:
        state = resume.to_state()
        model = state.model
    else:
        state = TrainState(model, AdamState.zeros(model.named_parameters()), 0, LossRecord(), normalizer,
                           {"train": config.seed})
    ckdir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckdir is not None:
        ckdir.mkdir(parents=True, exist_ok=True)
    params = model.named_parameters()
    last = config.epochs if stop_after is None else min(config.epochs, stop_after)
    bs = config.batch_size

    while state.epoch < last:
        epoch = state.epoch
        t0 = time.perf_counter()
        lr = lr_at(epoch, config)
        order = rng.stream(config.seed, f"training.epoch.{epoch}").permutation(len(split.train))
        total = 0.0
        for s in range(0, len(order), bs):
            chunk = [split.train[i] for i in order[s : s + bs]]
            value, grads = gradients(model, stack_windows(chunk, need), need, detach=config.detach_rollout)
            try:
                if not math.isfinite(value):
                    raise NumericFailure(f"non-finite loss {value} in epoch {epoch}")
                adam_step(params, grads, state.adam, lr, config)
            except NumericFailure as exc:
                path = None
                if ckdir is not None:
                    path = str(ckdir / "diagnostic.aoc")
                    save_checkpoint(Checkpoint.from_state(state, config), path)
                raise NumericFailure(str(exc), path) from None
            total += value * len(chunk)
        state.history.train.append(total / len(split.train))
        state.history.val.append(validation_loss(model, split.val, need))
        state.history.wall_time.append(time.perf_counter() - t0)
        state.epoch += 1
        if log is not None:
            log(state.epoch, state.history.train[-1], state.history.val[-1])
        if ckdir is not None and config.checkpoint_every and state.epoch % config.checkpoint_every == 0:
            save_checkpoint(Checkpoint.from_state(state, config), ckdir / f"epoch_{state.epoch:04d}.aoc")
    model._cache["train_state"] = state
    return model, state.history


def final_state(model: M.OperatorModel) -> TrainState:
    return model._cache["train_state"]


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    model_config: dict
    grid: tuple[int, int]
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: int = 0
    epoch: int = 0
    train_config: dict | None = None
    normalizer: tuple[float, float] | None = None
    seeds: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: M.OperatorModel, **extra) -> "Checkpoint":
        params = {k: p.data.copy() for k, p in model.named_parameters().items()}
        return cls(model.config.to_dict(), tuple(model.grid), params, **extra)

    @classmethod
    def from_state(cls, state: TrainState, config: TrainConfig) -> "Checkpoint":
        norm = state.normalizer
        return cls.from_model(
            state.model,
            adam_m={k: v.copy() for k, v in state.adam.m.items()},
            adam_v={k: v.copy() for k, v in state.adam.v.items()},
            adam_t=state.adam.t,
            epoch=state.epoch,
            train_config=asdict(config),
            normalizer=None if norm is None else (norm.vmin, norm.vmax),
            seeds=dict(state.seeds),
            history={"train": list(state.history.train), "val": list(state.history.val)},
        )

    def to_model(self) -> M.OperatorModel:
        cfg = M.ModelConfig(**self.model_config)
        model = M.init_model(cfg, self.grid, 0)
        for name, p in model.named_parameters().items():
            p.data = self.params[name].copy()
        return model

    def to_state(self) -> TrainState:
        model = self.to_model()
        if self.adam_m:
            adam = AdamState({k: v.copy() for k, v in self.adam_m.items()},
                             {k: v.copy() for k, v in self.adam_v.items()}, self.adam_t)
        else:
            adam = AdamState.zeros(model.named_parameters())
        hist = LossRecord(list(self.history.get("train", [])), list(self.history.get("val", [])))
        hist.wall_time = [0.0] * len(hist.train)
        norm = Normalizer(*self.normalizer) if self.normalizer is not None else None
        return TrainState(model, adam, self.epoch, hist, norm, dict(self.seeds))

    def get_normalizer(self) -> Normalizer | None:
        return Normalizer(*self.normalizer) if self.normalizer is not None else None


def _pack_block(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode()
    is_c = np.iscomplexobj(arr)
    payload = (arr.astype("<c16") if is_c else arr.astype("<f8")).tobytes()
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<BB", _TAG_COMPLEX if is_c else _TAG_REAL, arr.ndim)
    return head + struct.pack(f"<{arr.ndim}Q", *arr.shape) + payload


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    header = {
        "model_config": ckpt.model_config,
        "grid": list(ckpt.grid),
        "train_config": ckpt.train_config,
        "epoch": ckpt.epoch,
        "adam_t": ckpt.adam_t,
        "normalizer": None if ckpt.normalizer is None else list(ckpt.normalizer),
        "seeds": ckpt.seeds,
        "history": ckpt.history,
    }
    text = json.dumps(header, sort_keys=True).encode()
    blocks = [("param/" + k, v) for k, v in ckpt.params.items()]
    blocks += [("adam.m/" + k, v) for k, v in ckpt.adam_m.items()]
    blocks += [("adam.v/" + k, v) for k, v in ckpt.adam_v.items()]
    parts = [AOC_MAGIC, struct.pack("<IQ", AOC_VERSION, len(text)), text, struct.pack("<I", len(blocks))]
    parts += [_pack_block(name, np.asarray(arr)) for name, arr in blocks]
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint while reading {what} at byte {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    if r.take(4, "magic") != AOC_MAGIC:
        raise CheckpointError(f"bad magic, expected {AOC_MAGIC!r}")
    version, n = r.unpack("<IQ", "header")
    if version != AOC_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(r.take(n, "config text").decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt config text: {exc}") from None
    (count,) = r.unpack("<I", "block count")
    blocks: dict[str, np.ndarray] = {}
    for _ in range(count):
        (ln,) = r.unpack("<H", "block name")
        name = r.take(ln, "block name").decode()
        tag, ndim = r.unpack("<BB", f"block {name}")
        if tag not in (_TAG_REAL, _TAG_COMPLEX):
            raise CheckpointError(f"unknown dtype tag {tag} in block {name}")
        shape = r.unpack(f"<{ndim}Q", f"shape of {name}")
        dtype = "<c16" if tag == _TAG_COMPLEX else "<f8"
        size = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
        blocks[name] = np.frombuffer(r.take(size, f"payload of {name}"), dtype=dtype).reshape(shape).astype(
            np.complex128 if tag == _TAG_COMPLEX else np.float64
        )
    if r.pos != len(r.buf):
        raise CheckpointError(f"{len(r.buf) - r.pos} trailing bytes after the last block")

    grid = tuple(header["grid"])
    cfg = M.ModelConfig(**header["model_config"])
    expected = {k: p.shape for k, p in M.init_model(cfg, grid, 0).named_parameters().items()}
    sections = {"param": {}, "adam.m": {}, "adam.v": {}}
    for name, arr in blocks.items():
        kind, _, pname = name.partition("/")
        if kind not in sections or pname not in expected:
            raise CheckpointError(f"unexpected block {name!r}")
        if arr.shape != expected[pname]:
            raise CheckpointError(f"shape mismatch for {name}: file has {arr.shape}, config implies {expected[pname]}")
        sections[kind][pname] = arr
    missing = set(expected) - set(sections["param"])
    if missing:
        raise CheckpointError(f"missing parameter block(s): {', '.join(sorted(missing))}")
    norm = header.get("normalizer")
    return Checkpoint(
        model_config=header["model_config"],
        grid=grid,
        params=sections["param"],
        adam_m=sections["adam.m"],
        adam_v=sections["adam.v"],
        adam_t=header.get("adam_t", 0),
        epoch=header.get("epoch", 0),
        train_config=header.get("train_config"),
        normalizer=None if norm is None else tuple(norm),
        seeds=header.get("seeds", {}),
        history=header.get("history", {}),
    )
