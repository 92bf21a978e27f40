"""FNO and CoNO neural operators.

Both flavors share the layout ``Q . K_L . ... . K_1 . P``:

* ``P`` (lift): complex pointwise dense map from the ``k`` history frames
  (plus two coordinate channels) to ``width`` latent channels;
* ``K_l``: ``sigma(W v + b + K v)`` with a split activation, where the kernel
  branch ``K`` is a truncated spectral multiplication, either in the FFT
  domain (FNO) or in the fractional Fourier domain of learnable order
  ``alpha`` (CoNO);
* ``Q`` (projection): real part of the latent field through a two-layer
  pointwise MLP.

Public inputs and outputs are laid out ``(batch, step, row, col)``; latent
fields are kept channel-last, ``(batch, row, col, channel)``, so pointwise maps
are single matrix products.

Parameter count for a config with ``C = k + 2`` (or ``k``) input channels,
``m0 x m1`` kept modes, ``w`` width, ``L`` layers and ``h`` hidden units,
counting complex entries twice::

    2 * (C * w + w)                                  # lift
  + L * (2 * w*w * m0 * m1 + 2 * w*w + 2 * w)        # spectral, W, b
  + L                                                # one alpha per layer (CoNO)
  + (w * h + h) + (h + 1)                            # projection MLP

with ``m0 = min(2 * kmax - 1, H)`` and ``m1 = kmax``.
"""

from __future__ import annotations

import functools
from dataclasses import asdict, dataclass, field

import numpy as np

from . import frft as _frft
from . import rng
from . import tensor as T
from .tensor import Tensor

FLAVORS = ("FNO", "CoNO")
ACTIVATIONS = ("split-gelu", "split-relu")


class UnsupportedOperation(RuntimeError):
    pass


@dataclass
class ModelConfig:
    flavor: str = "CoNO"
    history_k: int = 10
    modes: int = 12
    width: int = 20
    n_layers: int = 4
    projection_hidden: int = 128
    append_coords: bool = True
    activation: str = "split-gelu"

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise ValueError(f"flavor must be one of {FLAVORS}, got {self.flavor!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        for name in ("history_k", "modes", "width", "n_layers", "projection_hidden"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def in_channels(self) -> int:
        return self.history_k + (2 if self.append_coords else 0)

    def kept_modes(self, h: int, w: int) -> tuple[int, int]:
        if self.modes > min(h, w):
            raise ValueError(f"modes={self.modes} exceeds grid {h}x{w}")
        return min(2 * self.modes - 1, h), self.modes

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_count(config: ModelConfig, h: int, w: int) -> int:
    """Closed-form number of real scalars in a model bound to an ``h x w`` grid."""
    m0, m1 = config.kept_modes(h, w)
    c, wd, hid = config.in_channels, config.width, config.projection_hidden
    per_layer = 2 * wd * wd * m0 * m1 + 2 * wd * wd + 2 * wd
    if config.flavor == "CoNO":
        per_layer += 1
    return 2 * (c * wd + wd) + config.n_layers * per_layer + (wd * hid + hid) + (hid + 1)


@dataclass
class SpectralLayer:
    spectral: Tensor  # (width, width, m0, m1) complex
    weight: Tensor  # (width, width) complex
    bias: Tensor  # (width,) complex
    alpha: Tensor | None = None  # real scalar, CoNO only


@dataclass
class OperatorModel:
    config: ModelConfig
    grid: tuple[int, int]
    lift_weight: Tensor
    lift_bias: Tensor
    layers: list[SpectralLayer]
    proj1_weight: Tensor
    proj1_bias: Tensor
    proj2_weight: Tensor
    proj2_bias: Tensor
    _cache: dict = field(default_factory=dict, repr=False)

    # -- parameter access -------------------------------------------------
    def named_parameters(self) -> dict[str, Tensor]:
        out = {"lift.weight": self.lift_weight, "lift.bias": self.lift_bias}
        for i, layer in enumerate(self.layers):
            out[f"layers.{i}.spectral"] = layer.spectral
            out[f"layers.{i}.weight"] = layer.weight
            out[f"layers.{i}.bias"] = layer.bias
            if layer.alpha is not None:
                out[f"layers.{i}.alpha"] = layer.alpha
        out.update(
            {
                "proj1.weight": self.proj1_weight,
                "proj1.bias": self.proj1_bias,
                "proj2.weight": self.proj2_weight,
                "proj2.bias": self.proj2_bias,
            }
        )
        return out

    def count_parameters(self) -> int:
        return sum(p.data.size * (2 if p.is_complex else 1) for p in self.named_parameters().values())

    def alphas(self) -> list[float]:
        return [float(layer.alpha.data) for layer in self.layers if layer.alpha is not None]

    @property
    def label(self) -> str:
        return "CoNOAir" if self.config.flavor == "CoNO" else "FNO"

    def __call__(self, history):
        return forward(self, history)


def init_model(config: ModelConfig, grid: tuple[int, int], seed: int = 0) -> OperatorModel:
    """Randomly initialize a model for an ``H x W`` grid."""
    h, w = grid
    m0, m1 = config.kept_modes(h, w)
    gen = rng.stream(seed, "operator-models")
    wd = config.width

    def dense(fan_in, shape, complex_=False):
        bound = 1.0 / np.sqrt(fan_in)
        re = gen.uniform(-bound, bound, size=shape)
        if not complex_:
            return re
        return re + 1j * gen.uniform(-bound, bound, size=shape)

    lift_w = T.parameter(dense(config.in_channels, (config.in_channels, wd), True), "lift.weight")
    lift_b = T.parameter(dense(config.in_channels, (wd,), True), "lift.bias")
    layers = []
    s = 1.0 / (wd * wd)
    for i in range(config.n_layers):
        spec = gen.uniform(-s, s, size=(wd, wd, m0, m1)) + 1j * gen.uniform(-s, s, size=(wd, wd, m0, m1))
        layers.append(
            SpectralLayer(
                spectral=T.parameter(spec, f"layers.{i}.spectral"),
                weight=T.parameter(dense(wd, (wd, wd), True), f"layers.{i}.weight"),
                bias=T.parameter(dense(wd, (wd,), True), f"layers.{i}.bias"),
                alpha=T.parameter(np.array(1.0), f"layers.{i}.alpha") if config.flavor == "CoNO" else None,
            )
        )
    hid = config.projection_hidden
    return OperatorModel(
        config=config,
        grid=(h, w),
        lift_weight=lift_w,
        lift_bias=lift_b,
        layers=layers,
        proj1_weight=T.parameter(dense(wd, (wd, hid)), "proj1.weight"),
        proj1_bias=T.parameter(dense(wd, (hid,)), "proj1.bias"),
        proj2_weight=T.parameter(dense(hid, (hid, 1)), "proj2.weight"),
        proj2_bias=T.parameter(dense(hid, (1,)), "proj2.bias"),
    )


# ---------------------------------------------------------------------------
# building blocks


@functools.lru_cache(maxsize=64)
def coordinate_channels(h: int, w: int) -> np.ndarray:
    """Two channels holding row and column coordinates in ``[0, 1)``."""
    rows = np.broadcast_to((np.arange(h) / h)[:, None], (h, w))
    cols = np.broadcast_to((np.arange(w) / w)[None, :], (h, w))
    out = np.stack([rows, cols])
    out.setflags(write=False)
    return out


def _batched(x) -> tuple[Tensor, bool]:
    t = x if isinstance(x, Tensor) else T.tensor(x)
    if t.data.ndim == 3:
        return T.reshape(t, (1,) + t.shape), True
    if t.data.ndim != 4:
        raise T.ShapeError(f"expected (k, H, W) or (B, k, H, W) input, got {t.shape}")
    return t, False


def split_activation(v: Tensor, kind: str = "split-gelu") -> Tensor:
    """Apply a real activation to the real and imaginary parts separately."""
    if kind == "split-gelu":
        return T.split_gelu(v)
    return T.make_complex(T.relu(T.real(v)), T.relu(T.imag(v)))


def pointwise(v: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Channel-mixing affine map applied at every grid point (channel-last)."""
    return T.dense(v, weight, bias)


def _lift_channels_last(model: OperatorModel, x: Tensor) -> Tensor:
    b, h, w, k = x.shape
    if k != model.config.history_k:
        raise T.ShapeError(f"lift: expected {model.config.history_k} history steps, got {k}")
    if model.config.append_coords:
        coords = np.broadcast_to(np.moveaxis(coordinate_channels(h, w), 0, -1), (b, h, w, 2))
        x = T.concat([x, T.tensor(coords)], axis=3)
    return pointwise(x, model.lift_weight, model.lift_bias)


def lift(model: OperatorModel, history) -> Tensor:
    """``(B, k, H, W)`` history to a ``(B, H, W, width)`` complex latent field."""
    x, _ = _batched(history)
    return _lift_channels_last(model, T.transpose(x, (0, 2, 3, 1)))


def _check_latent(v: Tensor, layer: SpectralLayer) -> None:
    wd = layer.weight.shape[0]
    if v.data.ndim != 4 or v.shape[3] != wd:
        raise T.ShapeError(f"layer expects (B, H, W, {wd}) latent, got {v.shape}")


def _mix_modes(coeffs: Tensor, spectral: Tensor) -> Tensor:
    # (B, m0, m1, I) x (I, O, m0, m1) -> (B, m0, m1, O), one matmul per mode
    per_mode = T.transpose(coeffs, (1, 2, 0, 3)) @ T.transpose(spectral, (2, 3, 0, 1))
    return T.transpose(per_mode, (2, 0, 1, 3))


@functools.lru_cache(maxsize=None)
def _dft_rows(n: int, kmax: int, two_sided: bool) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Kept indices, forward DFT rows and inverse DFT columns for one axis."""
    idx = _frft.frequency_indices(n, kmax, two_sided=two_sided)
    fwd = np.exp(-2j * np.pi * np.outer(idx, np.arange(n)) / n)
    inv = np.conj(fwd).T / n
    for a in (idx, fwd, inv):
        a.setflags(write=False)
    return idx, fwd, inv


def fno_kernel(v: Tensor, spectral: Tensor, kmax: int) -> Tensor:
    """Truncated FFT-domain multiplication (kernel branch of an FNO layer).

    Equal to ``ifft2(R . truncate(fft2(v)))``; only the kept rows of the DFT
    are ever formed, as dense matrices applied along each spatial axis.
    """
    h, w = v.shape[1:3]
    i0, f0, b0 = _dft_rows(h, kmax, True)
    i1, f1, b1 = _dft_rows(w, kmax, False)
    if spectral.shape[-2:] != (len(i0), len(i1)):
        raise T.ShapeError(f"spectral weights {spectral.shape} do not fit {len(i0)}x{len(i1)} kept modes")
    coeffs = T.axis_apply(T.axis_apply(v, f0, axis=1), f1, axis=2)
    mixed = _mix_modes(coeffs, spectral)
    return T.axis_apply(T.axis_apply(mixed, b0, axis=1), b1, axis=2)


@functools.lru_cache(maxsize=None)
def _frft_rows(n: int, idx: tuple[int, ...], sign: int):
    basis = _frft.build_basis(n)
    rows = np.asarray(idx)

    if sign > 0:
        return (
            lambda a: _frft.frft_matrix(a, basis)[rows, :],
            lambda a: _frft.frft_matrix_dalpha(a, basis)[rows, :],
        )
    return (
        lambda a: _frft.frft_matrix(-a, basis)[:, rows],
        lambda a: -_frft.frft_matrix_dalpha(-a, basis)[:, rows],
    )


def cono_kernel(v: Tensor, spectral: Tensor, alpha: Tensor, kmax: int) -> Tensor:
    """Truncated multiplication in the order-``alpha`` fractional Fourier domain.

    Kept positions are the centered-domain images of the FNO frequency sets,
    so at ``alpha = 1`` this is the FNO kernel up to a permutation of the
    spectral weights (see :func:`fno_to_cono_weights`).
    """
    h, w = v.shape[1:3]
    i0 = tuple(int(i) for i in _frft.centered_indices(h, kmax, two_sided=True))
    i1 = tuple(int(i) for i in _frft.centered_indices(w, kmax, two_sided=False))
    if spectral.shape[-2:] != (len(i0), len(i1)):
        raise T.ShapeError(f"spectral weights {spectral.shape} do not fit {len(i0)}x{len(i1)} kept modes")
    f0, d0 = _frft_rows(h, i0, +1)
    f1, d1 = _frft_rows(w, i1, +1)
    coeffs = T.axis_transform(T.axis_transform(v, f0, d0, alpha, axis=1), f1, d1, alpha, axis=2)
    mixed = _mix_modes(coeffs, spectral)
    g0, e0 = _frft_rows(h, i0, -1)
    g1, e1 = _frft_rows(w, i1, -1)
    return T.axis_transform(T.axis_transform(mixed, g0, e0, alpha, axis=1), g1, e1, alpha, axis=2)


def fno_layer(v: Tensor, layer: SpectralLayer, kmax: int, activation: str = "split-gelu") -> Tensor:
    """``sigma(W v + b + FFT^-1(R . FFT(v)))`` on a ``(B, H, W, width)`` field."""
    _check_latent(v, layer)
    pre = pointwise(v, layer.weight, layer.bias) + fno_kernel(v, layer.spectral, kmax)
    return split_activation(pre, activation)


def cono_layer(v: Tensor, layer: SpectralLayer, kmax: int, activation: str = "split-gelu") -> Tensor:
    """``sigma(W v + b + F^-alpha(R . F^alpha(v)))`` on a ``(B, H, W, width)`` field."""
    _check_latent(v, layer)
    if layer.alpha is None:
        raise ValueError("CoNO layer needs an alpha parameter")
    pre = pointwise(v, layer.weight, layer.bias) + cono_kernel(v, layer.spectral, layer.alpha, kmax)
    return split_activation(pre, activation)


def fno_to_cono_weights(spectral: np.ndarray, h: int, w: int, kmax: int) -> np.ndarray:
    """Reorder FNO spectral weights so a CoNO layer at ``alpha = 1`` matches.

    The centered DFT is the ordinary DFT with output index ``m`` carrying
    frequency ``m - N//2`` and a per-mode phase; the phase cancels between
    forward and inverse transforms, leaving a permutation of kept modes.
    """
    for axis, (n, two_sided) in enumerate(((h, True), (w, False))):
        freq = _frft.frequency_indices(n, kmax, two_sided=two_sided)
        cent = _frft.centered_indices(n, kmax, two_sided=two_sided)
        # position j in the centered list holds frequency (cent[j] - n//2) mod n
        src = np.searchsorted(freq, (cent - n // 2) % n)
        spectral = np.take(spectral, src, axis=2 + axis)
    return spectral


def _project_channels_last(model: OperatorModel, v: Tensor) -> Tensor:
    if v.data.ndim != 4 or v.shape[3] != model.config.width:
        raise T.ShapeError(f"project: expected (B, H, W, {model.config.width}), got {v.shape}")
    hidden = T.gelu(pointwise(T.real(v), model.proj1_weight, model.proj1_bias))
    return pointwise(hidden, model.proj2_weight, model.proj2_bias)


def project(model: OperatorModel, v: Tensor) -> Tensor:
    """``(B, H, W, width)`` latent to a real ``(B, 1, H, W)`` field."""
    out = _project_channels_last(model, v)
    return T.reshape(out, (out.shape[0], 1) + out.shape[1:3])


def apply_layer(model: OperatorModel, v: Tensor, layer: SpectralLayer) -> Tensor:
    fn = cono_layer if model.config.flavor == "CoNO" else fno_layer
    return fn(v, layer, model.config.modes, model.config.activation)


def _step(model: OperatorModel, x_last: Tensor) -> Tensor:
    # (B, H, W, k) -> (B, H, W, 1)
    model.config.kept_modes(*x_last.shape[1:3])
    v = _lift_channels_last(model, x_last)
    for layer in model.layers:
        v = apply_layer(model, v, layer)
    return _project_channels_last(model, v)


def forward(model: OperatorModel, history):
    """One-step prediction: ``(B, k, H, W) -> (B, 1, H, W)`` (or unbatched)."""
    x, squeeze = _batched(history)
    out = _step(model, T.transpose(x, (0, 2, 3, 1)))
    b, h, w, _ = out.shape
    return T.reshape(out, (1, h, w) if squeeze else (b, 1, h, w))


def rollout(model: OperatorModel, history, n: int, *, detach: bool = False):
    """Autoregressive ``n``-step forecast, ``(B, k, H, W) -> (B, n, H, W)``.

    Each prediction is appended to the history window and the oldest frame is
    dropped.  With ``detach`` the fed-back predictions are cut from the
    gradient graph.
    """
    if n < 1:
        raise ValueError("rollout needs n >= 1")
    x, squeeze = _batched(history)
    x = T.transpose(x, (0, 2, 3, 1))
    preds = []
    for _ in range(n):
        p = _step(model, x)
        preds.append(p)
        fed = T.tensor(p.data) if detach else p
        x = T.concat([x[:, :, :, 1:], fed], axis=3)
    out = T.concat(preds, axis=3) if n > 1 else preds[0]
    out = T.transpose(out, (0, 3, 1, 2))
    return T.reshape(out, out.shape[1:]) if squeeze else out


def evaluate_at_resolution(model: OperatorModel, history) -> Tensor:
    """Evaluate an FNO on a grid other than the one it was trained on.

    The spectral weights and kept frequency sets are reused unchanged.  The
    CoNO flavor is rejected: its fractional eigenbasis depends on the grid
    size, so there is no canonical transfer of its weights.
    """
    if model.config.flavor != "FNO":
        raise UnsupportedOperation(
            "cross-resolution evaluation is only defined for FNO models; the "
            "fractional Fourier eigenbasis changes with grid size"
        )
    return forward(model, history)
