"""Synthetic ground truth: 2D advection-diffusion-decay with diurnal sources.

Each substep of length ``dt_sub = dt / substeps`` applies, in order,

1. first-order upwind advection along columns, then along rows (flux form);
2. explicit 5-point diffusion;
3. point-source injection ``dt_sub * S_k(t)`` with
   ``S(t) = base * (1 + amp * sin(2 pi (t + phase) / 24))``;
4. decay by the exact factor ``exp(-decay * dt_sub)``.

Velocities live on cell faces.  The stability limits
``max|u| dt_sub / dx <= 0.5`` and ``D dt_sub / dx**2 <= 0.25`` make every
stage a nonnegative combination of old values, so the scheme preserves
nonnegativity; on a periodic grid the flux form conserves mass exactly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import _kernels, rng
from .data import GridSeries

EPOCH0 = 1451606400  # 2016-01-01T00:00:00Z


class CFLError(ValueError):
    pass


@dataclass(frozen=True)
class Source:
    row: int
    col: int
    base: float
    amplitude: float = 0.0
    phase: float = 0.0

    def rate(self, t: float) -> float:
        # reducing the phase argument modulo 24 keeps S(t + 24) == S(t) bitwise
        tau = math.fmod(t + self.phase, 24.0)
        return self.base * (1.0 + self.amplitude * math.sin(2.0 * math.pi * tau / 24.0))


@dataclass
class SimConfig:
    H: int = 32
    W: int = 32
    dx: float = 1.0
    dt: float = 1.0
    substeps: int = 4
    D: float = 0.1
    velocity: dict = field(default_factory=lambda: {"kind": "constant", "u": 0.0, "v": 0.0})
    decay: float = 0.0
    sources: list = field(default_factory=list)
    boundary: str = "periodic"
    background: float = 0.0
    spinup_hours: float = 0.0

    def __post_init__(self):
        self.sources = [s if isinstance(s, Source) else Source(**s) for s in self.sources]
        if self.boundary not in ("periodic", "outflow"):
            raise ValueError(f"boundary must be 'periodic' or 'outflow', got {self.boundary!r}")
        if self.H < 1 or self.W < 1 or self.substeps < 1:
            raise ValueError("H, W and substeps must be positive")
        if self.dx <= 0 or self.dt <= 0:
            raise ValueError("dx and dt must be positive")
        if self.D < 0 or self.decay < 0 or self.background < 0:
            raise ValueError("D, decay and background must be nonnegative")
        for s in self.sources:
            if s.base < 0 or not 0 <= s.amplitude <= 1:
                raise ValueError(f"source {s} needs base >= 0 and 0 <= amplitude <= 1")
            if not (0 <= s.row < self.H and 0 <= s.col < self.W):
                raise ValueError(f"source {s} lies outside the {self.H}x{self.W} grid")
        if self.velocity.get("kind") not in ("constant", "stream"):
            raise ValueError("velocity.kind must be 'constant' or 'stream'")

    @property
    def dt_sub(self) -> float:
        return self.dt / self.substeps

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown SimConfig key(s): {', '.join(sorted(unknown))}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["sources"] = [asdict(s) for s in self.sources]
        return out

    def refined(self, factor: int = 2) -> "SimConfig":
        d = self.to_dict()
        d["substeps"] = self.substeps * factor
        return SimConfig.from_dict(d)


def urban_toy() -> SimConfig:
    """Default benchmark scenario: 32x32 periodic grid, four phased sources."""
    return SimConfig(
        H=32,
        W=32,
        dx=1.0,
        dt=1.0,
        substeps=4,
        D=0.15,
        velocity={"kind": "stream", "speed": 0.6, "modes": 2},
        decay=0.02,
        sources=[
            Source(8, 8, 4.0, 0.9, 0.0),
            Source(10, 23, 3.0, 0.8, 6.0),
            Source(22, 12, 5.0, 0.7, 12.0),
            Source(25, 26, 2.5, 0.9, 18.0),
        ],
        boundary="periodic",
        background=0.5,
        spinup_hours=48.0,
    )


@dataclass
class SimState:
    concentration: np.ndarray
    time: float


def face_velocities(config: SimConfig, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Column-face ``u`` of shape (H, W+1) and row-face ``v`` of shape (H+1, W)."""
    h, w = config.H, config.W
    vel = config.velocity
    if vel["kind"] == "constant":
        u = np.full((h, w + 1), float(vel.get("u", 0.0)))
        v = np.full((h + 1, w), float(vel.get("v", 0.0)))
        return u, v
    # stream function sampled at cell corners; differences give a discretely
    # divergence-free face field
    gen = rng.stream(seed, "synth-pde")
    modes = int(vel.get("modes", 2))
    yy, xx = np.meshgrid(np.arange(h + 1) / h, np.arange(w + 1) / w, indexing="ij")
    psi = np.zeros((h + 1, w + 1))
    for kx in range(1, modes + 1):
        for ky in range(1, modes + 1):
            amp = gen.normal() / (kx * kx + ky * ky)
            px, py = gen.uniform(0, 2 * np.pi, size=2)
            psi += amp * np.sin(2 * np.pi * kx * xx + px) * np.sin(2 * np.pi * ky * yy + py)
    u = (psi[1:, :] - psi[:-1, :]) / config.dx  # (H, W+1)
    v = -(psi[:, 1:] - psi[:, :-1]) / config.dx  # (H+1, W)
    peak = max(np.abs(u).max(), np.abs(v).max())
    scale = float(vel.get("speed", 0.5)) / peak if peak > 0 else 0.0
    u, v = u * scale, v * scale
    if config.boundary == "periodic":
        u[:, -1] = u[:, 0]
        v[-1, :] = v[0, :]
    return u, v


def check_cfl(config: SimConfig, u: np.ndarray, v: np.ndarray) -> None:
    courant = max(np.abs(u).max(), np.abs(v).max()) * config.dt_sub / config.dx
    diff = config.D * config.dt_sub / config.dx**2
    if courant > 0.5 + 1e-12 or diff > 0.25 + 1e-12:
        raise CFLError(
            f"unstable configuration: advective number {courant:.3f} (limit 0.5), "
            f"diffusion number {diff:.3f} (limit 0.25); increase substeps"
        )


class Simulator:
    """Steps one scenario forward in time."""

    def __init__(self, config: SimConfig, seed: int = 0):
        self.config = config
        self.u, self.v = face_velocities(config, seed)
        check_cfl(config, self.u, self.v)
        self.rows = np.array([s.row for s in config.sources], dtype=np.int64)
        self.cols = np.array([s.col for s in config.sources], dtype=np.int64)

    def source_rates(self, t0: float, n: int) -> np.ndarray:
        """Source rates at the start of each of ``n`` substeps beginning at ``t0``."""
        dts = self.config.dt_sub
        return np.array(
            [[s.rate(t0 + i * dts) for s in self.config.sources] for i in range(n)],
            dtype=np.float64,
        ).reshape(n, len(self.config.sources))

    def advance(self, state: SimState, n_substeps: int) -> SimState:
        cfg = self.config
        c = _kernels.advance(
            np.ascontiguousarray(state.concentration, dtype=np.float64),
            self.u,
            self.v,
            self.source_rates(state.time, n_substeps),
            self.rows,
            self.cols,
            cfg.dt_sub / cfg.dx,
            cfg.D * cfg.dt_sub / cfg.dx**2,
            math.exp(-cfg.decay * cfg.dt_sub),
            cfg.dt_sub,
            cfg.boundary == "periodic",
        )
        return SimState(c, state.time + n_substeps * cfg.dt_sub)

    def initial_state(self) -> SimState:
        return SimState(np.full((self.config.H, self.config.W), self.config.background), 0.0)


def step(state: SimState, config: SimConfig, seed: int = 0) -> SimState:
    """Advance by a single substep."""
    return Simulator(config, seed).advance(state, 1)


def run_frames(config: SimConfig, hours: int, seed: int = 0, state: SimState | None = None) -> np.ndarray:
    """Float64 frames, one per ``dt`` after spin-up: shape (hours, H, W)."""
    sim = Simulator(config, seed)
    state = state or sim.initial_state()
    spin = int(round(config.spinup_hours / config.dt_sub))
    if spin:
        state = sim.advance(state, spin)
    frames = np.empty((hours, config.H, config.W))
    for t in range(hours):
        frames[t] = state.concentration
        state = sim.advance(state, config.substeps)
    return frames


def generate(config: SimConfig, hours: int, seed: int = 0, start: int = EPOCH0) -> GridSeries:
    """Simulate ``hours`` hourly frames and wrap them as a grid series."""
    if hours < 26:
        raise ValueError("need at least 26 hours to form one training window")
    frames = run_frames(config, hours, seed)
    stamps = start + np.arange(hours, dtype=np.int64) * int(round(3600 * config.dt))
    return GridSeries(stamps, frames.astype(np.float32))


@dataclass
class RefinementReport:
    discrepancy: float
    ratio: float | None
    passed: bool


def _max_rel(a: np.ndarray, b: np.ndarray) -> float:
    diff = np.abs(a - b).max()
    if diff == 0.0:
        return 0.0
    return float(diff / np.abs(b).max())


def refine_check(config: SimConfig, hours: int = 24, seed: int = 0, tol: float = 0.05) -> RefinementReport:
    """Compare the final frame at ``dt_sub`` and ``dt_sub / 2`` (and ``/ 4``).

    ``ratio`` is the successive-difference ratio, about 2 for a first-order
    time discretization.
    """
    finals = [run_frames(config.refined(f), hours, seed)[-1] for f in (1, 2, 4)]
    d1 = _max_rel(finals[0], finals[1])
    d2 = _max_rel(finals[1], finals[2])
    ratio = d1 / d2 if d2 > 0 else None
    return RefinementReport(d1, ratio, d1 < tol)
