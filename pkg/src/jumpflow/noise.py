"""Driving noise for jump-diffusion simulation.

Streams are counter-based: a Philox generator keyed directly by the packed
(master_seed, path_id, role) triple. The mapping is stateless and injective,
so adding paths or roles never perturbs draws made anywhere else, and any
stream can be replayed from scratch at any time.

A path's full noise bundle (`NoisePath`) is one Wiener increment matrix plus
one realized jump stream. Every coupled equation integrated on that path
consumes the same bundle.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, NamedTuple, Optional

import numpy as np

_MASK64 = (1 << 64) - 1
_MAX_PATH_ID = 1 << 62
# Disjoint counter block of the jump-marks stream used for the Gaussian
# small-jump substitute, far past anything a mark sampler will consume.
_SMALL_JUMP_COUNTER_OFFSET = 1 << 96


class StreamRole(enum.IntEnum):
    """What a stream is consumed for. One stream per role per path."""

    WIENER = 0
    JUMP_TIMES = 1
    JUMP_MARKS = 2


@dataclass(frozen=True)
class RngStream:
    """Identity of one random stream: (master_seed, path_id, role)."""

    master_seed: int
    path_id: int
    role: StreamRole

    def __post_init__(self):
        if not (0 <= int(self.path_id) < _MAX_PATH_ID):
            raise ValueError(f"path_id must lie in [0, 2^62), got {self.path_id}")
        object.__setattr__(self, "role", StreamRole(self.role))

    def key(self) -> int:
        # Injective packing: 64 seed bits | 62 path bits | 2 role bits.
        return ((int(self.master_seed) & _MASK64) << 64) | (int(self.path_id) << 2) | int(self.role)

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        return np.random.Generator(np.random.Philox(key=self.key()))


def make_stream(master_seed: int, path_id: int, role: StreamRole) -> RngStream:
    """Stateless (seed, path, role) -> stream mapping."""
    return RngStream(master_seed, path_id, role)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_n = horizon.

    n_steps == 0 is permitted as a degenerate empty grid (single point 0,
    no increments); it exists for edge cases only and cannot be integrated.
    """

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be finite and positive, got {self.horizon}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 0:
            raise ValueError(f"n_steps must be a nonnegative integer, got {self.n_steps}")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def step(self) -> float:
        if self.n_steps == 0:
            raise ValueError("degenerate grid has no step")
        return self.horizon / self.n_steps

    @cached_property
    def points(self) -> np.ndarray:
        if self.n_steps == 0:
            return np.zeros(1)
        return np.linspace(0.0, self.horizon, self.n_steps + 1)


@dataclass(frozen=True)
class WienerIncrements:
    """Per-step Wiener increments on a uniform grid, one column per component.

    `stream` records provenance so the solver can replay the stream and draw
    the conditional sub-increments needed at jump times. Derived increment
    sets (e.g. coarsened ones) carry stream=None and cannot be split.
    """

    grid: TimeGrid
    increments: np.ndarray
    stream: Optional[RngStream]

    @property
    def dim(self) -> int:
        return self.increments.shape[1]


def sample_wiener(grid: TimeGrid, stream: RngStream, dim_wiener: int = 1) -> WienerIncrements:
    """Draw the (n_steps x k) increment matrix for one path."""
    if stream.role is not StreamRole.WIENER:
        raise ValueError(f"wiener sampling needs a WIENER-role stream, got {stream.role.name}")
    if dim_wiener < 1:
        raise ValueError("dim_wiener must be >= 1")
    g = stream.generator()
    raw = g.standard_normal((grid.n_steps, dim_wiener))
    if grid.n_steps == 0:
        return WienerIncrements(grid, raw, stream)
    scale = np.sqrt(np.diff(grid.points))[:, None]
    return WienerIncrements(grid, raw * scale, stream)


def coarsen_wiener(w: WienerIncrements, factor: int) -> WienerIncrements:
    """Aggregate consecutive increments, giving the same path on a grid
    `factor` times coarser. The result is derived data: it keeps no stream
    and cannot be split at jump times."""
    if factor < 1 or w.grid.n_steps % factor != 0:
        raise ValueError(f"factor {factor} must divide n_steps {w.grid.n_steps}")
    n_coarse = w.grid.n_steps // factor
    agg = w.increments.reshape(n_coarse, factor, w.dim).sum(axis=1)
    return WienerIncrements(TimeGrid(w.grid.horizon, n_coarse), agg, None)


class SmallJumpPolicy(enum.Enum):
    """What to do with the discarded small jumps of a truncated measure."""

    DROP = "drop"
    GAUSSIAN = "gaussian_moment_match"


MarkSampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class JumpMeasureSpec:
    """Jump measure declaration: total sampled intensity plus a mark law.

    Two kinds. "finite_activity" samples the whole measure. For
    "truncated_infinite" only the outer part (marks beyond the truncation
    level) is sampled as point events; the small-jump remainder is either
    dropped or replaced by a centered Gaussian with the user-supplied
    covariance (per unit time).
    """

    dim_mark: int
    total_mass: float
    mark_sampler: Optional[MarkSampler]
    kind: str = "finite_activity"
    truncation_level: Optional[float] = None
    small_jump_policy: Optional[SmallJumpPolicy] = None
    small_jump_cov: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.dim_mark < 1:
            raise ValueError("dim_mark must be >= 1")
        if not (math.isfinite(self.total_mass) and self.total_mass >= 0):
            raise ValueError(f"total mass must be finite and nonnegative, got {self.total_mass}")
        if self.mark_sampler is not None and self.total_mass <= 0:
            raise ValueError("a mark sampler with nonpositive total mass is inconsistent")
        if self.total_mass > 0 and self.mark_sampler is None:
            raise ValueError("positive total mass needs a mark sampler")
        if self.kind == "finite_activity":
            if self.truncation_level is not None or self.small_jump_policy is not None:
                raise ValueError("truncation fields only apply to the truncated_infinite kind")
        elif self.kind == "truncated_infinite":
            if self.truncation_level is None or not (
                math.isfinite(self.truncation_level) and self.truncation_level > 0
            ):
                raise ValueError("truncated_infinite needs a positive finite truncation_level")
            policy = self.small_jump_policy
            if policy is None:
                raise ValueError("truncated_infinite needs a small_jump_policy")
            object.__setattr__(self, "small_jump_policy", SmallJumpPolicy(policy))
            if self.small_jump_policy is SmallJumpPolicy.GAUSSIAN:
                cov = np.asarray(self.small_jump_cov, dtype=float)
                m = self.dim_mark
                if cov.shape != (m, m) or not np.isfinite(cov).all():
                    raise ValueError(f"small_jump_cov must be a finite ({m}, {m}) matrix")
                if not np.allclose(cov, cov.T):
                    raise ValueError("small_jump_cov must be symmetric")
                object.__setattr__(self, "small_jump_cov", cov)
        else:
            raise ValueError(f"unknown jump measure kind {self.kind!r}")

    @classmethod
    def finite_activity(cls, total_mass: float, mark_sampler: Optional[MarkSampler],
                        dim_mark: int = 1) -> "JumpMeasureSpec":
        return cls(dim_mark=dim_mark, total_mass=total_mass, mark_sampler=mark_sampler)

    @classmethod
    def truncated_infinite(cls, truncation_level: float, outer_mass: float,
                           outer_sampler: Optional[MarkSampler],
                           small_jump_policy: SmallJumpPolicy | str,
                           small_jump_cov: Optional[np.ndarray] = None,
                           dim_mark: int = 1) -> "JumpMeasureSpec":
        return cls(dim_mark=dim_mark, total_mass=outer_mass, mark_sampler=outer_sampler,
                   kind="truncated_infinite", truncation_level=truncation_level,
                   small_jump_policy=small_jump_policy, small_jump_cov=small_jump_cov)


class JumpEvent(NamedTuple):
    time: float
    mark: np.ndarray
    synthetic: bool = False


@dataclass(frozen=True)
class JumpStream:
    """Realized jump events of one path, time-sorted, times in (0, horizon].

    Rows flagged synthetic are Gaussian small-jump substitutes attached at
    grid nodes, not point events of the measure; they are already centered
    and receive no compensation.
    """

    horizon: float
    times: np.ndarray
    marks: np.ndarray
    synthetic: np.ndarray

    @property
    def count(self) -> int:
        return self.times.shape[0]

    @property
    def dim_mark(self) -> int:
        return self.marks.shape[1]

    @property
    def events(self) -> tuple[JumpEvent, ...]:
        return tuple(
            JumpEvent(float(t), m, bool(s))
            for t, m, s in zip(self.times, self.marks, self.synthetic)
        )

    @staticmethod
    def empty(horizon: float, dim_mark: int = 1) -> "JumpStream":
        return JumpStream(horizon, np.zeros(0), np.zeros((0, dim_mark)),
                          np.zeros(0, dtype=bool))


def _draw_marks(spec: JumpMeasureSpec, g: np.random.Generator, count: int) -> np.ndarray:
    marks = np.asarray(spec.mark_sampler(g, count), dtype=float)
    if marks.shape != (count, spec.dim_mark):
        raise ValueError(
            f"mark sampler returned shape {marks.shape}, expected {(count, spec.dim_mark)}")
    # The measure has no atom at zero; a sampler handing back a zero vector
    # is a bug on its side. Resample the offending rows, bounded.
    for _ in range(64):
        bad = ~np.any(marks != 0.0, axis=1)
        if not bad.any():
            return marks
        marks[bad] = np.asarray(spec.mark_sampler(g, int(bad.sum())), dtype=float)
    raise ValueError("mark sampler keeps returning zero vectors")


def sample_jumps(spec: Optional[JumpMeasureSpec], horizon: float,
                 streams: tuple[RngStream, RngStream]) -> JumpStream:
    """Realize the (outer) jump events over (0, horizon].

    Count is Poisson(total_mass * horizon); given the count, event times are
    sorted uniforms and marks are iid draws from the mark law. For the
    truncated_infinite kind the events represent only the outer part.
    """
    if not (math.isfinite(horizon) and horizon > 0):
        raise ValueError(f"horizon must be finite and positive, got {horizon}")
    dim = spec.dim_mark if spec is not None else 1
    if spec is None or spec.total_mass == 0.0:
        return JumpStream.empty(horizon, dim)
    t_stream, m_stream = streams
    if t_stream.role is not StreamRole.JUMP_TIMES or m_stream.role is not StreamRole.JUMP_MARKS:
        raise ValueError("sample_jumps needs (JUMP_TIMES, JUMP_MARKS) role streams")
    g_t = t_stream.generator()
    count = int(g_t.poisson(spec.total_mass * horizon))
    times = np.sort(g_t.uniform(0.0, horizon, count))
    while count and times[0] == 0.0:  # events live on (0, horizon]
        times[times == 0.0] = g_t.uniform(0.0, horizon, int((times == 0.0).sum()))
        times = np.sort(times)
    if count == 0:
        return JumpStream.empty(horizon, dim)
    marks = _draw_marks(spec, m_stream.generator(), count)
    return JumpStream(horizon, times, marks, np.zeros(count, dtype=bool))


@dataclass(frozen=True)
class NoisePath:
    """Everything random about one path: Wiener increments plus jump stream."""

    wiener: WienerIncrements
    jumps: JumpStream


def _small_jump_events(spec: JumpMeasureSpec, grid: TimeGrid,
                       marks_stream: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Centered Gaussian substitutes for the dropped small jumps, one per
    uniform step, drawn from a disjoint counter block of the marks stream."""
    cov = spec.small_jump_cov
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        if np.allclose(cov, 0.0):
            return np.zeros(0), np.zeros((0, spec.dim_mark))
        raise ValueError("small_jump_cov must be positive (semi)definite") from None
    bg = np.random.Philox(key=marks_stream.key())
    bg.advance(_SMALL_JUMP_COUNTER_OFFSET)
    g = np.random.Generator(bg)
    z = g.standard_normal((grid.n_steps, spec.dim_mark))
    scale = np.sqrt(np.diff(grid.points))[:, None]
    return np.asarray(grid.points[1:]), (z @ chol.T) * scale


def sample_noise(grid: TimeGrid, spec: Optional[JumpMeasureSpec], master_seed: int,
                 path_id: int, dim_wiener: int = 1) -> NoisePath:
    """Assemble the full noise bundle of one path.

    Pure function of (master_seed, path_id, grid, spec): every draw comes
    from the three fixed-role streams of this path in a fixed order.
    """
    wiener = sample_wiener(grid, make_stream(master_seed, path_id, StreamRole.WIENER),
                           dim_wiener)
    marks_stream = make_stream(master_seed, path_id, StreamRole.JUMP_MARKS)
    jumps = sample_jumps(spec, grid.horizon,
                         (make_stream(master_seed, path_id, StreamRole.JUMP_TIMES),
                          marks_stream))
    if (spec is not None and spec.kind == "truncated_infinite"
            and spec.small_jump_policy is SmallJumpPolicy.GAUSSIAN and grid.n_steps > 0):
        s_times, s_marks = _small_jump_events(spec, grid, marks_stream)
        if s_times.size:
            times = np.concatenate([jumps.times, s_times])
            marks = np.concatenate([jumps.marks, s_marks])
            synth = np.concatenate([jumps.synthetic, np.ones(s_times.size, dtype=bool)])
            order = np.argsort(times, kind="stable")
            jumps = JumpStream(grid.horizon, times[order], marks[order], synth[order])
    return NoisePath(wiener, jumps)
