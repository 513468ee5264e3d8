"""Euler integration on a jump-adapted grid.

The integration grid is the union of the uniform grid with the path's exact
jump times. Stored per-step Wiener increments are split at interior jump
times by exact conditional sampling: given the step total D over length L,
the increment over the first sub-length l is Gaussian with mean D*l/L and
variance l*(L-l)/L per component, and the remainder is assigned by direct
subtraction so the sub-increments telescope back to D up to at most one
final rounding per split (they are usually bit-identical). The extra
normals are drawn by replaying the path's Wiener stream past its increment
block, so the construction is a pure function of the noise bundle.

Between nodes the state advances by the explicit Euler map with the mean
jump compensator applied continuously as negative drift; at a jump node the
jump map is applied to the pre-jump state.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .model import CoefficientSet
from .noise import (JumpMeasureSpec, JumpStream, NoisePath, WienerIncrements,
                    sample_noise)


class NonFiniteStateError(RuntimeError):
    """State left the finite range under the error overflow policy."""

    def __init__(self, step_index: int, time: float, path_id: Optional[int] = None):
        self.step_index = step_index
        self.time = time
        self.path_id = path_id
        where = f" on path {path_id}" if path_id is not None else ""
        super().__init__(
            f"non-finite state at step {step_index} (t={time:.6g}){where}")


@dataclass(frozen=True)
class SolveConfig:
    """n_steps is the base uniform resolution used by harnesses that build
    grids; solve_path itself integrates on the grid its noise was sampled
    on and consumes only the overflow policy."""

    n_steps: int = 1000
    overflow_policy: str = "error"
    clamp_magnitude: float = 1e9

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.overflow_policy not in ("error", "clamp"):
            raise ValueError(f"unknown overflow policy {self.overflow_policy!r}")
        if not (math.isfinite(self.clamp_magnitude) and self.clamp_magnitude > 0):
            raise ValueError("clamp_magnitude must be positive and finite")


@dataclass(frozen=True)
class Trajectory:
    """Discrete path on the jump-adapted grid.

    states[i] is the value after any jump at times[i]; pre_jump_states[i] is
    the left limit. The two coincide at non-jump nodes.
    """

    times: np.ndarray
    states: np.ndarray
    pre_jump_states: np.ndarray
    is_jump: np.ndarray
    clamped: bool = False

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def dim_state(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class UnionNoise:
    """Noise re-expressed on the union grid: per-sub-interval increments plus
    the marks to apply at each node."""

    times: np.ndarray
    increments: np.ndarray
    marks_at: tuple
    is_jump: np.ndarray


def _as_noise_pair(noise) -> tuple[WienerIncrements, JumpStream]:
    if isinstance(noise, NoisePath):
        return noise.wiener, noise.jumps
    wiener, jumps = noise
    return wiener, jumps


def prepare_union(wiener: WienerIncrements, jumps: JumpStream) -> UnionNoise:
    """Merge grid and jump times and split the stored increments exactly."""
    grid = wiener.grid
    if grid.n_steps == 0:
        raise ValueError("cannot integrate on a degenerate empty grid")
    if not math.isclose(grid.horizon, jumps.horizon, rel_tol=1e-12):
        raise ValueError("wiener grid and jump stream cover different horizons")
    pts = grid.points
    k = wiener.dim
    jt = jumps.times
    if jt.size == 0:
        m = pts.shape[0]
        return UnionNoise(pts, wiener.increments, (None,) * m,
                          np.zeros(m, dtype=bool))

    times = np.unique(np.concatenate([pts, jt]))
    m = times.shape[0]
    marks_at: list = [None] * m
    for t, mark in zip(jt, jumps.marks):
        node = int(np.searchsorted(times, t))
        if marks_at[node] is None:
            marks_at[node] = []
        marks_at[node].append(mark)
    is_jump = np.array([mk is not None for mk in marks_at])

    interior_any = bool(np.any(~np.isin(jt, pts)))
    increments = np.empty((m - 1, k))
    if not interior_any:
        # every jump sits on a grid node, nothing to split
        increments[:] = wiener.increments
        return UnionNoise(times, increments, tuple(marks_at), is_jump)

    gen = wiener.stream.generator() if wiener.stream is not None else None
    if gen is None:
        raise ValueError("derived increments carry no stream and cannot be split")
    gen.standard_normal((grid.n_steps, k))  # skip the block sample_wiener drew

    node = 0
    for i in range(grid.n_steps):
        u, w = pts[i], pts[i + 1]
        # nodes strictly inside (u, w)
        stop = node
        while times[stop + 1] < w:
            stop += 1
        total = wiener.increments[i]
        if stop == node:
            increments[node] = total
        else:
            rem = total.copy()
            left = u
            for j in range(node, stop):
                s = times[j + 1]
                l_rem = w - left
                l = s - left
                z = gen.standard_normal(k)
                sub = rem * (l / l_rem) + z * math.sqrt(l * (l_rem - l) / l_rem)
                increments[j] = sub
                rem = rem - sub
                left = s
            increments[stop] = rem
        node = stop + 1
    return UnionNoise(times, increments, tuple(marks_at), is_jump)


def _clamp(x: np.ndarray, magnitude: float) -> np.ndarray:
    x = np.nan_to_num(x, nan=0.0, posinf=magnitude, neginf=-magnitude)
    norm = float(np.linalg.norm(x))
    if norm > magnitude:
        x = x * (magnitude / norm)
    return x


def integrate_on_union(cs: CoefficientSet, x0: np.ndarray, union: UnionNoise,
                       config: SolveConfig) -> tuple[np.ndarray, np.ndarray, bool]:
    """Euler sweep over the union grid. Returns (states, pre_jump_states,
    clamped); both state arrays have one row per node."""
    times = union.times.tolist()
    dw = union.increments
    marks_at = union.marks_at
    n_nodes = len(times)
    d = cs.dim_state
    states = np.empty((n_nodes, d))
    pre = np.empty((n_nodes, d))
    x = np.asarray(x0, dtype=float).reshape(-1)
    states[0] = pre[0] = x
    drift, diffusion = cs.drift, cs.diffusion
    jump_coeff, comp = cs.jump_coeff, cs.compensator_mean
    clamp_mode = config.overflow_policy == "clamp"
    clamped = False
    if d == 1 and cs.dim_wiener == 1 and n_nodes > 1:
        # probe once; coefficients are pure, so the extra call is free of
        # side effects. Only conforming shapes take the scalar loop.
        t0 = times[0]
        if (np.shape(drift(t0, x)) == (1,) and np.shape(comp(t0, x)) == (1,)
                and np.shape(diffusion(t0, x)) == (1, 1)):
            return _integrate_scalar(cs, x, union, config, states, pre)
    for i in range(n_nodes - 1):
        t = times[i]
        dt = times[i + 1] - t
        x = x + (drift(t, x) - comp(t, x)) * dt + diffusion(t, x) @ dw[i]
        if not np.isfinite(x).all():
            if clamp_mode:
                x = _clamp(x, config.clamp_magnitude)
                clamped = True
            else:
                raise NonFiniteStateError(i, t)
        pre[i + 1] = x
        mks = marks_at[i + 1]
        if mks is not None:
            tv = times[i + 1]
            for theta in mks:
                x = x + jump_coeff(tv, x, theta)
            if not np.isfinite(x).all():
                if clamp_mode:
                    x = _clamp(x, config.clamp_magnitude)
                    clamped = True
                else:
                    raise NonFiniteStateError(i + 1, tv)
        states[i + 1] = x
    return states, pre, clamped


def _integrate_scalar(cs: CoefficientSet, x: np.ndarray, union: UnionNoise,
                      config: SolveConfig, states: np.ndarray,
                      pre: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    """d = k = 1 sweep on Python floats. Bit-identical to the array loop:
    a 1x1 matmul is the plain product, and the update keeps the same
    left-to-right operation order, so every stored node matches."""
    times = union.times.tolist()
    dwl = union.increments[:, 0].tolist()
    marks_at = union.marks_at
    drift, diffusion = cs.drift, cs.diffusion
    jump_coeff, comp = cs.jump_coeff, cs.compensator_mean
    clamp_mode = config.overflow_policy == "clamp"
    clamped = False
    xf = float(x[0])
    xarr = x.copy()  # scratch buffer handed to the coefficient callables
    for i in range(len(times) - 1):
        t = times[i]
        dt = times[i + 1] - t
        xarr[0] = xf
        xf = (xf + (drift(t, xarr)[0] - comp(t, xarr)[0]) * dt
              + diffusion(t, xarr)[0, 0] * dwl[i])
        if not math.isfinite(xf):
            if clamp_mode:
                xarr[0] = xf
                xf = float(_clamp(xarr, config.clamp_magnitude)[0])
                clamped = True
            else:
                raise NonFiniteStateError(i, t)
        pre[i + 1] = xf
        mks = marks_at[i + 1]
        if mks is not None:
            tv = times[i + 1]
            for theta in mks:
                xarr[0] = xf
                xf = xf + float(np.ravel(jump_coeff(tv, xarr, theta))[0])
            if not math.isfinite(xf):
                if clamp_mode:
                    xarr[0] = xf
                    xf = float(_clamp(xarr, config.clamp_magnitude)[0])
                    clamped = True
                else:
                    raise NonFiniteStateError(i + 1, tv)
        states[i + 1] = xf
    return states, pre, clamped


def solve_path(cs: CoefficientSet, x0, noise: Union[NoisePath, tuple],
               config: Optional[SolveConfig] = None) -> Trajectory:
    """Integrate one equation over one noise bundle.

    Pure function of its arguments; safe to call concurrently for different
    paths or for coupled equations sharing the same bundle.
    """
    config = config or SolveConfig()
    wiener, jumps = _as_noise_pair(noise)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (cs.dim_state,):
        raise ValueError(f"x0 must have length {cs.dim_state}, got {x0.shape}")
    if not np.isfinite(x0).all():
        raise ValueError("x0 must be finite")
    if wiener.dim != cs.dim_wiener:
        raise ValueError(f"noise has {wiener.dim} wiener components, coefficients expect "
                         f"{cs.dim_wiener}")
    union = prepare_union(wiener, jumps)
    states, pre, clamped = integrate_on_union(cs, x0, union, config)
    return Trajectory(union.times if isinstance(union.times, np.ndarray) else np.asarray(union.times),
                      states, pre, union.is_jump, clamped)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Column order: time, x_1..x_d, is_jump."""
    d = traj.dim_state
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time"] + [f"x_{j + 1}" for j in range(d)] + ["is_jump"])
        for t, row, flag in zip(traj.times, traj.states, traj.is_jump):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row] + [int(flag)])


def check_moment_bound(cs: CoefficientSet, x0, grid, paths: int, master_seed: int, *,
                       jump_spec: Optional[JumpMeasureSpec] = None,
                       config: Optional[SolveConfig] = None) -> float:
    """Monte Carlo value of E[sup_t |X(t)|^2] / (1 + |x0|^2) over the grid."""
    if paths < 1:
        raise ValueError("paths must be >= 1")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    denom = 1.0 + float(x0 @ x0)
    total = 0.0
    for pid in range(paths):
        noise = sample_noise(grid, jump_spec, master_seed, pid, cs.dim_wiener)
        try:
            traj = solve_path(cs, x0, noise, config)
        except NonFiniteStateError as e:
            e.path_id = pid
            raise
        total += float(np.max(np.sum(np.square(traj.states), axis=1)))
    return total / paths / denom


def check_continuity_bound(cs: CoefficientSet, x0, grid, paths: int,
                           pairs, master_seed: int, *,
                           jump_spec: Optional[JumpMeasureSpec] = None,
                           config: Optional[SolveConfig] = None) -> float:
    """Max over (s, t) pairs of E[|X(t) - X(s)|^2] / ((1 + |x0|^2) |t - s|).
    Times are snapped to the nearest grid node."""
    if paths < 100:
        raise ValueError("continuity check needs at least 100 paths")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    pts = grid.points
    idx_pairs = []
    for s, t in pairs:
        i = int(np.argmin(np.abs(pts - s)))
        j = int(np.argmin(np.abs(pts - t)))
        if i == j:
            raise ValueError(f"pair ({s}, {t}) snaps to one grid node")
        idx_pairs.append((i, j))
    acc = np.zeros(len(idx_pairs))
    for pid in range(paths):
        noise = sample_noise(grid, jump_spec, master_seed, pid, cs.dim_wiener)
        try:
            traj = solve_path(cs, x0, noise, config)
        except NonFiniteStateError as e:
            e.path_id = pid
            raise
        # jump nodes shift indices, so locate the grid nodes in the union grid
        locs = np.searchsorted(traj.times, pts)
        for q, (i, j) in enumerate(idx_pairs):
            diff = traj.states[locs[j]] - traj.states[locs[i]]
            acc[q] += float(diff @ diff)
    denom = 1.0 + float(x0 @ x0)
    best = 0.0
    for q, (i, j) in enumerate(idx_pairs):
        val = acc[q] / paths / (denom * abs(float(pts[j] - pts[i])))
        best = max(best, val)
    return best
