"""First passage of a discrete trajectory through a barrier functional.

A barrier is a scalar functional phi(t, x); the hit region is {phi >= 0}.
The first hit of a trajectory scans nodes in order, testing the pre-jump
state first and the post-jump state second at jump nodes, so a crossing
caused by a jump is attributed to the jump. Between nodes, an optional
linear refinement places the crossing where the chord of phi changes sign.

No hit is reported as time +inf, never as a magic number. Gaps between two
hitting times follow the convention: both infinite is gap 0, exactly one
infinite is gap +inf.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .solver import Trajectory

CONTINUOUS_CROSSING = "continuous_crossing"
JUMP_CROSSING = "jump_crossing"
INITIAL = "initial"
HORIZON_FORCED = "horizon_forced"


@dataclass(frozen=True)
class BarrierFunction:
    """Scalar functional with hit region {phi >= 0}.

    horizon: if finite, the functional is forced nonnegative at t >= horizon
    (built by finite_horizon_wrap); base then holds the unwrapped functional
    so diagnostics can see through the truncation.

    time_vectorized: the implementation accepts a time array of length n
    with a state array of shape (n, d) and evaluates elementwise; scans can
    then precompute all node values in two calls.
    """

    phi: Callable[[float, np.ndarray], float]
    gradient: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    horizon: float = math.inf
    base: Optional["BarrierFunction"] = None
    time_vectorized: bool = False

    def __call__(self, t: float, x) -> float:
        return float(self.phi(t, x))


def finite_horizon_wrap(barrier: BarrierFunction, horizon: float) -> BarrierFunction:
    """Barrier that additionally fires at t >= horizon, so its first hit is
    min(first hit of barrier, horizon)."""
    if not (math.isfinite(horizon) and horizon > 0):
        raise ValueError("horizon must be positive and finite")
    inner = barrier.phi

    # shape-transparent: batch callers push a leading path axis through phi
    def phi(t: float, x):
        v = inner(t, x)
        if t >= horizon:
            return np.maximum(v, 0.0)
        return v

    return BarrierFunction(phi=phi, gradient=barrier.gradient,
                           horizon=horizon, base=barrier,
                           time_vectorized=barrier.time_vectorized)


@dataclass(frozen=True)
class HittingTime:
    """time is +inf when the trajectory never enters the hit region."""

    time: float
    state: Optional[np.ndarray]
    crossing_kind: Optional[str]
    node_index: Optional[int] = None
    refined: bool = False

    @property
    def hit(self) -> bool:
        return math.isfinite(self.time)


def _no_hit() -> HittingTime:
    return HittingTime(time=math.inf, state=None, crossing_kind=None)


def first_hit(traj: Trajectory, barrier: BarrierFunction, *,
              refine: bool = True) -> HittingTime:
    """Scan in time order. At a jump node the pre-jump state is tested before
    the post-jump one. At the wrap horizon of a truncated barrier the
    refinement interpolates the underlying functional, so truncation commutes
    with min exactly."""
    if barrier.time_vectorized:
        return _first_hit_precomputed(traj, barrier, refine)
    times = traj.times
    states = traj.states
    pre = traj.pre_jump_states
    is_jump = traj.is_jump
    n = times.shape[0]

    t0 = float(times[0])
    if barrier(t0, states[0]) >= 0.0:
        return HittingTime(time=t0, state=states[0].copy(),
                           crossing_kind=INITIAL, node_index=0)

    phi_prev = barrier(t0, states[0])
    for i in range(1, n):
        t = float(times[i])
        at_horizon = t >= barrier.horizon
        phi_pre = barrier(t, pre[i])
        if phi_pre >= 0.0:
            hit_t, refined = t, False
            kind = HORIZON_FORCED if at_horizon else CONTINUOUS_CROSSING
            if at_horizon and barrier.base is not None:
                # below the truncation the underlying functional decides
                if barrier.base(t, pre[i]) >= 0.0:
                    kind = CONTINUOUS_CROSSING
            if refine and kind == CONTINUOUS_CROSSING:
                # interpolate the unwrapped functional at the horizon node
                shadow = barrier.base if (at_horizon and barrier.base is not None) else barrier
                lo = phi_prev
                hi = float(shadow(t, pre[i])) if at_horizon else phi_pre
                if hi > 0.0 and lo < 0.0:
                    frac = (-lo) / (hi - lo)
                    t_prev = float(times[i - 1])
                    hit_t = t_prev + (t - t_prev) * frac
                    refined = True
            return HittingTime(time=hit_t, state=pre[i].copy(), crossing_kind=kind,
                               node_index=i, refined=refined)
        if is_jump[i]:
            phi_post = barrier(t, states[i])
            if phi_post >= 0.0:
                return HittingTime(time=t, state=states[i].copy(),
                                   crossing_kind=JUMP_CROSSING, node_index=i)
            phi_prev = phi_post
        else:
            phi_prev = phi_pre
    return _no_hit()


def _first_hit_precomputed(traj: Trajectory, barrier: BarrierFunction,
                           refine: bool) -> HittingTime:
    """Same decision sequence as the scalar scan, but all functional values
    come from two vectorized evaluations. Valid only for time_vectorized
    barriers; elementwise arithmetic matches the scalar calls bit for bit."""
    times = traj.times
    states = traj.states
    pre = traj.pre_jump_states
    is_jump = traj.is_jump
    n = times.shape[0]
    target = barrier.base if barrier.base is not None else barrier

    raw_pre = np.asarray(target.phi(times, pre), dtype=float).reshape(n)
    if is_jump.any():
        raw_post = np.asarray(target.phi(times, states), dtype=float).reshape(n)
    else:
        raw_post = raw_pre
    if barrier.base is not None:
        forced = times >= barrier.horizon
        phi_pre = np.where(forced, np.maximum(raw_pre, 0.0), raw_pre)
        phi_post = np.where(forced, np.maximum(raw_post, 0.0), raw_post)
    else:
        phi_pre = raw_pre
        phi_post = raw_post

    hit_nodes = (phi_pre >= 0.0) | (is_jump & (phi_post >= 0.0))
    hit_nodes[0] = phi_post[0] >= 0.0  # node 0 tests the (post-)initial state
    if not hit_nodes.any():
        return _no_hit()
    i = int(np.argmax(hit_nodes))
    if i == 0:
        return HittingTime(time=float(times[0]), state=states[0].copy(),
                           crossing_kind=INITIAL, node_index=0)
    t = float(times[i])
    at_horizon = t >= barrier.horizon
    if phi_pre[i] >= 0.0:
        hit_t, refined = t, False
        kind = HORIZON_FORCED if at_horizon else CONTINUOUS_CROSSING
        if at_horizon and barrier.base is not None and raw_pre[i] >= 0.0:
            kind = CONTINUOUS_CROSSING
        if refine and kind == CONTINUOUS_CROSSING:
            lo = float(phi_post[i - 1])
            hi = float(raw_pre[i]) if at_horizon else float(phi_pre[i])
            if hi > 0.0 and lo < 0.0:
                frac = (-lo) / (hi - lo)
                t_prev = float(times[i - 1])
                hit_t = t_prev + (t - t_prev) * frac
                refined = True
        return HittingTime(time=hit_t, state=pre[i].copy(), crossing_kind=kind,
                           node_index=i, refined=refined)
    return HittingTime(time=t, state=states[i].copy(),
                       crossing_kind=JUMP_CROSSING, node_index=i)


def hit_gap(a: HittingTime, b: HittingTime) -> float:
    if a.hit and b.hit:
        return abs(a.time - b.time)
    if a.hit or b.hit:
        return math.inf
    return 0.0


def capped_gap(a: HittingTime, b: HittingTime, cap: float) -> float:
    """Gap of the horizon-capped times; finite even when one side never hits."""
    return abs(min(a.time, cap) - min(b.time, cap))


def numeric_gradient(barrier: BarrierFunction, t: float, x,
                     rel_step: float = 1e-6) -> np.ndarray:
    """Central differences in x with a relative step."""
    x = np.asarray(x, dtype=float).reshape(-1)
    g = np.empty_like(x)
    for j in range(x.shape[0]):
        hj = rel_step * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += hj
        xm[j] -= hj
        g[j] = (barrier(t, xp) - barrier(t, xm)) / (2.0 * hj)
    return g


def check_nondegeneracy_G3(barrier: BarrierFunction, horizon: float,
                           samples: int, stream, *, radius: float = 5.0,
                           floor: float = 1e-8):
    """G3: the gradient of the functional is bounded away from zero on the
    surface {phi = 0} (sampled near it). Evaluates the unwrapped functional
    on t in [0, horizon) because every truncated barrier is flat in x at the
    forced horizon."""
    from .model import ValidationReport, _report_seed

    target = barrier.base if barrier.base is not None else barrier
    grad = target.gradient or (lambda t, x: numeric_gradient(target, t, x))
    gen = stream.generator()
    worst = math.inf
    witness = None
    tried = 0
    found = 0
    # rejection walk: sample points, newton-project each toward the surface
    while tried < samples * 8 and found < samples:
        tried += 1
        t = float(gen.uniform(0.0, horizon))
        x = gen.uniform(-radius, radius, size=_dim_hint(target, radius))
        for _ in range(12):
            v = target(t, x)
            g = np.asarray(grad(t, x), dtype=float).reshape(-1)
            gg = float(g @ g)
            if gg < 1e-20:
                break
            x = x - g * (v / gg)
            if abs(target(t, x)) < 1e-10:
                break
        if abs(target(t, x)) > 1e-6 * max(1.0, radius):
            continue
        found += 1
        g = np.asarray(grad(t, x), dtype=float).reshape(-1)
        norm = float(np.linalg.norm(g))
        if norm < worst:
            worst = norm
            witness = (t, x.copy())
    seed = _report_seed(stream)
    if found == 0:
        return ValidationReport(assumption="G3", passed=True, constant=math.inf,
                                witness=None, samples=0, seed=seed,
                                note="no surface points found; functional never vanishes in the box")
    return ValidationReport(assumption="G3", passed=worst > floor, constant=worst,
                            witness=witness, samples=found, seed=seed)


def _dim_hint(barrier: BarrierFunction, radius: float) -> int:
    # probe ambient dimension: try growing vectors until phi accepts one
    for d in range(1, 17):
        try:
            barrier(0.0, np.zeros(d))
            return d
        except (IndexError, ValueError, TypeError):
            continue
    raise ValueError("could not infer state dimension of barrier functional")


def check_barrier_convergence_G4(barriers: Callable[[int], BarrierFunction],
                                 n: int, horizon: float, samples: int, stream, *,
                                 radius: float = 5.0):
    """G4: sup over sampled (t, x) of |phi_n - phi_0|, expected to vanish as
    n grows."""
    from .model import ValidationReport, _report_seed

    bn = barriers(n)
    b0 = barriers(0)
    gen = stream.generator()
    worst = 0.0
    witness = None
    d = _dim_hint(b0, radius)
    for _ in range(samples):
        t = float(gen.uniform(0.0, horizon))
        x = gen.uniform(-radius, radius, size=d)
        gap = abs(bn(t, x) - b0(t, x))
        if gap > worst:
            worst = gap
            witness = (t, x.copy())
    seed = _report_seed(stream)
    return ValidationReport(assumption=f"G4[n={n}]", passed=math.isfinite(worst),
                            constant=worst, witness=witness, samples=samples,
                            seed=seed)
