"""Coefficient sets, scenario sequences, and sampled assumption checks.

Shape convention for coefficient callables: the state argument x always has
a trailing axis of length dim_state. Pointwise calls pass shape (d,);
drift and compensator_mean return the same shape, diffusion returns
x.shape + (dim_wiener,), and the jump coefficient maps ((d,), (m,)) -> (d,).
Built-in scenarios keep their callables broadcast-safe so a leading batch
axis can be threaded through, which the vectorized experiment lane relies
on. All callables must be pure.

The checks here are randomized spot checks, not proofs: they estimate the
best constant over a sampled box and report the worst witness point. Every
report records the stream identity that produced its samples, so any
witness can be reproduced exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from .noise import JumpMeasureSpec, RngStream

Coefficient = Callable[[float, np.ndarray], np.ndarray]
JumpCoefficient = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CoefficientSet:
    """One equation's coefficients: drift, diffusion, jump map, and the
    mean jump compensator (the mark-integral of the jump map against the
    sampled part of the measure, applied continuously as drift)."""

    dim_state: int
    dim_wiener: int
    dim_mark: int
    drift: Coefficient
    diffusion: Coefficient
    jump_coeff: JumpCoefficient
    compensator_mean: Coefficient

    def __post_init__(self):
        for name in ("dim_state", "dim_wiener", "dim_mark"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class ScenarioSequence:
    """A limit equation (index 0) together with its approximating family.

    `at(n)` gives the n-th coefficient set (n >= 1), `x0(n)` the initial
    state and `barrier(n)` the hitting functional for each index including
    0. All members share one jump measure and one horizon. `vectorizable`
    asserts that coefficients and barriers are broadcast-safe over a
    leading batch axis (see module docstring).
    """

    horizon: float
    limit: CoefficientSet
    at: Callable[[int], CoefficientSet]
    x0: Callable[[int], np.ndarray]
    barrier: Callable[[int], Any]
    jump_spec: Optional[JumpMeasureSpec] = None
    vectorizable: bool = False
    scenario_id: str = "custom"
    mark_envelopes: Optional[tuple[Callable, Callable]] = None

    def __post_init__(self):
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be finite and positive, got {self.horizon}")

    def coefficients(self, n: int) -> CoefficientSet:
        if n < 0:
            raise ValueError("index must be >= 0")
        return self.limit if n == 0 else self.at(n)

    def initial_state(self, n: int) -> np.ndarray:
        x = np.asarray(self.x0(n), dtype=float).reshape(-1)
        if x.shape != (self.limit.dim_state,) or not np.isfinite(x).all():
            raise ValueError(f"x0({n}) must be a finite vector of length {self.limit.dim_state}")
        return x


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of one sampled assumption check."""

    assumption: str
    passed: bool
    constant: float
    witness: dict
    samples: int
    seed: tuple
    note: str = ""


def _report_seed(stream: RngStream) -> tuple:
    return (stream.master_seed, stream.path_id, stream.role.name)


def _box_points(g, count, horizon, radius, d):
    """(t, x) spot points: a few deterministic anchors plus uniform box draws.

    Anchors include the origin and the box corners so maxima that sit at
    x = 0 or at the boundary are found deterministically.
    """
    count = max(int(count), 8)
    t = g.uniform(0.0, horizon, count)
    x = g.uniform(-radius, radius, (count, d))
    t[0] = 0.0
    x[0] = 0.0
    t[1] = horizon
    x[1] = 0.0
    t[2] = horizon
    x[2] = radius
    t[3] = horizon
    x[3] = -radius
    return t, x


def _ball_points(g, count, radius, d):
    z = g.standard_normal((count, d))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    r = radius * g.random((count, 1)) ** (1.0 / d)
    return z / norms * r


def _mark_integral_sq(fn, t, x, spec, marks):
    """Monte Carlo value of the mark integral of |fn(t, x, theta)|^2."""
    if spec is None or spec.total_mass == 0.0 or marks is None:
        return 0.0
    vals = np.array([np.sum(np.square(fn(t, x, th))) for th in marks])
    return spec.total_mass * float(vals.mean())


def check_linear_growth(cs: CoefficientSet, horizon: float, samples: int,
                        stream: RngStream, *, radius: float = 10.0,
                        jump_spec: Optional[JumpMeasureSpec] = None,
                        mark_samples: int = 128) -> ValidationReport:
    """Estimate the best constant C with
    |drift|^2 + |diffusion|^2 + mark-integral(|jump|^2) <= C (1 + |x|^2)
    over [0, horizon] x [-radius, radius]^d. Passes when finite."""
    g = stream.generator()
    d = cs.dim_state
    ts, xs = _box_points(g, samples, horizon, radius, d)
    marks = None
    if jump_spec is not None and jump_spec.total_mass > 0:
        marks = jump_spec.mark_sampler(g, mark_samples)
    best, witness = -math.inf, {}
    for t, x in zip(ts, xs):
        t = float(t)
        num = float(np.sum(np.square(cs.drift(t, x))))
        num += float(np.sum(np.square(cs.diffusion(t, x))))
        num += _mark_integral_sq(cs.jump_coeff, t, x, jump_spec, marks)
        ratio = num / (1.0 + float(x @ x))
        if ratio > best:
            best, witness = ratio, {"t": t, "x": x.tolist()}
    return ValidationReport("A1", math.isfinite(best), best, witness,
                            len(ts), _report_seed(stream))


def check_local_lipschitz(cs: CoefficientSet, horizon: float, radius: float,
                          samples: int, stream: RngStream, *,
                          jump_spec: Optional[JumpMeasureSpec] = None,
                          mark_samples: int = 128) -> ValidationReport:
    """Estimate the best local Lipschitz constant on the centered ball of
    the given radius: squared coefficient differences over |x - y|^2."""
    g = stream.generator()
    d = cs.dim_state
    count = max(int(samples), 8)
    ts = g.uniform(0.0, horizon, count)
    xs = _ball_points(g, count, radius, d)
    ys = _ball_points(g, count, radius, d)
    marks = None
    if jump_spec is not None and jump_spec.total_mass > 0:
        marks = jump_spec.mark_sampler(g, mark_samples)
    best, witness = -math.inf, {}
    for t, x, y in zip(ts, xs, ys):
        gap = float(np.sum(np.square(x - y)))
        if gap < 1e-24:
            continue
        t = float(t)
        num = float(np.sum(np.square(cs.drift(t, x) - cs.drift(t, y))))
        num += float(np.sum(np.square(cs.diffusion(t, x) - cs.diffusion(t, y))))
        if marks is not None:
            diff = lambda tt, _unused, th: cs.jump_coeff(tt, x, th) - cs.jump_coeff(tt, y, th)
            num += _mark_integral_sq(diff, t, x, jump_spec, marks)
        ratio = num / gap
        if ratio > best:
            best, witness = ratio, {"t": t, "x": x.tolist(), "y": y.tolist()}
    return ValidationReport("A2", math.isfinite(best), best, witness,
                            count, _report_seed(stream))


def check_convergence_C1(seq: ScenarioSequence, n: int, horizon: float,
                         samples: int, stream: RngStream, *,
                         radius: float = 10.0,
                         mark_samples: int = 256) -> ValidationReport:
    """Sampled sup over the box of the coefficient distance between member n
    and the limit:
    |drift_n - drift_0| + |diff_n - diff_0| + sqrt(mark-integral |jump_n - jump_0|^2)."""
    if n < 1:
        raise ValueError("C1 compares a member with n >= 1 against the limit")
    g = stream.generator()
    a, b = seq.coefficients(n), seq.limit
    d = b.dim_state
    ts, xs = _box_points(g, samples, horizon, radius, d)
    spec = seq.jump_spec
    marks = None
    if spec is not None and spec.total_mass > 0:
        marks = spec.mark_sampler(g, mark_samples)
    best, witness = -math.inf, {}
    for t, x in zip(ts, xs):
        t = float(t)
        val = float(np.linalg.norm(a.drift(t, x) - b.drift(t, x)))
        val += float(np.linalg.norm(a.diffusion(t, x) - b.diffusion(t, x)))
        diff = lambda tt, _unused, th: a.jump_coeff(tt, x, th) - b.jump_coeff(tt, x, th)
        val += math.sqrt(_mark_integral_sq(diff, t, x, spec, marks))
        if val > best:
            best, witness = val, {"t": t, "x": x.tolist()}
    return ValidationReport(f"C1[n={n}]", math.isfinite(best), best, witness,
                            len(ts), _report_seed(stream))


def check_convergence_C2(seq: ScenarioSequence, n: int) -> float:
    """Distance of the n-th initial state from the limit initial state."""
    if n < 1:
        raise ValueError("C2 compares a member with n >= 1 against the limit")
    return float(np.linalg.norm(seq.initial_state(n) - seq.initial_state(0)))


def check_small_jump_bound(cs: CoefficientSet, state_envelope: Callable,
                           mark_envelope: Callable, samples: int,
                           stream: RngStream, *, horizon: float = 1.0,
                           radius: float = 10.0,
                           jump_spec: Optional[JumpMeasureSpec] = None,
                           mark_samples: int = 128) -> ValidationReport:
    """Check the factorized jump envelope |jump(t, x, theta)| <=
    state_envelope(t, x) * mark_envelope(theta) on sampled points and marks.
    The constant is the worst violation margin (0 when the bound holds)."""
    if jump_spec is None or jump_spec.total_mass == 0.0:
        raise ValueError("envelope check needs a jump measure to draw marks from")
    g = stream.generator()
    ts, xs = _box_points(g, samples, horizon, radius, cs.dim_state)
    marks = jump_spec.mark_sampler(g, mark_samples)
    worst, witness = 0.0, {}
    for t, x in zip(ts, xs):
        t = float(t)
        env_x = float(state_envelope(t, x))
        for th in marks:
            margin = float(np.linalg.norm(cs.jump_coeff(t, x, th))) - env_x * float(mark_envelope(th))
            if margin > worst:
                worst, witness = margin, {"t": t, "x": x.tolist(), "mark": np.asarray(th).tolist()}
    return ValidationReport("A4", worst <= 0.0, worst, witness,
                            len(ts) * len(marks), _report_seed(stream))


def check_compensator_consistency(cs: CoefficientSet, jump_spec: JumpMeasureSpec,
                                  horizon: float, samples: int, stream: RngStream, *,
                                  radius: float = 10.0,
                                  mark_samples: int = 512) -> ValidationReport:
    """Verify that compensator_mean matches the Monte Carlo mark average of
    the jump coefficient, mass * E[jump(t, x, theta)], within 4 standard
    errors at every sampled point."""
    if jump_spec.total_mass == 0.0:
        raise ValueError("compensator check needs positive jump mass")
    g = stream.generator()
    ts, xs = _box_points(g, samples, horizon, radius, cs.dim_state)
    marks = jump_spec.mark_sampler(g, mark_samples)
    mass = jump_spec.total_mass
    worst, witness, ok = -math.inf, {}, True
    for t, x in zip(ts, xs):
        t = float(t)
        vals = np.stack([np.asarray(cs.jump_coeff(t, x, th), dtype=float) for th in marks])
        est = mass * vals.mean(axis=0)
        se = mass * vals.std(axis=0, ddof=1) / math.sqrt(len(marks))
        err = float(np.linalg.norm(cs.compensator_mean(t, x) - est))
        tol = 4.0 * float(np.linalg.norm(se)) + 1e-12
        if err - tol > worst:
            worst, witness = err - tol, {"t": t, "x": x.tolist(), "err": err, "tol": tol}
        if err > tol:
            ok = False
    return ValidationReport("compensator", ok, worst, witness,
                            len(ts), _report_seed(stream))
