"""Built-in scenario families and the validation orchestrator.

Each template builds a ScenarioSequence from flat parameters. Family-valued
parameters accept three spellings:

    3.0          the same constant at every index
    (3.0, 0.5)   base + pert/n at index n >= 1, base at the limit index 0
    callable     arbitrary n -> value

Coefficients built here are broadcast-safe over a leading batch axis, so
scalar jump-free members run on the fast lockstep lane.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np

from .hitting import (BarrierFunction, check_barrier_convergence_G4,
                      check_nondegeneracy_G3, finite_horizon_wrap)
from .model import (CoefficientSet, ScenarioSequence, ValidationReport,
                    check_compensator_consistency, check_convergence_C1,
                    check_convergence_C2, check_linear_growth,
                    check_local_lipschitz, check_small_jump_bound)
from .noise import JumpMeasureSpec, StreamRole, make_stream

# validation streams use path ids from here up, far above any simulation path
VALIDATION_PATH_BASE = 1 << 40


class ScenarioError(ValueError):
    """A template rejected its parameters on semantic grounds."""


class ParameterError(ScenarioError):
    """A parameter was missing, unknown, or of the wrong shape."""


# ---------------------------------------------------------------------------
# mark laws

@dataclass(frozen=True)
class MarkLaw:
    """Mark distribution with its exact mean (the compensator needs it) and
    a uniform bound for envelope checks."""

    name: str
    mean: float
    bound: float
    sampler: Callable[[np.random.Generator, int], np.ndarray]


def _unit_sampler(g, count):
    return np.ones((count, 1))


def _pm_one_sampler(g, count):
    return (g.integers(0, 2, (count, 1)) * 2 - 1).astype(float)


def make_mark_law(name: str, lo: Optional[float] = None,
                  hi: Optional[float] = None) -> MarkLaw:
    if name == "unit":
        return MarkLaw("unit", 1.0, 1.0, _unit_sampler)
    if name == "pm_one":
        return MarkLaw("pm_one", 0.0, 1.0, _pm_one_sampler)
    if name == "uniform":
        if lo is None or hi is None or not (lo < hi):
            raise ParameterError("uniform mark law needs mark_lo < mark_hi")
        lo_f, hi_f = float(lo), float(hi)

        def sampler(g, count):
            return g.uniform(lo_f, hi_f, (count, 1))

        return MarkLaw("uniform", (lo_f + hi_f) / 2.0,
                       max(abs(lo_f), abs(hi_f)), sampler)
    raise ParameterError(f"unknown mark law {name!r}; known: unit, pm_one, uniform")


# ---------------------------------------------------------------------------
# family specs and coefficient builders

def family_constant(base: float, pert: float = 0.0) -> Callable[[int], float]:
    """n -> base + pert/n, with the limit index 0 mapping to base."""
    base = float(base)
    pert = float(pert)

    def val(n: int) -> float:
        return base if n == 0 else base + pert / n

    return val


def _as_family(x) -> Callable[[int], float]:
    if callable(x):
        return lambda n: float(x(n))
    if isinstance(x, (tuple, list)):
        if len(x) != 2:
            raise ParameterError(f"family parameter pair must have 2 entries, got {x!r}")
        return family_constant(*x)
    return family_constant(float(x))


def constant_coefficients(a: float, b: float, c_scale: float = 0.0,
                          jump_mass: float = 0.0,
                          mark_mean: float = 0.0) -> CoefficientSet:
    """Scalar equation with constant drift a, constant diffusion b and jump
    size c_scale * theta; the compensator mean is exact."""
    a = float(a)
    b = float(b)
    c_scale = float(c_scale)
    mc = float(jump_mass * mark_mean * c_scale)
    # the (1,) outputs are cached and shared; callers must not mutate them
    a1 = np.full((1,), a)
    b1 = np.full((1, 1), b)
    mc1 = np.full((1,), mc)
    return CoefficientSet(
        dim_state=1, dim_wiener=1, dim_mark=1,
        drift=lambda t, x: a1 if np.shape(x) == (1,) else np.full(np.shape(x), a),
        diffusion=lambda t, x: b1 if np.shape(x) == (1,)
        else np.full(np.shape(x) + (1,), b),
        jump_coeff=lambda t, x, th: c_scale * th,
        compensator_mean=lambda t, x: mc1 if np.shape(x) == (1,)
        else np.full(np.shape(x), mc))


def proportional_coefficients(a_slope: float, b_slope: float) -> CoefficientSet:
    """Scalar equation with drift a_slope*x and diffusion b_slope*x, no
    jumps. The geometric family used in strong-error studies."""
    a_s = float(a_slope)
    b_s = float(b_slope)
    return CoefficientSet(
        dim_state=1, dim_wiener=1, dim_mark=1,
        drift=lambda t, x: a_s * np.asarray(x, dtype=float),
        diffusion=lambda t, x: (b_s * np.asarray(x, dtype=float))[..., None],
        jump_coeff=lambda t, x, th: 0.0 * th,
        compensator_mean=lambda t, x: np.zeros(np.shape(x)))


def _level_barrier(level: float, slope: float, direction: str) -> BarrierFunction:
    """phi = x - h(t) for direction "above", h(t) - x for "below", with
    h(t) = level + slope * t."""
    level = float(level)
    slope = float(slope)
    if direction == "above":
        phi = lambda t, x: x[..., 0] - (level + slope * t)
        grad = lambda t, x: np.ones(np.shape(x))
    elif direction == "below":
        phi = lambda t, x: (level + slope * t) - x[..., 0]
        grad = lambda t, x: -np.ones(np.shape(x))
    else:
        raise ScenarioError(f"direction must be 'above' or 'below', got {direction!r}")
    return BarrierFunction(phi=phi, gradient=grad, time_vectorized=True)


def _never_barrier() -> BarrierFunction:
    return BarrierFunction(phi=lambda t, x: np.full(np.shape(x)[:-1], -1.0)
                           if np.ndim(x) > 1 else -1.0,
                           gradient=lambda t, x: np.zeros(np.shape(x)),
                           time_vectorized=True)


def _jump_spec_for(mass: float, law: Optional[MarkLaw]) -> Optional[JumpMeasureSpec]:
    if mass is None or mass == 0.0:
        return None
    if law is None:
        raise ParameterError("positive jump_mass needs a mark_law")
    if not (math.isfinite(mass) and mass > 0):
        raise ParameterError(f"jump_mass must be finite and >= 0, got {mass}")
    return JumpMeasureSpec.finite_activity(float(mass), law.sampler)


# ---------------------------------------------------------------------------
# builders

def constant_coeffs(*, drift=0.0, diffusion=0.0, jump_scale=0.0, jump_mass=0.0,
                    mark_law: Optional[MarkLaw] = None, barrier_level=1.0,
                    barrier_slope=0.0, x0=0.0, horizon: float = 1.0,
                    direction: str = "above") -> ScenarioSequence:
    """Family with constant coefficients per index and a level barrier
    wrapped to the horizon. No nondegeneracy guard: this is the template for
    closed-form studies where the diffusion may vanish."""
    if direction not in ("above", "below"):
        raise ScenarioError(f"direction must be 'above' or 'below', got {direction!r}")
    a_f, b_f, c_f = _as_family(drift), _as_family(diffusion), _as_family(jump_scale)
    lvl_f, slp_f, x0_f = _as_family(barrier_level), _as_family(barrier_slope), _as_family(x0)
    law = mark_law
    spec = _jump_spec_for(jump_mass, law)
    mean = law.mean if law is not None else 0.0
    mass = float(jump_mass or 0.0)

    def member(n: int) -> CoefficientSet:
        return constant_coefficients(a_f(n), b_f(n), c_f(n), mass, mean)

    def barrier(n: int) -> BarrierFunction:
        return finite_horizon_wrap(_level_barrier(lvl_f(n), slp_f(n), direction),
                                   horizon)

    env = None
    if spec is not None:
        c0 = abs(c_f(0))
        env = (lambda t, x: c0, lambda th: float(np.linalg.norm(th)))
    return ScenarioSequence(
        horizon=float(horizon), limit=member(0), at=member,
        x0=lambda n: np.array([x0_f(n)]), barrier=barrier, jump_spec=spec,
        vectorizable=True, scenario_id="constant_coeffs", mark_envelopes=env)


def levy_barrier(*, drift=1.0, diffusion=1.0, jump_scale=0.0, jump_mass=0.0,
                 mark_law: Optional[MarkLaw] = None, barrier_level=1.0,
                 barrier_slope=0.0, x0=0.0, horizon: float = 1.0,
                 direction: str = "above") -> ScenarioSequence:
    """Scalar family a_n*t + b_n*W + compensated jumps scaled by c_n, hitting
    a moving level. The limit diffusion must not vanish: the hitting-time
    limit needs the barrier nondegeneracy backed by check (G3), which is
    vacuous for flat noise."""
    b_f = _as_family(diffusion)
    if b_f(0) == 0.0:
        raise ScenarioError(
            "levy_barrier: limit diffusion is 0; the crossing analysis assumes "
            "a nondegenerate barrier slope (G3), use constant_coeffs for "
            "noise-free studies")
    seq = constant_coeffs(drift=drift, diffusion=diffusion, jump_scale=jump_scale,
                          jump_mass=jump_mass, mark_law=mark_law,
                          barrier_level=barrier_level, barrier_slope=barrier_slope,
                          x0=x0, horizon=horizon, direction=direction)
    return ScenarioSequence(
        horizon=seq.horizon, limit=seq.limit, at=seq.at, x0=seq.x0,
        barrier=seq.barrier, jump_spec=seq.jump_spec, vectorizable=True,
        scenario_id="levy_barrier", mark_envelopes=seq.mark_envelopes)


def interval_exit(*, drift=0.0, diffusion=1.0, jump_scale=0.0, jump_mass=0.0,
                  mark_law: Optional[MarkLaw] = None, left=-1.0, right=1.0,
                  x0=0.0, horizon: float = 8.0) -> ScenarioSequence:
    """Exit of a scalar family from (left_n, right_n).

    The hit functional is the negated product -(x - l)(r - x): negative
    strictly inside the interval, zero on the ends, positive outside, so
    "hit when >= 0" detects the exit. The barrier is not horizon-wrapped;
    paths still inside at the end of the grid report no hit.
    """
    b_f = _as_family(diffusion)
    if not b_f(0) > 0.0:
        raise ScenarioError("interval_exit: the limit diffusion must be positive")
    l_f, r_f, x0_f = _as_family(left), _as_family(right), _as_family(x0)
    # guard the first few indices; family specs vary monotonely in 1/n, so
    # the limit plus a short prefix witnesses any violation
    for n in (0, 1, 2, 3, 4):
        ln, rn, xn = l_f(n), r_f(n), x0_f(n)
        if not ln < rn:
            raise ScenarioError(f"interval_exit: need left < right at n={n}, "
                                f"got ({ln}, {rn})")
        if not (ln < xn < rn):
            raise ScenarioError(f"interval_exit: x0={xn} is not strictly inside "
                                f"({ln}, {rn}) at n={n}; the exit time would be 0")
    a_f, c_f = _as_family(drift), _as_family(jump_scale)
    law = mark_law
    spec = _jump_spec_for(jump_mass, law)
    mean = law.mean if law is not None else 0.0
    mass = float(jump_mass or 0.0)

    def member(n: int) -> CoefficientSet:
        return constant_coefficients(a_f(n), b_f(n), c_f(n), mass, mean)

    def barrier(n: int) -> BarrierFunction:
        ln, rn = l_f(n), r_f(n)
        return BarrierFunction(
            phi=lambda t, x: -(x[..., 0] - ln) * (rn - x[..., 0]),
            gradient=lambda t, x: (2.0 * np.asarray(x, dtype=float) - (ln + rn)),
            time_vectorized=True)

    env = None
    if spec is not None:
        c0 = abs(c_f(0))
        env = (lambda t, x: c0, lambda th: float(np.linalg.norm(th)))
    return ScenarioSequence(
        horizon=float(horizon), limit=member(0), at=member,
        x0=lambda n: np.array([x0_f(n)]), barrier=barrier, jump_spec=spec,
        vectorizable=True, scenario_id="interval_exit", mark_envelopes=env)


def levy_driven(*, drift=0.0, diffusion=0.0, jump_gain=1.0, jump_mass: float = 1.0,
                mark_law: Optional[MarkLaw] = None, x0=0.0, horizon: float = 1.0,
                barrier_level: Optional[float] = None, direction: str = "above",
                envelope_samples: int = 64) -> ScenarioSequence:
    """Single equation dX = a dt + b dW + g(t, X-) dJ with J the compensated
    jump sum. drift, diffusion and jump_gain are numbers or (t, x) callables;
    the jump size is g(t, x) * theta and the compensator follows exactly from
    the mark mean. Every family index maps to the same equation.

    The factorized envelope |g(t,x)| * |theta| is spot-checked (A4) before
    the sequence is returned; a violation rejects the parameters.
    """
    if mark_law is None:
        raise ScenarioError("levy_driven needs a mark_law")
    if direction not in ("above", "below"):
        raise ScenarioError(f"direction must be 'above' or 'below', got {direction!r}")
    if not (math.isfinite(jump_mass) and jump_mass > 0):
        raise ScenarioError("levy_driven needs a positive jump_mass")
    law = mark_law
    spec = _jump_spec_for(jump_mass, law)

    def as_field(v):
        if callable(v):
            return lambda t, x: np.asarray(v(t, x), dtype=float)
        vf = float(v)
        return lambda t, x: np.full(np.shape(x), vf)

    a_fn = as_field(drift)
    b_raw = as_field(diffusion)
    g_fn = as_field(jump_gain)
    mass_mean = float(jump_mass) * law.mean

    cs = CoefficientSet(
        dim_state=1, dim_wiener=1, dim_mark=1,
        drift=a_fn,
        diffusion=lambda t, x: b_raw(t, x)[..., None],
        jump_coeff=lambda t, x, th: g_fn(t, x) * th[..., 0],
        compensator_mean=lambda t, x: mass_mean * g_fn(t, x))

    state_env = lambda t, x: float(np.linalg.norm(g_fn(t, x)))
    mark_env = lambda th: float(np.linalg.norm(th))
    stream = make_stream(0, VALIDATION_PATH_BASE, StreamRole.WIENER)
    report = check_small_jump_bound(cs, state_env, mark_env, envelope_samples,
                                    stream, horizon=horizon, jump_spec=spec)
    if not report.passed:
        raise ScenarioError(
            f"levy_driven: jump envelope check (A4) failed with margin "
            f"{report.constant:.3g} at {report.witness}")

    if barrier_level is None:
        barrier = lambda n: _never_barrier()
    else:
        wrapped = finite_horizon_wrap(
            _level_barrier(float(barrier_level), 0.0, direction), horizon)
        barrier = lambda n: wrapped

    x0_f = _as_family(x0)
    return ScenarioSequence(
        horizon=float(horizon), limit=cs, at=lambda n: cs,
        x0=lambda n: np.array([x0_f(n)]), barrier=barrier, jump_spec=spec,
        vectorizable=False, scenario_id="levy_driven",
        mark_envelopes=(state_env, mark_env))


# ---------------------------------------------------------------------------
# template registry

REQUIRED = object()


@dataclass(frozen=True)
class ParamSpec:
    kind: str                    # family | scalar | opt_scalar | str | mark_law
    default: Any = REQUIRED


@dataclass(frozen=True)
class ScenarioTemplate:
    id: str
    builder: Callable[..., ScenarioSequence]
    schema: dict
    checks: tuple
    validation_radius: float = 5.0

    def build(self, params: dict) -> ScenarioSequence:
        known = set(self.schema) | {"mark_lo", "mark_hi"}
        unknown = set(params) - known
        if unknown:
            raise ParameterError(
                f"unknown parameter(s) for template {self.id!r}: "
                f"{', '.join(sorted(unknown))}")
        kwargs = {}
        for name, ps in self.schema.items():
            if name in params:
                kwargs[name] = _coerce_param(self.id, name, ps, params)
            elif ps.default is REQUIRED:
                raise ParameterError(f"template {self.id!r} requires parameter {name!r}")
            else:
                kwargs[name] = ps.default
        return self.builder(**kwargs)


def _coerce_param(tid: str, name: str, ps: ParamSpec, params: dict):
    v = params[name]
    if ps.kind == "family":
        if callable(v) or isinstance(v, (int, float)):
            return v
        if isinstance(v, (list, tuple)) and len(v) == 2 and all(
                isinstance(e, (int, float)) for e in v):
            return tuple(float(e) for e in v)
        raise ParameterError(f"{tid}.{name}: expected a number, a [base, pert] "
                            f"pair or a callable, got {v!r}")
    if ps.kind == "field":
        # a (t, x) callable or a constant; no per-index variation
        if callable(v):
            return v
        if isinstance(v, (int, float)) and math.isfinite(v):
            return float(v)
        raise ParameterError(f"{tid}.{name}: expected a finite number or a "
                            f"(t, x) callable, got {v!r}")
    if ps.kind == "scalar":
        if isinstance(v, (int, float)) and math.isfinite(v):
            return float(v)
        raise ParameterError(f"{tid}.{name}: expected a finite number, got {v!r}")
    if ps.kind == "opt_scalar":
        if v is None:
            return None
        if isinstance(v, (int, float)) and math.isfinite(v):
            return float(v)
        raise ParameterError(f"{tid}.{name}: expected a finite number or null, got {v!r}")
    if ps.kind == "str":
        if isinstance(v, str):
            return v
        raise ParameterError(f"{tid}.{name}: expected a string, got {v!r}")
    if ps.kind == "mark_law":
        if isinstance(v, MarkLaw):
            return v
        if isinstance(v, str):
            return make_mark_law(v, params.get("mark_lo"), params.get("mark_hi"))
        raise ParameterError(f"{tid}.{name}: expected a mark law name, got {v!r}")
    raise ParameterError(f"{tid}.{name}: unhandled parameter kind {ps.kind!r}")


_COMMON = {
    "drift": ParamSpec("family", 0.0),
    "diffusion": ParamSpec("family", REQUIRED),
    "jump_scale": ParamSpec("family", 0.0),
    "jump_mass": ParamSpec("scalar", 0.0),
    "mark_law": ParamSpec("mark_law", None),
    "x0": ParamSpec("family", 0.0),
    "horizon": ParamSpec("scalar", REQUIRED),
}

TEMPLATES = {}
for _t in (
    ScenarioTemplate(
        id="constant_coeffs", builder=constant_coeffs,
        schema={**_COMMON, "diffusion": ParamSpec("family", 0.0),
                "barrier_level": ParamSpec("family", 1.0),
                "barrier_slope": ParamSpec("family", 0.0),
                "direction": ParamSpec("str", "above")},
        checks=("A1", "A2", "C1", "C2", "A4", "compensator", "G3", "G4")),
    ScenarioTemplate(
        id="levy_barrier", builder=levy_barrier,
        schema={**_COMMON, "diffusion": ParamSpec("family", 1.0),
                "barrier_level": ParamSpec("family", 1.0),
                "barrier_slope": ParamSpec("family", 0.0),
                "direction": ParamSpec("str", "above")},
        checks=("A1", "A2", "C1", "C2", "A4", "compensator", "G3", "G4")),
    ScenarioTemplate(
        id="interval_exit", builder=interval_exit,
        schema={**_COMMON, "diffusion": ParamSpec("family", 1.0),
                "left": ParamSpec("family", -1.0),
                "right": ParamSpec("family", 1.0),
                "horizon": ParamSpec("scalar", 8.0)},
        # G3 deliberately absent: the exit functional's gradient vanishes at
        # the interval midpoint, the check would reject every instance
        checks=("A1", "A2", "C1", "C2", "A4", "compensator", "G4")),
    ScenarioTemplate(
        id="levy_driven", builder=levy_driven,
        schema={"drift": ParamSpec("field", 0.0),
                "diffusion": ParamSpec("field", 0.0),
                "jump_gain": ParamSpec("field", 1.0),
                "jump_mass": ParamSpec("scalar", 1.0),
                "mark_law": ParamSpec("mark_law", REQUIRED),
                "x0": ParamSpec("family", 0.0),
                "horizon": ParamSpec("scalar", 1.0),
                "barrier_level": ParamSpec("opt_scalar", None),
                "direction": ParamSpec("str", "above")},
        checks=("A1", "A2", "C1", "C2", "A4", "compensator", "G3", "G4")),
):
    TEMPLATES[_t.id] = _t


# ---------------------------------------------------------------------------
# validation orchestration

def run_validators(seq: ScenarioSequence, *, checks, schedule=(),
                   master_seed: int = 0, samples: int = 200,
                   radius: float = 5.0, mark_samples: int = 256) -> list:
    """Run the named checks against a sequence. Index-dependent checks (C1,
    C2, G4) run once per scheduled index. Jump checks silently skip when the
    sequence has no jump measure."""
    reports: list[ValidationReport] = []
    pid = VALIDATION_PATH_BASE + 1

    def st():
        nonlocal pid
        pid += 1
        return make_stream(master_seed, pid, StreamRole.WIENER)

    has_jumps = seq.jump_spec is not None and seq.jump_spec.total_mass > 0
    sched = [int(n) for n in schedule if int(n) >= 1]
    for name in checks:
        if name == "A1":
            reports.append(check_linear_growth(
                seq.limit, seq.horizon, samples, st(), radius=radius,
                jump_spec=seq.jump_spec, mark_samples=mark_samples))
        elif name == "A2":
            reports.append(check_local_lipschitz(
                seq.limit, seq.horizon, radius, samples, st(),
                jump_spec=seq.jump_spec, mark_samples=mark_samples))
        elif name == "A4":
            if has_jumps and seq.mark_envelopes is not None:
                state_env, mark_env = seq.mark_envelopes
                reports.append(check_small_jump_bound(
                    seq.limit, state_env, mark_env, samples, st(),
                    horizon=seq.horizon, radius=radius,
                    jump_spec=seq.jump_spec, mark_samples=mark_samples))
        elif name == "compensator":
            if has_jumps:
                reports.append(check_compensator_consistency(
                    seq.limit, seq.jump_spec, seq.horizon, samples, st(),
                    radius=radius, mark_samples=max(mark_samples, 512)))
        elif name == "C1":
            for n in sched:
                reports.append(check_convergence_C1(
                    seq, n, seq.horizon, samples, st(), radius=radius,
                    mark_samples=mark_samples))
        elif name == "C2":
            for n in sched:
                val = check_convergence_C2(seq, n)
                reports.append(ValidationReport(
                    assumption=f"C2[n={n}]", passed=math.isfinite(val),
                    constant=val, witness={}, samples=1,
                    seed=(master_seed, -1, "NONE")))
        elif name == "G3":
            reports.append(check_nondegeneracy_G3(
                seq.barrier(0), seq.horizon, samples, st(), radius=radius))
        elif name == "G4":
            for n in sched:
                reports.append(check_barrier_convergence_G4(
                    seq.barrier, n, seq.horizon, samples, st(), radius=radius))
        else:
            raise ValueError(f"unknown check name {name!r}")
    return reports
