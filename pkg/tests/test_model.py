"""Coefficient containers and the sampled assumption checks."""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jumpflow import (
    CoefficientSet,
    JumpMeasureSpec,
    ScenarioSequence,
    StreamRole,
    check_compensator_consistency,
    check_convergence_C1,
    check_convergence_C2,
    check_linear_growth,
    check_local_lipschitz,
    check_small_jump_bound,
    constant_coefficients,
    make_stream,
    proportional_coefficients,
)
from jumpflow.scenarios import TEMPLATES


def probe_stream(pid=123):
    return make_stream(0, pid, StreamRole.WIENER)


def unit_marks(g, count):
    return np.ones((count, 1))


def test_coefficient_set_rejects_bad_dims():
    with pytest.raises(ValueError):
        CoefficientSet(dim_state=0, dim_wiener=1, dim_mark=1,
                       drift=None, diffusion=None, jump_coeff=None,
                       compensator_mean=None)


def test_linear_growth_constant_coefficients_hits_two_at_origin():
    # |a|^2 + |b|^2 = 2 at x = 0 and the origin is a deterministic anchor,
    # so the estimate is exact, not sampling-limited.
    cs = constant_coefficients(1.0, 1.0)
    rep = check_linear_growth(cs, horizon=1.0, samples=200, stream=probe_stream())
    assert rep.assumption == "A1"
    assert rep.passed
    assert rep.constant == 2.0
    assert rep.witness["x"] == [0.0]
    assert rep.seed == (0, 123, "WIENER")


def test_local_lipschitz_linear_drift_recovers_squared_slope():
    cs = proportional_coefficients(3.0, 0.0)
    rep = check_local_lipschitz(cs, horizon=1.0, radius=5.0, samples=400,
                                stream=probe_stream())
    assert rep.assumption == "A2"
    assert rep.passed
    assert abs(rep.constant - 9.0) < 1e-6


@settings(max_examples=15, deadline=None)
@given(slope=st.floats(0.25, 8.0, allow_nan=False))
def test_local_lipschitz_is_squared_slope_for_any_slope(slope):
    cs = proportional_coefficients(slope, 0.0)
    rep = check_local_lipschitz(cs, horizon=1.0, radius=3.0, samples=64,
                                stream=probe_stream())
    assert abs(rep.constant - slope * slope) < 1e-8 * max(1.0, slope * slope)


def test_c1_distance_for_perturbed_constant_family():
    seq = TEMPLATES["constant_coeffs"].build({
        "drift": (1.0, 1.0), "diffusion": 0.0, "x0": 0.0, "horizon": 1.0})
    for n in (1, 4, 16):
        rep = check_convergence_C1(seq, n, horizon=1.0, samples=64,
                                   stream=probe_stream())
        assert rep.assumption == f"C1[n={n}]"
        assert abs(rep.constant - 1.0 / n) < 1e-12
    with pytest.raises(ValueError):
        check_convergence_C1(seq, 0, horizon=1.0, samples=8, stream=probe_stream())


def test_c2_zero_for_shared_initial_state_and_exact_for_family():
    seq = TEMPLATES["constant_coeffs"].build({
        "drift": (1.0, 1.0), "diffusion": 0.0, "x0": 0.0, "horizon": 1.0})
    assert check_convergence_C2(seq, 3) == 0.0
    shifted = ScenarioSequence(
        horizon=1.0, limit=seq.limit, at=seq.at,
        x0=lambda n: np.array([0.0 if n == 0 else 1.0 / n]),
        barrier=seq.barrier)
    assert abs(check_convergence_C2(shifted, 4) - 0.25) < 1e-15


def test_initial_state_validated():
    seq = TEMPLATES["constant_coeffs"].build({
        "drift": 1.0, "diffusion": 0.0, "x0": 0.0, "horizon": 1.0})
    bad = ScenarioSequence(horizon=1.0, limit=seq.limit, at=seq.at,
                           x0=lambda n: np.array([np.nan]), barrier=seq.barrier)
    with pytest.raises(ValueError):
        bad.initial_state(0)
    with pytest.raises(ValueError):
        seq.coefficients(-1)


def test_small_jump_envelope_pass_and_fail():
    spec = JumpMeasureSpec.finite_activity(2.0, unit_marks)
    cs = constant_coefficients(0.0, 0.0, c_scale=1.0, jump_mass=2.0, mark_mean=1.0)
    ok = check_small_jump_bound(
        cs, state_envelope=lambda t, x: 1.0,
        mark_envelope=lambda th: float(np.linalg.norm(th)),
        samples=32, stream=probe_stream(), jump_spec=spec)
    assert ok.assumption == "A4"
    assert ok.passed and ok.constant == 0.0
    tight = check_small_jump_bound(
        cs, state_envelope=lambda t, x: 0.5,
        mark_envelope=lambda th: float(np.linalg.norm(th)),
        samples=32, stream=probe_stream(), jump_spec=spec)
    assert not tight.passed
    assert tight.constant == pytest.approx(0.5)


def test_compensator_consistency_detects_an_offset():
    spec = JumpMeasureSpec.finite_activity(2.0, unit_marks)
    cs = constant_coefficients(0.0, 0.0, c_scale=1.5, jump_mass=2.0, mark_mean=1.0)
    good = check_compensator_consistency(cs, spec, horizon=1.0, samples=16,
                                         stream=probe_stream())
    assert good.passed
    broken = CoefficientSet(
        dim_state=1, dim_wiener=1, dim_mark=1,
        drift=cs.drift, diffusion=cs.diffusion, jump_coeff=cs.jump_coeff,
        compensator_mean=lambda t, x: np.full(np.shape(x), 99.0))
    bad = check_compensator_consistency(broken, spec, horizon=1.0, samples=16,
                                        stream=probe_stream())
    assert not bad.passed


def test_checks_are_replayable():
    cs = proportional_coefficients(1.0, 0.5)
    a = check_linear_growth(cs, 1.0, 64, probe_stream(9))
    b = check_linear_growth(cs, 1.0, 64, probe_stream(9))
    assert a == b


def test_growth_check_flags_non_finite():
    cs = CoefficientSet(
        dim_state=1, dim_wiener=1, dim_mark=1,
        drift=lambda t, x: np.full(np.shape(x), np.inf),
        diffusion=lambda t, x: np.zeros(np.shape(x) + (1,)),
        jump_coeff=lambda t, x, th: np.zeros(np.shape(x)),
        compensator_mean=lambda t, x: np.zeros(np.shape(x)))
    rep = check_linear_growth(cs, 1.0, 16, probe_stream())
    assert not rep.passed
    assert math.isinf(rep.constant)
