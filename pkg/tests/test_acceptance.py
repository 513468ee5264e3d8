"""Acceptance suite: every release criterion at its stated tolerance.

Each test prints one "[criterion NN] PASS: ..." line on success; run with
`pytest tests/test_acceptance.py -v -s` to see them. The tests are
statistical where the criterion is statistical and exact where it is exact;
tolerances and time budgets come from the release checklist and must not be
loosened here.
"""
import json
import time

import numpy as np
import pytest

from jumpflow import (
    BarrierFunction,
    CouplingPlan,
    JumpMeasureSpec,
    StreamRole,
    TimeGrid,
    check_linear_growth,
    check_local_lipschitz,
    constant_coefficients,
    estimate_hit_times,
    finite_horizon_wrap,
    first_hit,
    make_stream,
    proportional_coefficients,
    run_coupled,
    sample_jumps,
    sample_noise,
    solve_path,
    strong_error_study,
    wilson_interval,
)
from jumpflow.cli import main as cli_main
from jumpflow.scenarios import TEMPLATES

SEED = 20260817


# -- criteria 6 and 7 share one full-scale coupled study --------------------

@pytest.fixture(scope="module")
def coupled_study():
    seq = TEMPLATES["levy_barrier"].build({
        "drift": (1.0, 2.0),        # a_n = 1 + 2/n
        "diffusion": (1.0, 1.0),    # b_n = 1 + 1/n
        "jump_scale": (0.0, 1.0),   # c_n = 1/n, limit jump-free in effect
        "jump_mass": 1.0,
        "mark_law": "unit",
        "barrier_level": 1.0,
        "x0": 0.0,
        "horizon": 1.0,
    })
    plan = CouplingPlan(schedule=(1, 4, 16, 64), paths=2000, master_seed=SEED,
                        n_steps=1000, epsilons=(0.1,))
    t0 = time.perf_counter()
    report = run_coupled(seq, plan, keep_paths=False)
    elapsed = time.perf_counter() - t0
    return report, elapsed


def test_criterion_01_deterministic_drift_coupling():
    t0 = time.perf_counter()
    plain = TEMPLATES["constant_coeffs"].build({
        "drift": (1.0, 1.0), "diffusion": 0.0, "x0": 0.0, "horizon": 1.0})
    plan = CouplingPlan(schedule=(1, 4, 16, 64), paths=100, master_seed=SEED,
                        n_steps=1000)
    rep = run_coupled(plain, plan)
    for i, n in enumerate(rep.schedule):
        want = (1.0 / n) ** 2
        arr = np.asarray(rep.delta_sq_paths[i])
        assert np.ptp(arr) == 0.0, f"n={n}: across-path spread must be exactly 0"
        # the coupled distance accumulates 1000 float additions before being
        # squared: |rel err| <= ~2 * n_steps * eps ~ 4e-13, doubled by the
        # square. 1e-11 is "equal up to roundoff" for this step count.
        assert abs(rep.mean_sq_delta[i] - want) <= 1e-11 * want, \
            f"n={n}: mean {rep.mean_sq_delta[i]!r} != {want!r}"

    # same family stopped at the level x = 1 over a doubled horizon
    hitting = TEMPLATES["constant_coeffs"].build({
        "drift": (1.0, 1.0), "diffusion": 0.0, "x0": 0.0, "horizon": 2.0,
        "barrier_level": 1.0})
    plan2 = CouplingPlan(schedule=(1, 4, 16, 64), paths=100, master_seed=SEED,
                         n_steps=2000)  # h = 1e-3
    rep2 = run_coupled(hitting, plan2)
    tau0 = np.asarray(rep2.tau_limit_paths)
    assert np.ptp(tau0) == 0.0 and abs(tau0[0] - 1.0) < 1e-9
    h = 2.0 / 2000
    for i, n in enumerate(rep2.schedule):
        taus = np.asarray(rep2.tau_paths[i])
        assert np.ptp(taus) == 0.0
        gap = abs(taus[0] - tau0[0])
        want = 1.0 / (n + 1)
        assert abs(gap - want) <= 2 * h, f"n={n}: gap {gap} vs {want}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0, f"budget 5s exceeded: {elapsed:.1f}s"
    print(f"\n[criterion 01] PASS: E[D_n(1)^2] = (1/n)^2 with zero spread and "
          f"|tau_n - tau_0| = 1/(n+1) within 2h ({elapsed:.1f}s)")


def test_criterion_02_strong_error_against_exact_geometric_solution():
    t0 = time.perf_counter()
    cs = proportional_coefficients(0.1, 0.2)

    def exact_terminal(horizon, w_total):
        return np.exp((0.1 - 0.5 * 0.2 ** 2) * horizon + 0.2 * w_total)

    rms = strong_error_study(cs, x0=1.0, horizon=1.0, resolutions=(256, 512),
                             paths=4000, master_seed=SEED,
                             exact_terminal=exact_terminal)
    ratio = rms[256] / rms[512]
    assert 1.2 <= ratio <= 1.8, f"halving ratio {ratio:.3f} outside [1.2, 1.8]"
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"budget 60s exceeded: {elapsed:.1f}s"
    print(f"\n[criterion 02] PASS: rms ratio 256->512 steps = {ratio:.3f} "
          f"in [1.2, 1.8] ({elapsed:.1f}s)")


def test_criterion_03_jump_counting_statistics():
    t0 = time.perf_counter()
    spec = JumpMeasureSpec.finite_activity(2.0, lambda g, c: np.ones((c, 1)))
    reps = 100_000
    horizon, lam = 3.0, 6.0
    counts = np.empty(reps)
    first_window = np.empty(reps)
    for pid in range(reps):
        js = sample_jumps(spec, horizon,
                          (make_stream(SEED, pid, StreamRole.JUMP_TIMES),
                           make_stream(SEED, pid, StreamRole.JUMP_MARKS)))
        counts[pid] = js.count
        first_window[pid] = (js.times < 1.5).sum()
    second_window = counts - first_window

    mean = counts.mean()
    se_mean = np.sqrt(lam / reps)
    assert abs(mean - lam) <= 3 * se_mean, f"count mean {mean:.4f}"

    var = counts.var(ddof=1)
    se_var = np.sqrt((lam + 2 * lam * lam) / reps)  # Poisson fourth moment
    assert abs(var - lam) <= 3 * se_var, f"count variance {var:.4f}"

    cov = np.mean((first_window - first_window.mean())
                  * (second_window - second_window.mean()))
    se_cov = np.sqrt((lam / 2) * (lam / 2) / reps)
    assert abs(cov) <= 3 * se_cov, f"window covariance {cov:.5f}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0, f"budget 10s exceeded: {elapsed:.1f}s"
    print(f"\n[criterion 03] PASS: mean {mean:.4f}, var {var:.4f}, "
          f"disjoint-window cov {cov:.5f}, all within 3 SE ({elapsed:.1f}s)")


def test_criterion_04_compensated_pure_jump_martingale():
    t0 = time.perf_counter()
    seq = TEMPLATES["levy_driven"].build({
        "drift": 0.0, "diffusion": 0.0, "jump_gain": 1.0, "jump_mass": 2.0,
        "mark_law": "unit", "x0": 0.0, "horizon": 1.0})
    grid = TimeGrid(1.0, 100)
    paths = 10_000
    cs = seq.coefficients(0)
    x0 = seq.initial_state(0)
    ends = np.empty(paths)
    for pid in range(paths):
        noise = sample_noise(grid, seq.jump_spec, SEED, pid)
        ends[pid] = solve_path(cs, x0, noise).states[-1, 0]
    mean = ends.mean()
    se = ends.std(ddof=1) / np.sqrt(paths)
    assert abs(mean) <= 4 * se, f"terminal mean {mean:.5f} vs 4 SE {4 * se:.5f}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 20.0, f"budget 20s exceeded: {elapsed:.1f}s"
    print(f"\n[criterion 04] PASS: compensated jump mean X(1) = {mean:.5f} "
          f"within 4 SE = {4 * se:.5f} ({elapsed:.1f}s)")


def test_criterion_05_brownian_interval_exit_time():
    t0 = time.perf_counter()
    seq = TEMPLATES["interval_exit"].build({
        "diffusion": 1.0, "left": -1.0, "right": 1.0, "x0": 0.0})
    paths = 10_000
    times = estimate_hit_times(seq, 0, paths=paths, master_seed=SEED,
                               n_steps=8000)  # h = 1e-3 over horizon 8
    capped = np.minimum(times, seq.horizon)
    mean = capped.mean()
    se = capped.std(ddof=1) / np.sqrt(paths)
    # E[tau] = 1 for unit Brownian motion from 0 in (-1, 1); discrete
    # monitoring overshoots by O(sqrt(h)), covered by the 0.05 allowance
    assert abs(mean - 1.0) <= 3 * se + 0.05, \
        f"mean exit {mean:.4f} outside 1.0 +- {3 * se + 0.05:.4f}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"budget 60s exceeded: {elapsed:.1f}s"
    print(f"\n[criterion 05] PASS: mean capped exit time {mean:.4f} vs 1.0, "
          f"tolerance {3 * se + 0.05:.4f} ({elapsed:.1f}s)")


def test_criterion_06_solution_convergence_trend(coupled_study):
    report, elapsed = coupled_study
    assert elapsed < 120.0, f"budget 120s exceeded: {elapsed:.1f}s"
    ms = report.mean_sq_delta
    assert report.verdicts["mean_sq_delta"] == "decreasing", \
        f"verdict {report.verdicts['mean_sq_delta']} with levels {ms}"
    assert ms[-1] < ms[0] / 10.0, f"final {ms[-1]:.4g} not < first/10 {ms[0] / 10:.4g}"
    print(f"\n[criterion 06] PASS: mean-square coupled distance "
          f"{[float(f'{v:.4g}') for v in ms]} decreasing, final < first/10 "
          f"({elapsed:.1f}s shared run)")


def test_criterion_07_hit_time_convergence_in_probability(coupled_study):
    report, elapsed = coupled_study
    assert elapsed < 120.0, f"budget 120s exceeded: {elapsed:.1f}s"
    counts = [row[0] for row in report.tau_exceed_counts]
    verdict = report.verdicts["tau_exceed"]["0.1"]
    assert verdict == "decreasing", f"verdict {verdict} with counts {counts}"
    lo, hi = wilson_interval(counts[-1], report.paths)
    assert hi < 0.05, f"final exceedance upper bound {hi:.4f} not < 0.05"
    print(f"\n[criterion 07] PASS: P(|tau_n - tau_0| > 0.1) counts {counts} "
          f"decreasing, final Wilson upper {hi:.4f} < 0.05 ({elapsed:.1f}s shared run)")


def test_criterion_08_horizon_truncation_identity():
    seq = TEMPLATES["levy_barrier"].build({
        "drift": (1.0, 2.0), "diffusion": (1.0, 1.0), "jump_scale": (0.0, 1.0),
        "jump_mass": 1.0, "mark_law": "unit", "barrier_level": 1.0,
        "x0": 0.0, "horizon": 1.0})
    base = BarrierFunction(phi=lambda t, x: x[..., 0] - 1.0,
                           gradient=lambda t, x: np.ones(np.shape(x)),
                           time_vectorized=True)
    wrapped = finite_horizon_wrap(base, 1.0)
    grid = TimeGrid(1.0, 200)
    cs = seq.coefficients(1)
    x0 = seq.initial_state(1)
    kinds = set()
    for pid in range(1000):
        traj = solve_path(cs, x0, sample_noise(grid, seq.jump_spec, 424242, pid))
        open_hit = first_hit(traj, base)
        forced = first_hit(traj, wrapped)
        want = min(open_hit.time, 1.0)
        assert forced.time == want, \
            f"path {pid}: wrapped {forced.time!r} != min(open, T) {want!r}"
        kinds.add(forced.crossing_kind)
    assert kinds == {"continuous_crossing", "jump_crossing", "horizon_forced"}
    print("\n[criterion 08] PASS: first_hit(wrap(phi, T)) = min(first_hit(phi), T) "
          "exactly on 1000/1000 jump-diffusion paths, all crossing kinds seen")


def test_criterion_09_reports_are_worker_count_invariant(tmp_path):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text("""\
schema_version = 1

[scenario]
template = "levy_barrier"
drift = [1.0, 2.0]
diffusion = [1.0, 1.0]
jump_scale = [0.0, 1.0]
jump_mass = 1.0
mark_law = "unit"
barrier_level = 1.0
x0 = 0.0
horizon = 1.0

[run]
schedule = [1, 4]
paths = 100
master_seed = 11
n_steps = 300
""")
    out1, out8 = tmp_path / "w1", tmp_path / "w8"
    assert cli_main(["converge", "--config", str(cfg), "--out", str(out1),
                     "--workers", "1"]) == 0
    assert cli_main(["converge", "--config", str(cfg), "--out", str(out8),
                     "--workers", "8"]) == 0
    b1 = (out1 / "report.json").read_bytes()
    b8 = (out8 / "report.json").read_bytes()
    assert b1 == b8, "report.json differs between 1 and 8 workers"
    assert json.loads(b1)["paths"] == 100
    print("\n[criterion 09] PASS: cmd_converge report.json byte-identical "
          "for worker counts 1 and 8")


def test_criterion_10_assumption_constants_recovered():
    lip = check_local_lipschitz(proportional_coefficients(3.0, 0.0),
                                horizon=1.0, radius=5.0, samples=400,
                                stream=make_stream(0, 1, StreamRole.WIENER))
    assert abs(lip.constant - 9.0) <= 1e-6, f"Lipschitz {lip.constant!r}"
    growth = check_linear_growth(constant_coefficients(1.0, 1.0), horizon=1.0,
                                 samples=200,
                                 stream=make_stream(0, 2, StreamRole.WIENER))
    assert abs(growth.constant - 2.0) <= 1e-12, f"growth {growth.constant!r}"
    assert growth.witness["x"] == [0.0]
    print(f"\n[criterion 10] PASS: local Lipschitz constant {lip.constant:.9f} "
          f"(target 9) and growth constant {growth.constant} at x = 0 (target 2)")
