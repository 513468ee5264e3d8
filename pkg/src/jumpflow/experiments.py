"""Coupled convergence experiments.

One noise bundle per path drives the limit equation and every member of the
approximating family, so endpoint gaps and hitting-time gaps are measured
pathwise. Results aggregate into a ConvergenceReport whose JSON and CSV
serializations are byte-stable: floats are written in shortest round-trip
form, keys are sorted, and nothing host- or time-dependent is included.

Two execution lanes produce bit-identical numbers:

  pointwise  the general solver, one path at a time; used whenever jumps
             are present, the state is multidimensional, or the scenario
             does not declare itself broadcast-safe;
  batch      a lockstep sweep over blocks of paths for scalar jump-free
             broadcast-safe scenarios; same increment bits, same update
             op order, same crossing and refinement arithmetic.

Per-path results land in slot arrays indexed by path id and are reduced in
a fixed order, so the report does not depend on the worker count.
"""
from __future__ import annotations

import csv
import io
import json
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

from .hitting import BarrierFunction, first_hit
from .model import ScenarioSequence
from .noise import (JumpStream, StreamRole, TimeGrid, coarsen_wiener,
                    make_stream, sample_noise, sample_wiener)
from .solver import SolveConfig, Trajectory, prepare_union, integrate_on_union, solve_path

SCHEMA_VERSION = 1

# two-sided 95% normal quantile
Z_95 = statistics.NormalDist().inv_cdf(0.975)


def wilson_interval(successes: int, trials: int, z: float = Z_95) -> tuple[float, float]:
    """Score interval for a binomial proportion. Exact 0 stays 0 and exact
    1 stays 1 at the matching endpoint."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    if not 0 <= successes <= trials:
        raise ValueError("successes must lie in [0, trials]")
    p = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2.0 * trials)) / denom
    half = z * math.sqrt(p * (1.0 - p) / trials + z2 / (4.0 * trials * trials)) / denom
    # rounding in the closed form can push an endpoint past the point
    # estimate when p is exactly 0 or 1; pin those endpoints
    lo = 0.0 if successes == 0 else max(0.0, center - half)
    hi = 1.0 if successes == trials else min(1.0, center + half)
    return lo, hi


def trend_verdict(values: Sequence[float], slack: float = 0.25) -> str:
    """Classify a sequence expected to shrink.

    "decreasing": every step is a decrease up to the relative slack AND the
    last value is below half the first. "flat": steps are within slack but
    the total drop is small. "non_decreasing": some step grows beyond the
    slack.
    """
    vals = [float(v) for v in values]
    if len(vals) < 2:
        raise ValueError("need at least two values to classify a trend")
    if any(v < 0 or not math.isfinite(v) for v in vals):
        raise ValueError("trend values must be finite and nonnegative")
    if slack < 0:
        raise ValueError("slack must be >= 0")
    steps_ok = all(vals[i + 1] <= vals[i] * (1.0 + slack) for i in range(len(vals) - 1))
    if not steps_ok:
        return "non_decreasing"
    if vals[-1] < vals[0] / 2.0:
        return "decreasing"
    return "flat"


@dataclass(frozen=True)
class CouplingPlan:
    """What to run: family indices, path count, seed, grid resolution and
    the gap thresholds to tally. The schedule is normalized to sorted unique
    indices, so plans that differ only by ordering are the same plan."""

    schedule: tuple
    paths: int
    master_seed: int
    n_steps: int
    epsilons: tuple = (0.1,)
    refine_hits: bool = True
    trend_slack: float = 0.25

    def __post_init__(self):
        sched = tuple(sorted({int(n) for n in self.schedule}))
        if len(sched) == 0:
            raise ValueError("schedule must contain at least one index")
        if sched[0] < 1:
            raise ValueError("schedule indices must be >= 1 (0 is the limit, always run)")
        object.__setattr__(self, "schedule", sched)
        eps = tuple(sorted({float(e) for e in self.epsilons}))
        if len(eps) == 0 or any(not (math.isfinite(e) and e > 0) for e in eps):
            raise ValueError("epsilons must be positive finite numbers")
        object.__setattr__(self, "epsilons", eps)
        if self.paths < 1:
            raise ValueError("paths must be >= 1")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not (0 <= self.trend_slack < 10):
            raise ValueError("trend_slack out of range")


class PathOutcome(NamedTuple):
    path_id: int
    n: int
    delta_sq: float
    tau_n: float
    tau_limit: float
    gap: float


def _gap_array(tau_n: np.ndarray, tau_0: np.ndarray) -> np.ndarray:
    """|tau_n - tau_0| with the no-hit convention: both infinite gives 0,
    exactly one infinite gives +inf."""
    inf_n = np.isinf(tau_n)
    inf_0 = np.isinf(tau_0)
    a = np.where(inf_n, 0.0, tau_n)
    b = np.where(inf_0, 0.0, tau_0)
    gap = np.abs(a - b)
    gap[inf_n ^ inf_0] = np.inf
    gap[inf_n & inf_0] = 0.0
    return gap


@dataclass
class ConvergenceReport:
    """Aggregated coupled run. `to_json_bytes` and `write_summary_csv` are
    deterministic functions of the numeric content; wall time and per-path
    arrays are deliberately not serialized."""

    scenario_id: str
    master_seed: int
    paths: int
    n_steps: int
    horizon: float
    schedule: tuple
    epsilons: tuple
    refine_hits: bool
    trend_slack: float
    lane: str
    mean_sq_delta: list
    se_sq_delta: list
    delta_exceed_counts: list   # [level][eps] -> int
    tau_exceed_counts: list     # [level][eps] -> int
    verdicts: dict
    verified: dict
    validation_mode: str = "unspecified"
    wall_seconds: float = 0.0
    delta_sq_paths: Optional[np.ndarray] = field(default=None, repr=False)
    tau_paths: Optional[np.ndarray] = field(default=None, repr=False)
    tau_limit_paths: Optional[np.ndarray] = field(default=None, repr=False)

    def level_summary(self, idx: int) -> dict:
        n = self.schedule[idx]
        out = {
            "n": n,
            "mean_sq_delta": self.mean_sq_delta[idx],
            "se_sq_delta": self.se_sq_delta[idx],
            "delta_exceed": [],
            "tau_exceed": [],
        }
        for j, eps in enumerate(self.epsilons):
            for key, counts in (("delta_exceed", self.delta_exceed_counts),
                                ("tau_exceed", self.tau_exceed_counts)):
                c = counts[idx][j]
                lo, hi = wilson_interval(c, self.paths)
                out[key].append({"eps": eps, "count": c, "p": c / self.paths,
                                 "lo": lo, "hi": hi})
        return out

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "scenario_id": self.scenario_id,
            "master_seed": self.master_seed,
            "paths": self.paths,
            "n_steps": self.n_steps,
            "horizon": self.horizon,
            "schedule": list(self.schedule),
            "epsilons": list(self.epsilons),
            "refine_hits": self.refine_hits,
            "trend_slack": self.trend_slack,
            "lane": self.lane,
            "levels": [self.level_summary(i) for i in range(len(self.schedule))],
            "verdicts": self.verdicts,
            "verified": self.verified,
            "validation_mode": self.validation_mode,
        }

    def to_json_bytes(self) -> bytes:
        return (json.dumps(self.to_dict(), sort_keys=True, indent=2,
                           allow_nan=False) + "\n").encode("utf-8")

    def write_json(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_json_bytes())

    def summary_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "mean_sq_delta", "se", "eps",
                    "p_delta_exceed", "p_delta_lo", "p_delta_hi",
                    "p_tau_exceed", "p_tau_lo", "p_tau_hi"])
        for i, n in enumerate(self.schedule):
            for j, eps in enumerate(self.epsilons):
                cd = self.delta_exceed_counts[i][j]
                ct = self.tau_exceed_counts[i][j]
                dlo, dhi = wilson_interval(cd, self.paths)
                tlo, thi = wilson_interval(ct, self.paths)
                w.writerow([n, repr(self.mean_sq_delta[i]), repr(self.se_sq_delta[i]),
                            repr(float(eps)),
                            repr(cd / self.paths), repr(dlo), repr(dhi),
                            repr(ct / self.paths), repr(tlo), repr(thi)])
        return buf.getvalue()

    def write_summary_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.summary_csv_text())

    def iter_outcomes(self) -> Iterator[PathOutcome]:
        if self.delta_sq_paths is None:
            raise ValueError("per-path arrays were not kept for this report")
        for i, n in enumerate(self.schedule):
            gaps = _gap_array(self.tau_paths[i], self.tau_limit_paths)
            for pid in range(self.paths):
                yield PathOutcome(pid, n, float(self.delta_sq_paths[i, pid]),
                                  float(self.tau_paths[i, pid]),
                                  float(self.tau_limit_paths[pid]),
                                  float(gaps[pid]))


def _batch_eligible(seq: ScenarioSequence) -> bool:
    cs = seq.limit
    return (seq.vectorizable and seq.jump_spec is None
            and cs.dim_state == 1 and cs.dim_wiener == 1)


def _as_barrier(b) -> BarrierFunction:
    return b if isinstance(b, BarrierFunction) else BarrierFunction(phi=b)


def _run_pointwise(seq: ScenarioSequence, plan: CouplingPlan, workers: int,
                   delta_sq: np.ndarray, tau: np.ndarray, tau0: np.ndarray) -> None:
    levels = plan.schedule
    grid = TimeGrid(seq.horizon, plan.n_steps)
    cs0 = seq.coefficients(0)
    x00 = seq.initial_state(0)
    b0 = _as_barrier(seq.barrier(0))
    cs_n = [seq.coefficients(n) for n in levels]
    x0_n = [seq.initial_state(n) for n in levels]
    b_n = [_as_barrier(seq.barrier(n)) for n in levels]
    config = SolveConfig(n_steps=plan.n_steps)

    def run_block(pids) -> None:
        for pid in pids:
            noise = sample_noise(grid, seq.jump_spec, plan.master_seed, pid,
                                 cs0.dim_wiener)
            union = prepare_union(noise.wiener, noise.jumps)
            s0, p0, _ = integrate_on_union(cs0, x00, union, config)
            traj0 = Trajectory(union.times, s0, p0, union.is_jump)
            h0 = first_hit(traj0, b0, refine=plan.refine_hits)
            tau0[pid] = h0.time
            for i in range(len(levels)):
                s, p, _ = integrate_on_union(cs_n[i], x0_n[i], union, config)
                trajn = Trajectory(union.times, s, p, union.is_jump)
                hn = first_hit(trajn, b_n[i], refine=plan.refine_hits)
                tau[i, pid] = hn.time
                d = s[-1] - s0[-1]
                delta_sq[i, pid] = float(d @ d)

    pids = list(range(plan.paths))
    if workers <= 1:
        run_block(pids)
        return
    blocks = [list(b) for b in np.array_split(pids, workers * 4) if len(b)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for fut in [pool.submit(run_block, b) for b in blocks]:
            fut.result()


def _run_batch(seq: ScenarioSequence, plan: CouplingPlan,
               delta_sq: np.ndarray, tau: np.ndarray, tau0: np.ndarray) -> None:
    """Lockstep sweep. Update arithmetic mirrors the pointwise lane exactly:
    x + (a - mc)*dt + b*dw per component, crossings tested on the new state
    with the same chord refinement."""
    levels = (0,) + plan.schedule
    grid = TimeGrid(seq.horizon, plan.n_steps)
    tl = grid.points.tolist()
    sqdt = np.sqrt(np.diff(grid.points))
    cs = {n: seq.coefficients(n) for n in levels}
    x0 = {n: float(seq.initial_state(n)[0]) for n in levels}
    bar = {n: _as_barrier(seq.barrier(n)) for n in levels}
    n_steps = plan.n_steps

    chunk = max(1, int(6_000_000 // max(1, n_steps)))
    for start in range(0, plan.paths, chunk):
        pids = range(start, min(start + chunk, plan.paths))
        pc = len(pids)
        inc = np.empty((pc, n_steps))
        for row, pid in enumerate(pids):
            gen = make_stream(plan.master_seed, pid, StreamRole.WIENER).generator()
            inc[row] = (gen.standard_normal((n_steps, 1)) * sqdt[:, None])[:, 0]

        state = {}
        done = {}
        tau_c = {}
        phi_prev = {}
        for n in levels:
            X = np.full(pc, x0[n])
            state[n] = X
            # .phi, not __call__: the wrapper coerces scalars and would choke
            # on a batch axis
            ph = np.asarray(bar[n].phi(tl[0], X[:, None]), dtype=float).reshape(pc)
            hit0 = ph >= 0.0
            t_arr = np.full(pc, math.inf)
            t_arr[hit0] = tl[0]
            done[n] = hit0
            tau_c[n] = t_arr
            phi_prev[n] = ph

        for i in range(n_steps):
            t0f = tl[i]
            t1f = tl[i + 1]
            dt = t1f - t0f
            dw = inc[:, i]
            for n in levels:
                X = state[n]
                Xc = X[:, None]
                c = cs[n]
                a = np.asarray(c.drift(t0f, Xc), dtype=float).reshape(pc)
                mc = np.asarray(c.compensator_mean(t0f, Xc), dtype=float).reshape(pc)
                b = np.asarray(c.diffusion(t0f, Xc), dtype=float).reshape(pc)
                Xn = X + (a - mc) * dt + b * dw
                state[n] = Xn
                ph = np.asarray(bar[n].phi(t1f, Xn[:, None]), dtype=float).reshape(pc)
                newly = (~done[n]) & (ph >= 0.0)
                if newly.any():
                    t_hit = np.full(int(newly.sum()), t1f)
                    if plan.refine_hits:
                        lo = phi_prev[n][newly]
                        hi = ph[newly]
                        r = (hi > 0.0) & (lo < 0.0)
                        frac = (-lo[r]) / (hi[r] - lo[r])
                        t_hit[r] = t0f + (t1f - t0f) * frac
                    tau_c[n][newly] = t_hit
                    done[n] |= newly
                phi_prev[n] = ph

        sl = slice(start, start + pc)
        x_T0 = state[0]
        if not all(np.isfinite(state[n]).all() for n in levels):
            raise ValueError("non-finite state in batch lane; run the scenario "
                             "with vectorizable=False to locate the path")
        tau0[sl] = tau_c[0]
        for i, n in enumerate(plan.schedule):
            d = state[n] - x_T0
            delta_sq[i, sl] = d * d
            tau[i, sl] = tau_c[n]


def run_coupled(seq: ScenarioSequence, plan: CouplingPlan, *,
                workers: int = 1, keep_paths: bool = True) -> ConvergenceReport:
    """Run the coupled family and aggregate. The report is a function of
    (seq, plan) alone; workers only change the wall time."""
    L = len(plan.schedule)
    delta_sq = np.empty((L, plan.paths))
    tau = np.empty((L, plan.paths))
    tau0 = np.empty(plan.paths)
    lane = "batch" if _batch_eligible(seq) else "pointwise"
    t_start = time.perf_counter()
    if lane == "batch":
        _run_batch(seq, plan, delta_sq, tau, tau0)
    else:
        _run_pointwise(seq, plan, workers, delta_sq, tau, tau0)
    wall = time.perf_counter() - t_start

    mean_sq = [float(np.mean(delta_sq[i])) for i in range(L)]
    if plan.paths > 1:
        se = [float(np.std(delta_sq[i], ddof=1) / math.sqrt(plan.paths))
              for i in range(L)]
    else:
        se = [0.0] * L
    d_counts = []
    t_counts = []
    for i in range(L):
        gaps = _gap_array(tau[i], tau0)
        drow = []
        trow = []
        for eps in plan.epsilons:
            drow.append(int(np.count_nonzero(delta_sq[i] > eps * eps)))
            trow.append(int(np.count_nonzero(gaps > eps)))
        d_counts.append(drow)
        t_counts.append(trow)

    verdicts = {"mean_sq_delta": trend_verdict(mean_sq, plan.trend_slack)
                if L >= 2 else "flat"}
    verified = {"mean_sq_delta": verdicts["mean_sq_delta"] == "decreasing"}
    tau_verdicts = {}
    tau_verified = {}
    for j, eps in enumerate(plan.epsilons):
        ps = [t_counts[i][j] / plan.paths for i in range(L)]
        v = trend_verdict(ps, plan.trend_slack) if L >= 2 else "flat"
        key = repr(float(eps))
        tau_verdicts[key] = v
        _, hi = wilson_interval(t_counts[-1][j], plan.paths)
        tau_verified[key] = (v != "non_decreasing") and hi < 0.05
    verdicts["tau_exceed"] = tau_verdicts
    verified["tau_exceed"] = tau_verified

    return ConvergenceReport(
        scenario_id=seq.scenario_id, master_seed=plan.master_seed,
        paths=plan.paths, n_steps=plan.n_steps, horizon=float(seq.horizon),
        schedule=plan.schedule, epsilons=plan.epsilons,
        refine_hits=plan.refine_hits, trend_slack=plan.trend_slack,
        lane=lane, mean_sq_delta=mean_sq, se_sq_delta=se,
        delta_exceed_counts=d_counts, tau_exceed_counts=t_counts,
        verdicts=verdicts, verified=verified, wall_seconds=wall,
        delta_sq_paths=delta_sq if keep_paths else None,
        tau_paths=tau if keep_paths else None,
        tau_limit_paths=tau0 if keep_paths else None)


def estimate_hit_times(seq: ScenarioSequence, n: int, *, paths: int,
                       master_seed: int, n_steps: int,
                       refine: bool = True, workers: int = 1) -> np.ndarray:
    """First-passage times of family member n over fresh coupled noise.
    +inf marks paths that never cross within the horizon."""
    plan = CouplingPlan(schedule=(max(n, 1),), paths=paths,
                        master_seed=master_seed, n_steps=n_steps,
                        refine_hits=refine)
    out = np.empty(paths)
    if _batch_eligible(seq):
        L = 1
        delta_sq = np.empty((L, paths))
        tau = np.empty((L, paths))
        tau0 = np.empty(paths)
        _run_batch(seq, plan, delta_sq, tau, tau0)
        return tau0 if n == 0 else tau[0]

    grid = TimeGrid(seq.horizon, n_steps)
    cs = seq.coefficients(n)
    x0 = seq.initial_state(n)
    b = _as_barrier(seq.barrier(n))
    config = SolveConfig(n_steps=n_steps)

    def run_block(pids):
        for pid in pids:
            noise = sample_noise(grid, seq.jump_spec, master_seed, pid, cs.dim_wiener)
            traj = solve_path(cs, x0, noise, config)
            out[pid] = first_hit(traj, b, refine=refine).time

    pids = list(range(paths))
    if workers <= 1:
        run_block(pids)
    else:
        blocks = [list(bk) for bk in np.array_split(pids, workers * 4) if len(bk)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for fut in [pool.submit(run_block, bk) for bk in blocks]:
                fut.result()
    return out


def sup_distance(a: Trajectory, b: Trajectory) -> float:
    """Sup over the union of both node sets of the distance between the two
    paths, read as right-continuous step functions of their post-jump
    states."""
    if not math.isclose(a.horizon, b.horizon, rel_tol=1e-12):
        raise ValueError("trajectories cover different horizons")
    times = np.union1d(a.times, b.times)
    ia = np.clip(np.searchsorted(a.times, times, side="right") - 1, 0, None)
    ib = np.clip(np.searchsorted(b.times, times, side="right") - 1, 0, None)
    diff = a.states[ia] - b.states[ib]
    return float(np.max(np.sqrt(np.sum(diff * diff, axis=1))))


def strong_error_study(cs, x0, horizon: float, resolutions, paths: int,
                       master_seed: int, exact_terminal) -> dict:
    """Root-mean-square terminal error against a closed-form endpoint.

    All resolutions integrate the same Brownian path: increments are drawn
    at the finest level and summed into the coarser grids, and
    `exact_terminal(horizon, w_total)` receives the total displacement.
    Jump-free by construction.
    """
    res = sorted({int(r) for r in resolutions})
    if len(res) < 1 or res[0] < 1:
        raise ValueError("resolutions must be positive integers")
    finest = res[-1]
    for r in res:
        if finest % r:
            raise ValueError(f"resolution {r} does not divide the finest {finest}")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    grid_f = TimeGrid(horizon, finest)
    acc = {r: 0.0 for r in res}
    empty = JumpStream.empty(horizon)
    config = SolveConfig(n_steps=finest)
    for pid in range(paths):
        stream = make_stream(master_seed, pid, StreamRole.WIENER)
        wf = sample_wiener(grid_f, stream, cs.dim_wiener)
        w_total = float(np.sum(wf.increments))
        target = np.asarray(exact_terminal(horizon, w_total), dtype=float).reshape(-1)
        for r in res:
            w = wf if r == finest else coarsen_wiener(wf, finest // r)
            traj = solve_path(cs, x0, (w, empty), config)
            d = traj.states[-1] - target
            acc[r] += float(d @ d)
    return {r: math.sqrt(acc[r] / paths) for r in res}
