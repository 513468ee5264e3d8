"""Coupled simulation of jump diffusions and their barrier hitting times.

The package solves scalar and vector SDEs driven by a Wiener process and a
compensated finite-activity jump measure on a jump-adapted Euler grid,
couples whole approximating families to one noise realization, and measures
endpoint and first-passage convergence with deterministic, replayable
randomness.
"""
from .noise import (JumpEvent, JumpMeasureSpec, JumpStream, NoisePath,
                    RngStream, SmallJumpPolicy, StreamRole, TimeGrid,
                    WienerIncrements, coarsen_wiener, make_stream,
                    sample_jumps, sample_noise, sample_wiener)
from .model import (CoefficientSet, ScenarioSequence, ValidationReport,
                    check_compensator_consistency, check_convergence_C1,
                    check_convergence_C2, check_linear_growth,
                    check_local_lipschitz, check_small_jump_bound)
from .solver import (NonFiniteStateError, SolveConfig, Trajectory, UnionNoise,
                     check_continuity_bound, check_moment_bound,
                     integrate_on_union, prepare_union, solve_path,
                     write_trajectory_csv)
from .hitting import (CONTINUOUS_CROSSING, HORIZON_FORCED, INITIAL,
                      JUMP_CROSSING, BarrierFunction, HittingTime, capped_gap,
                      check_barrier_convergence_G4, check_nondegeneracy_G3,
                      finite_horizon_wrap, first_hit, hit_gap,
                      numeric_gradient)
from .experiments import (ConvergenceReport, CouplingPlan, PathOutcome,
                          estimate_hit_times, run_coupled, strong_error_study,
                          sup_distance, trend_verdict, wilson_interval)
from .scenarios import (MarkLaw, ParameterError, ScenarioError,
                        ScenarioTemplate, TEMPLATES, constant_coefficients,
                        constant_coeffs, family_constant, interval_exit,
                        levy_barrier, levy_driven, make_mark_law,
                        proportional_coefficients, run_validators)

__version__ = "0.1.0"
