"""Parameter landscapes of ``M_n`` and estimation of swap factors from data."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .core import (
    HbacSchedule,
    StarSystem,
    SwapProfile,
    magnetization_series,
    swap_profile_from_m,
)

AXES = ("n_reset", "m", "tau_hb", "gamma")
M_RULES = ("half", "fixed")
LOW_RANGE = (0.0, 0.2)
HIGH_RANGE = (0.8, 1.0)
TIE_RTOL = 1e-12

# TTSS-like register (37 spins: 36 1H around a central 29Si).  gamma is
# |gamma_1H / gamma_29Si|; the relaxation times are nominal values chosen in
# the usual range for this molecule, not measured ones.
TTSS_DEFAULTS = dict(n_reset=36, gamma=5.03, t1_comp=120.0, t1_reset=3.0,
                     j_rc=6.5, temperature=298.0)
TTSS_M = 15
TTSS_TAU_HB = 9.5


def ttss_system(**overrides) -> StarSystem:
    return StarSystem(**{**TTSS_DEFAULTS, **overrides})


def two_level_profile(n_reset: int, m: int, eta_low: float = 0.0,
                      eta_high: float = 1.0) -> SwapProfile:
    """``eta_high`` on the ``m`` swapped levels (``j > N - m``), ``eta_low`` elsewhere."""
    ideal = swap_profile_from_m(n_reset, m).eta
    return SwapProfile(np.where(ideal > 0, eta_high, eta_low))


def randomized_profile(n_reset: int, m: int, rng: np.random.Generator,
                       low: tuple[float, float] = LOW_RANGE,
                       high: tuple[float, float] = HIGH_RANGE) -> SwapProfile:
    """Ideal profile with 0 replaced by draws from ``low`` and 1 by draws from ``high``."""
    ideal = swap_profile_from_m(n_reset, m).eta
    u = rng.random(n_reset + 1)
    lo = low[0] + (low[1] - low[0]) * u
    hi = high[0] + (high[1] - high[0]) * u
    return SwapProfile(np.where(ideal > 0, hi, lo))


@dataclass(frozen=True)
class ScheduleTemplate:
    """Uniform schedule used at every grid point unless the swept axis overrides it."""

    m: int = TTSS_M
    tau_hb: float = TTSS_TAU_HB
    eta_low: float = 0.0
    eta_high: float = 1.0
    randomize: bool = False
    seed: int = 0
    explicit: bool = False


@dataclass(frozen=True)
class SweepSpec:
    """One-dimensional landscape of ``M_metric``.

    For ``axis="n_reset"`` the swap count follows ``m_rule``: ``"half"`` uses
    ``floor(N/2)``, ``"fixed"`` uses ``template.m`` clipped to ``N``.
    """

    axis: str
    grid: tuple
    system: StarSystem = field(default_factory=ttss_system)
    template: ScheduleTemplate = field(default_factory=ScheduleTemplate)
    metric: int = 15
    m_rule: str = "half"

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}; expected one of {AXES}")
        grid = tuple(float(v) for v in self.grid)
        if not grid:
            raise ValueError("sweep grid is empty")
        steps = np.diff(grid)
        if not (np.all(steps > 0) or np.all(steps < 0)):
            raise ValueError("sweep grid must be strictly ordered")
        if self.axis in ("n_reset", "m"):
            if any(v != int(v) for v in grid):
                raise ValueError(f"{self.axis} grid must hold integers")
            grid = tuple(int(v) for v in grid)
        if self.axis == "n_reset" and min(grid) < 1:
            raise ValueError("n_reset grid values must be >= 1")
        if self.axis == "m" and not all(0 <= v <= self.system.n_reset for v in grid):
            raise ValueError(f"m grid values must lie in [0, {self.system.n_reset}]")
        if self.axis == "tau_hb" and min(grid) < 0:
            raise ValueError("tau_hb grid values must be >= 0")
        if self.axis == "gamma" and min(grid) < 0:
            raise ValueError("gamma grid values must be >= 0")
        if self.m_rule not in M_RULES:
            raise ValueError(f"unknown m_rule {self.m_rule!r}")
        if int(self.metric) != self.metric or self.metric < 0:
            raise ValueError("metric must be a non-negative iteration index")
        object.__setattr__(self, "grid", grid)


@dataclass(frozen=True)
class SweepTable:
    axis: str
    values: np.ndarray
    magnetization: np.ndarray
    metric: int

    def rows(self):
        return list(zip(self.values.tolist(), self.magnetization.tolist()))


def _point(spec: SweepSpec, index: int) -> float:
    value = spec.grid[index]
    tpl = spec.template
    sys = spec.system
    m = tpl.m
    tau = tpl.tau_hb
    if spec.axis == "n_reset":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sys = dataclasses.replace(sys, n_reset=value)
        m = value // 2 if spec.m_rule == "half" else min(tpl.m, value)
    elif spec.axis == "gamma":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sys = dataclasses.replace(sys, gamma=value)
    elif spec.axis == "m":
        m = value
    else:
        tau = value
    m = min(m, sys.n_reset)
    if tpl.randomize:
        rng = np.random.default_rng(tpl.seed)
        profile = randomized_profile(sys.n_reset, m, rng)
    else:
        profile = two_level_profile(sys.n_reset, m, tpl.eta_low, tpl.eta_high)
    schedule = HbacSchedule.uniform(profile, tau, spec.metric)
    return float(magnetization_series(sys, schedule, explicit=tpl.explicit)[-1])


def grid_sweep(spec: SweepSpec, threads: int = 1) -> SweepTable:
    """Evaluate ``M_metric`` at every grid point.

    Points are independent.  In randomized mode every point redraws the
    same per-level uniforms from ``template.seed`` (common random numbers),
    so neighbouring points differ only through the swept parameter and any
    ``threads`` value returns identical results.
    """
    idx = range(len(spec.grid))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(lambda i: _point(spec, i), idx))
    else:
        values = [_point(spec, i) for i in idx]
    return SweepTable(spec.axis, np.array(spec.grid), np.array(values), spec.metric)


def best_of(table: SweepTable) -> tuple:
    """Grid argmax; ties (to 1e-12 relative) go to the smaller axis value."""
    best = table.magnetization.max()
    tied = np.abs(table.magnetization - best) <= TIE_RTOL * abs(best)
    value = min(v for v, t in zip(table.values.tolist(), tied) if t)
    i = table.values.tolist().index(value)
    return value, float(table.magnetization[i])


def optimize_axis(spec: SweepSpec, threads: int = 1) -> tuple:
    """Best grid value and its ``M_metric``; see :func:`best_of` for tie-breaking."""
    return best_of(grid_sweep(spec, threads=threads))


# ---------------------------------------------------------------- eta fitting


@dataclass(frozen=True)
class EtaFitProblem:
    """Bounded least-squares estimation of swap factors from a measured trace.

    ``schedule`` supplies the per-iteration delays and, through which levels
    its profiles swap (``eta > 0.5``), the split between the low and high
    groups of the ``"two-level"`` parametrization.  ``"per-j"`` fits one
    factor per level, shared by all iterations.
    """

    measured: tuple[tuple[int, float], ...]
    schedule: HbacSchedule
    parametrization: str = "two-level"
    smoothness: float = 0.0
    start_ranges: tuple[tuple[float, float], tuple[float, float]] = (LOW_RANGE, HIGH_RANGE)
    n_starts: int = 6
    seed: int = 0
    max_evals: int = 4000
    tol: float = 1e-13

    def __post_init__(self):
        measured = tuple((int(n), float(m)) for n, m in self.measured)
        if len(measured) < 2:
            raise ValueError("at least two measured points are required")
        if any(m <= 0 for _, m in measured):
            raise ValueError("measured magnetizations must be positive")
        if any(n < 0 or n > self.schedule.iterations for n, _ in measured):
            raise ValueError("measured iteration index outside the schedule")
        if self.parametrization not in ("two-level", "per-j"):
            raise ValueError(f"unknown parametrization {self.parametrization!r}")
        if self.schedule.iterations < 1:
            raise ValueError("schedule must have at least one iteration")
        object.__setattr__(self, "measured", measured)


@dataclass(frozen=True)
class EtaFit:
    profile: SwapProfile
    params: np.ndarray
    residual: float
    converged: bool
    evaluations: int
    profiles: tuple[SwapProfile, ...] = ()


def _masks(schedule: HbacSchedule) -> list[np.ndarray]:
    return [p.eta > 0.5 for p, _ in schedule.entries]


def _profiles(problem: EtaFitProblem, params: np.ndarray) -> list[SwapProfile]:
    params = np.clip(params, 0.0, 1.0)
    if problem.parametrization == "two-level":
        lo, hi = params
        return [SwapProfile(np.where(mask, hi, lo)) for mask in _masks(problem.schedule)]
    prof = SwapProfile(params)
    return [prof] * problem.schedule.iterations


def forward_trace(problem: EtaFitProblem, params, sys: StarSystem) -> np.ndarray:
    """Model ``M_n`` for every iteration of the schedule under the given parameters."""
    profiles = _profiles(problem, np.asarray(params, dtype=float))
    sched = HbacSchedule(tuple((p, tau) for p, (_, tau) in zip(profiles, problem.schedule.entries)))
    return magnetization_series(sys, sched)


def fit_residual(problem: EtaFitProblem, params, sys: StarSystem) -> float:
    """Sum of squared deviations between model and measured ``M_n``."""
    trace = forward_trace(problem, params, sys)
    ns = np.array([n for n, _ in problem.measured])
    ms = np.array([m for _, m in problem.measured])
    return float(np.sum((trace[ns] - ms) ** 2))


def _objective(problem: EtaFitProblem, sys: StarSystem):
    def f(x):
        r = fit_residual(problem, x, sys)
        if problem.parametrization == "per-j" and problem.smoothness > 0:
            r += problem.smoothness * float(np.sum(np.diff(np.clip(x, 0, 1)) ** 2))
        return r
    return f


COARSE_GRID = 11


def _starts(problem: EtaFitProblem, n_levels: int, obj) -> list[np.ndarray]:
    rng = np.random.default_rng(problem.seed)
    (l0, l1), (h0, h1) = problem.start_ranges
    if problem.parametrization == "two-level":
        ideal = np.array([0.0, 1.0])
        # the square is cheap to scan; its best node guards against the local
        # minima Powell falls into from the nominal starts
        axis = np.linspace(0.0, 1.0, COARSE_GRID)
        nodes = [np.array([a, b]) for a in axis for b in axis]
        coarse = min(nodes, key=obj)
        draws = [np.array([rng.uniform(l0, l1), rng.uniform(h0, h1)])
                 for _ in range(max(problem.n_starts - 2, 0))]
        return [ideal, coarse] + draws
    ideal_mask = _masks(problem.schedule)[0]
    ideal = ideal_mask.astype(float)
    draws = [np.where(ideal_mask, rng.uniform(h0, h1, n_levels), rng.uniform(l0, l1, n_levels))
             for _ in range(problem.n_starts - 1)]
    return [ideal] + draws


def fit_eta(problem: EtaFitProblem, sys: StarSystem) -> EtaFit:
    """Multi-start bounded Powell search for the swap factors.

    Starts are the ideal profile, seeded draws from ``start_ranges`` and, for
    the two-level form, the best node of an 11 x 11 scan of ``[0, 1]**2``.
    Local searches run from the best starts first and stop once the residual
    reaches ``tol``.  The ideal profile is always evaluated, so the returned
    residual never exceeds that of ideal swapping.  ``converged`` is False
    (and a ``RuntimeWarning`` issued) when the best search hit the
    evaluation cap.
    """
    n_levels = sys.n_reset + 1
    if problem.parametrization == "per-j" and len(problem.measured) < sys.n_reset:
        raise ValueError("per-j fitting needs at least N measured points")
    obj = _objective(problem, sys)
    dim = 2 if problem.parametrization == "two-level" else n_levels
    bounds = [(0.0, 1.0)] * dim

    starts = _starts(problem, n_levels, obj)
    evals = COARSE_GRID**2 if problem.parametrization == "two-level" else 0
    values = [obj(x0) for x0 in starts]
    evals += len(starts)
    order = sorted(range(len(starts)), key=lambda i: (values[i], i))
    best = order[0]
    best_x, best_f = starts[best], values[best]
    best_ok = best_f <= problem.tol
    for i in order:
        if best_f <= problem.tol:
            break
        res = minimize(obj, starts[i], method="Powell", bounds=bounds,
                       options={"maxfev": problem.max_evals, "xtol": 1e-10, "ftol": 1e-15})
        evals += res.nfev
        if res.fun < best_f:
            best_x, best_f = np.clip(res.x, 0, 1), float(res.fun)
            best_ok = bool(res.success) or best_f <= problem.tol
    if not best_ok:
        warnings.warn("eta fit stopped at the evaluation cap before converging", RuntimeWarning,
                      stacklevel=2)
    profiles = _profiles(problem, best_x)
    return EtaFit(
        profile=profiles[-1],
        params=np.asarray(best_x, dtype=float),
        residual=fit_residual(problem, best_x, sys),
        converged=best_ok,
        evaluations=evals,
        profiles=tuple(profiles),
    )


def read_measured(path: str | os.PathLike) -> list[tuple[int, float]]:
    """Read an ``n,magnetization`` table; blank lines and ``#`` comments are skipped."""
    with open(path, newline="") as fh:
        text = fh.read()
    return parse_measured(text)


def parse_measured(text: str) -> list[tuple[int, float]]:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ValueError("measured data is empty")
    reader = csv.reader(io.StringIO("\n".join(lines)))
    header = [h.strip() for h in next(reader)]
    if header != ["n", "magnetization"]:
        raise ValueError(f"expected header 'n,magnetization', got {','.join(header)!r}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != 2:
            raise ValueError(f"data row {lineno}: expected 2 fields, got {len(row)}")
        n = float(row[0])
        if n != int(n):
            raise ValueError(f"data row {lineno}: iteration index must be an integer")
        out.append((int(n), float(row[1])))
    return out


def noisy_trace(trace: Sequence[float], rel_noise: float, seed: int) -> np.ndarray:
    """Multiply every point after the first by ``1 + rel_noise * N(0, 1)``."""
    rng = np.random.default_rng(seed)
    out = np.array(trace, dtype=float)
    out[1:] *= 1.0 + rel_noise * rng.standard_normal(out.size - 1)
    return out
