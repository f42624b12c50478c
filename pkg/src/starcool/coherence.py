"""Combination-coherence observables under fully correlated dephasing.

A ``q``-quantum combination coherence of a star register acquires ``q``
times the phase of a single-quantum coherence when every spin sees the same
frequency fluctuation.  The fluctuation is modeled as an Ornstein-Uhlenbeck
process ``x(t)`` (rms ``sigma`` rad/s, correlation time ``tau_c``) and the
phase is its integral, so the coherence magnitude is
``<cos(q phi(t))> = exp(-q**2 var(phi(t)) / 2)`` with

    var(phi(t)) = 2 sigma**2 tau_c**2 (t / tau_c - 1 + exp(-t / tau_c)).

For ``t >> tau_c`` this decays exponentially at ``q**2 sigma**2 tau_c``.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

AMPLITUDE_FLOOR = 0.05
TRAJECTORY_BLOCK = 512
OUTLIER_THRESHOLD = 4.0
OUTLIER_RELATIVE = 0.05


def line_position(q: int, j_rc: float) -> float:
    """Offset (Hz) of the ``q``-quantum combination line from the central transition."""
    if int(q) != q or q < 1:
        raise ValueError(f"coherence order must be an integer >= 1, got {q!r}")
    return (q - 1) * j_rc / 2


@dataclass(frozen=True)
class NoiseModel:
    """Fully correlated Gaussian (Ornstein-Uhlenbeck) frequency noise."""

    rms: float
    correlation_time: float
    trajectories: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.rms < 0:
            raise ValueError("rms amplitude must be non-negative")
        if not self.correlation_time > 0:
            raise ValueError("correlation time must be positive")
        if int(self.trajectories) != self.trajectories or self.trajectories < 1:
            raise ValueError("trajectory count must be a positive integer")

    def phase_variance(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        tc = self.correlation_time
        x = t / tc
        # expm1 keeps x - 1 + exp(-x) accurate for x << 1
        return 2 * self.rms**2 * tc**2 * (x + np.expm1(-x))

    def analytic_envelope(self, q: int, t) -> np.ndarray:
        return np.exp(-(q**2) * self.phase_variance(t) / 2)

    def narrowing_rate(self, q: int = 1) -> float:
        """Motional-narrowing decay rate ``q**2 sigma**2 tau_c`` (1/s)."""
        return q**2 * self.rms**2 * self.correlation_time


@dataclass(frozen=True, eq=False)
class DecayCurve:
    times: np.ndarray
    amplitudes: np.ndarray
    q: int
    stderr: np.ndarray | None = None


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    residuals: np.ndarray
    outliers: tuple[int, ...]


def _check_times(times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 1:
        raise ValueError("times must be a non-empty 1-D grid")
    if times[0] != 0.0:
        raise ValueError("the time grid must start at t = 0")
    steps = np.diff(times)
    if np.any(steps <= 0):
        raise ValueError("times must be strictly increasing")
    if steps.size and not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        raise ValueError("times must be uniformly spaced")
    return times


def _increment_shape(x: float) -> float:
    # 2x - 3 + 4 exp(-x) - exp(-2x), which cancels to O(x**3) for small x
    if x < 1e-3:
        return x**3 * (2 / 3 - x / 2 + 7 * x * x / 30)
    return 2 * x + 4 * math.expm1(-x) - math.expm1(-2 * x)


def _phase_block(noise: NoiseModel, times: np.ndarray, count: int,
                 rng: np.random.Generator) -> np.ndarray:
    # exact joint update of (x, phi) over each step; no discretization error
    sigma, tc = noise.rms, noise.correlation_time
    phi = np.zeros((times.size, count))
    if times.size == 1 or sigma == 0:
        return phi
    dt = times[1] - times[0]
    a = math.exp(-dt / tc)
    var_x = sigma**2 * (1 - a * a)
    var_p = sigma**2 * tc**2 * _increment_shape(dt / tc)
    cov = sigma**2 * tc * (1 - a) ** 2
    chol = np.linalg.cholesky(np.array([[var_x, cov], [cov, var_p]]))
    x = sigma * rng.standard_normal(count)
    p = np.zeros(count)
    for i in range(1, times.size):
        z = rng.standard_normal((2, count))
        dx = chol[0, 0] * z[0]
        dp = chol[1, 0] * z[0] + chol[1, 1] * z[1]
        p = p + tc * (1 - a) * x + dp
        x = a * x + dx
        phi[i] = p
    return phi


def _phase_ensemble(noise: NoiseModel, times: np.ndarray, threads: int = 1):
    # fixed blocks with spawned seeds: identical output for any thread count
    n_blocks = -(-noise.trajectories // TRAJECTORY_BLOCK)
    seeds = np.random.SeedSequence(noise.seed).spawn(n_blocks)
    sizes = [min(TRAJECTORY_BLOCK, noise.trajectories - i * TRAJECTORY_BLOCK)
             for i in range(n_blocks)]

    def job(i):
        return _phase_block(noise, times, sizes[i], np.random.default_rng(seeds[i]))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(job, range(n_blocks)))
    else:
        blocks = [job(i) for i in range(n_blocks)]
    return np.concatenate(blocks, axis=1)


def simulate_decays(qs: Sequence[int], noise: NoiseModel, times,
                    threads: int = 1) -> dict[int, DecayCurve]:
    """Monte-Carlo curves for several orders driven by one shared phase ensemble."""
    times = _check_times(times)
    for q in qs:
        if int(q) != q or q < 1:
            raise ValueError(f"coherence order must be an integer >= 1, got {q!r}")
    phi = _phase_ensemble(noise, times, threads)
    out = {}
    for q in qs:
        c = np.cos(int(q) * phi)
        amp = c.mean(axis=1)
        amp[0] = 1.0
        se = c.std(axis=1, ddof=1) / math.sqrt(c.shape[1]) if c.shape[1] > 1 else np.zeros(
            times.size)
        out[int(q)] = DecayCurve(times, amp, int(q), se)
    return out


def simulate_decay(q: int, noise: NoiseModel, times, threads: int = 1) -> DecayCurve:
    """Ensemble average of ``cos(q phi(t))``; deterministic given ``noise.seed``."""
    return simulate_decays([q], noise, times, threads)[int(q)]


def extract_rate(curve: DecayCurve, floor: float = AMPLITUDE_FLOOR) -> tuple[float, float]:
    """Decay rate and its standard error from OLS of ``ln(amplitude)`` against time.

    Only points with amplitude above ``floor`` take part.
    """
    t = np.asarray(curve.times, dtype=float)
    amp = np.asarray(curve.amplitudes, dtype=float)
    keep = amp > floor
    t, y = t[keep], np.log(amp[keep])
    if t.size < 3:
        raise ValueError(f"need at least 3 points above amplitude {floor}, got {t.size}")
    x = t - t.mean()
    sxx = x @ x
    slope = (x @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * x
    dof = t.size - 2
    se = math.sqrt((resid @ resid) / dof / sxx) if dof > 0 else 0.0
    rate = -slope
    return (0.0 if rate == 0 else float(rate)), float(se)


def fit_q2(rates: Sequence[tuple[int, float]]) -> RateFit:
    """Least-squares line of decay rate against ``q**2``.

    A point is flagged as an outlier when its externally studentized residual
    exceeds ``OUTLIER_THRESHOLD`` and it misses the line by more than
    ``OUTLIER_RELATIVE`` of the fitted value (needs at least 4 orders).  The
    second condition keeps small, smooth Monte-Carlo bias in an otherwise
    near-perfect fit from being reported.
    """
    qs = np.array([q for q, _ in rates], dtype=float)
    g = np.array([r for _, r in rates], dtype=float)
    if np.unique(qs).size < 3:
        raise ValueError("at least 3 distinct coherence orders are required")
    x = qs**2
    design = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, g, rcond=None)
    slope, intercept = (float(c) for c in coef)
    fitted = design @ coef
    resid = g - fitted
    ss_tot = float(np.sum((g - g.mean()) ** 2))
    ss_res = float(resid @ resid)
    r2 = 1.0 if ss_tot == 0 else min(max(1.0 - ss_res / ss_tot, 0.0), 1.0)

    outliers = []
    n = x.size
    if n >= 4:
        hat = design @ np.linalg.pinv(design)
        lev = np.diag(hat)
        for i in range(n):
            dof = n - 3
            s2_i = (ss_res - resid[i] ** 2 / (1 - lev[i])) / dof
            # a perfect leave-one-out fit leaves s2_i at rounding level
            s_i = math.sqrt(max(s2_i, 0.0)) + 1e-12 * (abs(g).max() + 1e-300)
            score = abs(resid[i]) / (s_i * math.sqrt(1 - lev[i]))
            if score > OUTLIER_THRESHOLD and abs(resid[i]) > OUTLIER_RELATIVE * abs(fitted[i]):
                outliers.append(i)
    return RateFit(slope, intercept, r2, resid, tuple(outliers))


def decay_window(noise: NoiseModel, q: int, points: int = 60, depth: float = 2.0) -> np.ndarray:
    """Uniform grid over which the expected envelope falls to ``exp(-depth)``."""
    rate = noise.narrowing_rate(q)
    if rate == 0:
        raise ValueError("zero noise gives no decay window")
    t_end = depth / rate + noise.correlation_time
    return np.linspace(0.0, t_end, points)


def write_curve(curve: DecayCurve, path: str | os.PathLike, comment: str | None = None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "amplitude"])
        for t, a in zip(curve.times, curve.amplitudes):
            w.writerow([repr(float(t)), repr(float(a))])


def write_rates(rates: Sequence[tuple[int, float, float]], fit: RateFit | None,
                path: str | os.PathLike, comment: str | None = None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["q", "gamma_per_s", "stderr"])
        for q, g, se in rates:
            w.writerow([int(q), repr(float(g)), repr(float(se))])
        if fit is not None:
            fh.write(f"# fit gamma = slope * q^2 + intercept: slope={fit.slope!r} "
                     f"intercept={fit.intercept!r} r2={fit.r2!r} "
                     f"outliers={','.join(map(str, fit.outliers)) or 'none'}\n")
