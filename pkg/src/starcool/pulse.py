"""Ensemble-robust design of band-selective inversion pulses.

Each ensemble member is an uncoupled spin-1/2 with resonance offset ``df``
(Hz) that sees the control field scaled by ``s``. In the rotating frame,
segment ``k`` applies ``H = 2 pi (s ux_k Ix + s uy_k Iy + df Iz)`` for one
segment duration. That step is an exact SU(2) rotation, so the state norm is
preserved to rounding.  The objective is the mean inversion or preservation
of ``Mz`` over the ensemble members that lie inside the target bands.
Gradients come from forward/backward propagation, GRAPE-style.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

INVERT = "invert"
PRESERVE = "preserve"

# members are split into fixed-size blocks so results do not depend on threads
BLOCK = 64


@dataclass(frozen=True)
class Band:
    low: float
    high: float
    target: str

    def __post_init__(self):
        if self.target not in (INVERT, PRESERVE):
            raise ValueError(f"band target must be 'invert' or 'preserve', got {self.target!r}")
        if not self.low < self.high:
            raise ValueError(f"band edges must satisfy low < high, got [{self.low}, {self.high}]")


@dataclass(frozen=True)
class BandSpec:
    """Target bands plus an excluded transition margin at each inner band edge.

    Edges at the outer extent of all bands carry no margin.  The default
    margin is 5% of the total span.
    """

    bands: tuple[Band, ...]
    transition_margin: float | None = None

    def __post_init__(self):
        bands = tuple(b if isinstance(b, Band) else Band(*b) for b in self.bands)
        if not bands:
            raise ValueError("at least one band is required")
        bands = tuple(sorted(bands, key=lambda b: b.low))
        for a, b in zip(bands, bands[1:]):
            if b.low < a.high:
                raise ValueError(f"bands [{a.low}, {a.high}] and [{b.low}, {b.high}] overlap")
        margin = self.transition_margin
        if margin is None:
            margin = 0.05 * (bands[-1].high - bands[0].low)
        if margin < 0:
            raise ValueError("transition margin must be non-negative")
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "transition_margin", float(margin))
        for b in bands:
            lo, hi = self._effective(b)
            if not lo <= hi:
                raise ValueError(f"band [{b.low}, {b.high}] vanishes after removing margins")

    @property
    def span(self) -> tuple[float, float]:
        return self.bands[0].low, self.bands[-1].high

    def _effective(self, band: Band) -> tuple[float, float]:
        lo_edge, hi_edge = self.span
        m = self.transition_margin
        lo = band.low if band.low == lo_edge else band.low + m
        hi = band.high if band.high == hi_edge else band.high - m
        return lo, hi

    def effective_bands(self) -> list[tuple[float, float, str]]:
        return [(*self._effective(b), b.target) for b in self.bands]

    def min_gap(self) -> float:
        """Smallest distance between effective regions of adjacent bands (inf for one band)."""
        eff = self.effective_bands()
        gaps = [b[0] - a[1] for a, b in zip(eff, eff[1:])]
        return min(gaps) if gaps else math.inf

    def targets(self, offsets) -> np.ndarray:
        """Per-offset target sign: -1 invert, +1 preserve, 0 excluded (margin or gap).

        Offsets further than one margin from every band are rejected.
        """
        offsets = np.asarray(offsets, dtype=float)
        t = np.zeros(offsets.shape)
        covered = np.zeros(offsets.shape, dtype=bool)
        m = self.transition_margin
        for band, (lo, hi, target) in zip(self.bands, self.effective_bands()):
            inside = (offsets >= lo) & (offsets <= hi)
            t[inside] = -1.0 if target == INVERT else 1.0
            covered |= (offsets >= band.low - m) & (offsets <= band.high + m)
        if not np.all(covered):
            bad = offsets[~covered]
            raise ValueError(f"offsets {bad.tolist()} lie outside every band and margin")
        return t


@dataclass(frozen=True)
class EnsembleSpec:
    """Offsets (Hz) times RF scale factors; members are ordered scale-major."""

    offsets: tuple[float, ...] = tuple(np.linspace(-50.0, 50.0, 50).tolist())
    rf_scales: tuple[float, ...] = (0.8, 1.0, 1.2)

    def __post_init__(self):
        offsets = tuple(float(x) for x in self.offsets)
        scales = tuple(float(x) for x in self.rf_scales)
        if not offsets or not scales:
            raise ValueError("ensemble needs at least one offset and one RF scale")
        if any(s <= 0 for s in scales):
            raise ValueError("RF scales must be positive")
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "rf_scales", scales)

    def members(self) -> tuple[np.ndarray, np.ndarray]:
        df, s = np.meshgrid(self.offsets, self.rf_scales)
        return df.ravel(), s.ravel()


@dataclass(frozen=True, eq=False)
class Pulse:
    """Piecewise-constant pulse: per-segment amplitude (Hz) and phase (rad)."""

    amplitude: np.ndarray
    phase: np.ndarray
    segment_duration: float
    amplitude_cap: float = 1000.0

    def __post_init__(self):
        amp = np.array(self.amplitude, dtype=float).ravel()
        ph = np.array(self.phase, dtype=float).ravel()
        if amp.size < 1 or amp.shape != ph.shape:
            raise ValueError("amplitude and phase must be equal-length and non-empty")
        if np.any(amp < 0):
            raise ValueError("amplitudes must be non-negative")
        if np.any(amp > self.amplitude_cap * (1 + 1e-12)):
            raise ValueError(f"amplitude exceeds the {self.amplitude_cap} Hz cap")
        if not self.segment_duration > 0:
            raise ValueError("segment duration must be positive")
        for a in (amp, ph):
            a.setflags(write=False)
        object.__setattr__(self, "amplitude", amp)
        object.__setattr__(self, "phase", ph)

    @classmethod
    def from_xy(cls, ux, uy, segment_duration: float, amplitude_cap: float = 1000.0) -> "Pulse":
        ux = np.asarray(ux, dtype=float)
        uy = np.asarray(uy, dtype=float)
        amp = np.hypot(ux, uy)
        return cls(np.minimum(amp, amplitude_cap), np.arctan2(uy, ux), segment_duration,
                   amplitude_cap)

    @classmethod
    def zeros(cls, segments: int, duration: float, amplitude_cap: float = 1000.0) -> "Pulse":
        return cls(np.zeros(segments), np.zeros(segments), duration / segments, amplitude_cap)

    @property
    def segments(self) -> int:
        return self.amplitude.size

    @property
    def duration(self) -> float:
        return self.segments * self.segment_duration

    @property
    def ux(self) -> np.ndarray:
        return self.amplitude * np.cos(self.phase)

    @property
    def uy(self) -> np.ndarray:
        return self.amplitude * np.sin(self.phase)


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for :func:`design_pulse`.

    ``method="lbfgs"`` uses limited-memory quasi-Newton directions,
    ``"steepest"`` the raw gradient; both accept a step only if it passes an
    Armijo backtracking test, so fidelity never decreases.
    """

    max_iterations: int = 1000
    tolerance: float = 1e-10
    gradient_tolerance: float = 1e-9
    shrink: float = 0.5
    init_scale: float = 10.0
    seed: int = 0
    amplitude_cap: float = 1000.0
    method: str = "lbfgs"
    memory: int = 20
    patience: int = 10
    threads: int = 1

    def __post_init__(self):
        if self.max_iterations < 0 or self.tolerance <= 0 or self.gradient_tolerance <= 0:
            raise ValueError("iteration cap and tolerances must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("line-search shrink factor must be in (0, 1)")
        if self.init_scale < 0 or self.amplitude_cap <= 0:
            raise ValueError("control scales must be positive")
        if self.method not in ("lbfgs", "steepest"):
            raise ValueError(f"unknown method {self.method!r}")


# ------------------------------------------------------------------ propagation


def _rotations(ux, uy, dt, df, s):
    # v = pi dt (s ux, s uy, df) so that U = exp(-i v.sigma); shapes (members, segments)
    vx = math.pi * dt * s[:, None] * ux[None, :]
    vy = math.pi * dt * s[:, None] * uy[None, :]
    vz = np.broadcast_to(math.pi * dt * df[:, None], vx.shape)
    a = np.sqrt(vx * vx + vy * vy + vz * vz)
    small = a < 1e-4
    a2 = a * a
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(small, 1 - a2 / 6 + a2 * a2 / 120, np.sin(a) / np.where(small, 1, a))
        g = np.where(small, -1 / 3 + a2 / 30,
                     (a * np.cos(a) - np.sin(a)) / np.where(small, 1, a * a2))
    return vx, vy, vz, np.cos(a), f, g


def _propagate_block(ux, uy, dt, df, s, weights, want_grad):
    vx, vy, vz, ca, f, g = _rotations(ux, uy, dt, df, s)
    # U = [[alpha, beta], [-conj(beta), conj(alpha)]]
    alpha = ca - 1j * f * vz
    beta = -1j * f * (vx - 1j * vy)
    n_mem, n_seg = vx.shape
    psi0 = np.ones(n_mem, dtype=complex)
    psi1 = np.zeros(n_mem, dtype=complex)
    if want_grad:
        fwd0 = np.empty((n_seg + 1, n_mem), dtype=complex)
        fwd1 = np.empty((n_seg + 1, n_mem), dtype=complex)
        fwd0[0], fwd1[0] = psi0, psi1
    for k in range(n_seg):
        al, be = alpha[:, k], beta[:, k]
        psi0, psi1 = al * psi0 + be * psi1, -np.conj(be) * psi0 + np.conj(al) * psi1
        if want_grad:
            fwd0[k + 1], fwd1[k + 1] = psi0, psi1
    mz = (psi0 * np.conj(psi0)).real - (psi1 * np.conj(psi1)).real
    if not want_grad:
        return mz, None

    # chi_k = U_{k+1}^dag ... U_K^dag sigma_z psi_K
    chi0, chi1 = psi0.copy(), -psi1
    gx = np.empty((n_mem, n_seg))
    gy = np.empty((n_mem, n_seg))
    for k in range(n_seg - 1, -1, -1):
        p0, p1 = fwd0[k], fwd1[k]
        c0, c1 = np.conj(chi0), np.conj(chi1)
        ov = c0 * p0 + c1 * p1
        sx = c0 * p1 + c1 * p0
        sy = -1j * c0 * p1 + 1j * c1 * p0
        sz = c0 * p0 - c1 * p1
        wx, wy, wz = vx[:, k], vy[:, k], vz[:, k]
        fk, gk = f[:, k], g[:, k]
        vs = wx * sx + wy * sy + wz * sz
        # dU/dv_j = -f v_j I - i (g v_j (v.sigma) + f sigma_j)
        dx = -fk * wx * ov - 1j * (gk * wx * vs + fk * sx)
        dy = -fk * wy * ov - 1j * (gk * wy * vs + fk * sy)
        gx[:, k] = 2 * dx.real
        gy[:, k] = 2 * dy.real
        al, be = alpha[:, k], beta[:, k]
        # U^dag = [[conj(alpha), -beta], [conj(beta), alpha]]
        chi0, chi1 = np.conj(al) * chi0 - be * chi1, np.conj(be) * chi0 + al * chi1
    scale = (math.pi * dt * s * weights)[:, None]
    return mz, (gx * scale, gy * scale)


def _blocks(n: int):
    return [slice(i, min(i + BLOCK, n)) for i in range(0, n, BLOCK)]


def _run(ux, uy, dt, df, s, weights, want_grad, threads=1):
    blocks = _blocks(df.size)

    def job(sl):
        return _propagate_block(ux, uy, dt, df[sl], s[sl], weights[sl], want_grad)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, blocks))
    else:
        parts = [job(sl) for sl in blocks]
    mz = np.concatenate([p[0] for p in parts])
    if not want_grad:
        return mz, None
    gx = np.concatenate([p[1][0] for p in parts])
    gy = np.concatenate([p[1][1] for p in parts])
    return mz, (gx.sum(axis=0), gy.sum(axis=0))


def simulate_profile(pulse: Pulse, ensemble: EnsembleSpec, threads: int = 1) -> np.ndarray:
    """Final ``Mz`` for every member, starting from ``Mz = +1``.

    Returns an array of rows ``(offset_hz, rf_scale, mz)`` in member order.
    """
    df, s = ensemble.members()
    mz, _ = _run(pulse.ux, pulse.uy, pulse.segment_duration, df, s, np.zeros_like(df),
                 False, threads)
    return np.column_stack([df, s, mz])


def _weights(bands: BandSpec, ensemble: EnsembleSpec):
    df, s = ensemble.members()
    t = bands.targets(df)
    count = np.count_nonzero(t)
    if count == 0:
        raise ValueError("no ensemble member lies inside a target band")
    return df, s, t, count


def fidelity(pulse: Pulse, bands: BandSpec, ensemble: EnsembleSpec, threads: int = 1) -> float:
    """Mean of ``(1 + t Mz) / 2`` over in-band members (``t = -1`` invert, ``+1`` preserve)."""
    df, s, t, count = _weights(bands, ensemble)
    mz, _ = _run(pulse.ux, pulse.uy, pulse.segment_duration, df, s, t, False, threads)
    return float(np.sum((1 + t * mz)[t != 0] / 2) / count)


def _value_and_grad(ux, uy, dt, df, s, t, count, threads=1):
    w = t / (2 * count)
    mz, (gx, gy) = _run(ux, uy, dt, df, s, w, True, threads)
    value = float(np.sum((1 + t * mz)[t != 0] / 2) / count)
    return value, gx, gy


def gradient(pulse: Pulse, bands: BandSpec, ensemble: EnsembleSpec,
             threads: int = 1) -> np.ndarray:
    """Exact gradient of :func:`fidelity` w.r.t. ``(ux_k, uy_k)``; shape ``(segments, 2)``."""
    df, s, t, count = _weights(bands, ensemble)
    _, gx, gy = _value_and_grad(pulse.ux, pulse.uy, pulse.segment_duration, df, s, t, count,
                                threads)
    return np.column_stack([gx, gy])


def band_deviation(pulse: Pulse, bands: BandSpec, ensemble: EnsembleSpec) -> dict:
    """Mean ``|Mz - target|`` per ``(band index, rf_scale)`` over in-band offsets."""
    prof = simulate_profile(pulse, ensemble)
    out = {}
    for i, (lo, hi, target) in enumerate(bands.effective_bands()):
        goal = -1.0 if target == INVERT else 1.0
        for scale in ensemble.rf_scales:
            sel = (prof[:, 1] == scale) & (prof[:, 0] >= lo) & (prof[:, 0] <= hi)
            if np.any(sel):
                out[(i, scale)] = float(np.mean(np.abs(prof[sel, 2] - goal)))
    return out


# ------------------------------------------------------------------ optimizer


@dataclass
class DesignResult:
    pulse: Pulse
    fidelity: float
    log: list = field(default_factory=list)
    converged: bool = False


def _clip(x, k, cap):
    ux, uy = x[:k], x[k:]
    amp = np.hypot(ux, uy)
    factor = np.where(amp > cap, cap / np.where(amp > 0, amp, 1), 1.0)
    return np.concatenate([ux * factor, uy * factor])


def _lbfgs_direction(g, hist):
    q = g.copy()
    alphas = []
    for sk, yk, rho in reversed(hist):
        a = rho * (sk @ q)
        alphas.append(a)
        q -= a * yk
    if hist:
        sk, yk, _ = hist[-1]
        q *= (sk @ yk) / (yk @ yk)
    for (sk, yk, rho), a in zip(hist, reversed(alphas)):
        b = rho * (yk @ q)
        q += (a - b) * sk
    return q


def design_pulse(bands: BandSpec, ensemble: EnsembleSpec, segments: int = 300,
                 duration: float = 0.2, config: OptimizerConfig | None = None) -> DesignResult:
    """Maximize :func:`fidelity` by gradient ascent with backtracking line search.

    Starts from seeded Gaussian controls of standard deviation
    ``config.init_scale`` Hz (from zero when every band is ``preserve``, where
    the zero pulse is already optimal).  Stops when the gradient norm falls
    below ``gradient_tolerance``, when ``patience`` consecutive accepted steps
    each gain less than ``tolerance``, when the line search fails, or at
    ``max_iterations``.  The log holds ``(iteration, fidelity, gradient_norm,
    step)`` rows.
    """
    config = config or OptimizerConfig()
    if int(segments) != segments or segments < 1:
        raise ValueError("segments must be a positive integer")
    if not duration > 0:
        raise ValueError("duration must be positive")
    segments = int(segments)
    gap = bands.min_gap()
    if duration * gap < 2:
        warnings.warn(f"duration x smallest band gap = {duration * gap:.3g} < 2; "
                      "band edges may not be resolvable", RuntimeWarning, stacklevel=2)
    df, s, t, count = _weights(bands, ensemble)
    dt = duration / segments
    cap = config.amplitude_cap

    if np.all(t >= 0):
        x = np.zeros(2 * segments)
    else:
        rng = np.random.default_rng(config.seed)
        x = _clip(config.init_scale * rng.standard_normal(2 * segments), segments, cap)

    def evaluate(x):
        val, gx, gy = _value_and_grad(x[:segments], x[segments:], dt, df, s, t, count,
                                      config.threads)
        return val, np.concatenate([gx, gy])

    F, g = evaluate(x)
    log = [(0, F, float(np.linalg.norm(g)), 0.0)]
    hist: list = []
    stalls = 0
    converged = False
    c1 = 1e-4
    for it in range(1, config.max_iterations + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm < config.gradient_tolerance:
            converged = True
            break
        d = _lbfgs_direction(g, hist) if config.method == "lbfgs" else g.copy()
        if g @ d <= 0:
            hist.clear()
            d = g.copy()
        if not hist:
            # first or reset step: move the controls by about init_scale / 10
            d *= max(config.init_scale, 1.0) / (10 * np.max(np.abs(d)))
        step = 1.0
        accepted = False
        for _ in range(60):
            x_new = _clip(x + step * d, segments, cap)
            F_new, g_new = evaluate(x_new)
            if F_new >= F + c1 * (g @ (x_new - x)) and F_new >= F:
                accepted = True
                break
            step *= config.shrink
        if not accepted:
            if hist:
                hist.clear()
                continue
            converged = True
            break
        sk, yk = x_new - x, g_new - g
        # ascent: curvature condition is s.y < 0 for a maximization
        if sk @ yk < -1e-18:
            hist.append((sk, -yk, 1.0 / (sk @ -yk)))
            if len(hist) > config.memory:
                hist.pop(0)
        gain = F_new - F
        x, F, g = x_new, F_new, g_new
        log.append((it, F, float(np.linalg.norm(g)), step))
        stalls = stalls + 1 if gain < config.tolerance else 0
        if stalls >= config.patience:
            converged = True
            break

    pulse = Pulse.from_xy(x[:segments], x[segments:], dt, cap)
    if F < 0.9:
        warnings.warn(f"pulse design plateaued at fidelity {F:.4f} < 0.9; the band structure "
                      "may be infeasible for this duration", RuntimeWarning, stacklevel=2)
    return DesignResult(pulse, F, log, converged)


# ------------------------------------------------------------------ file formats

PULSE_HEADER = ["segment", "duration_s", "amplitude_hz", "phase_rad"]
PROFILE_HEADER = ["offset_hz", "rf_scale", "mz"]


def write_pulse(pulse: Pulse, path: str | os.PathLike, comment: str | None = None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PULSE_HEADER)
        for k in range(pulse.segments):
            w.writerow([k, repr(pulse.segment_duration), repr(float(pulse.amplitude[k])),
                        repr(float(pulse.phase[k]))])


def read_pulse(path: str | os.PathLike, amplitude_cap: float = 1000.0) -> Pulse:
    """Read a pulse table; segment durations must all be equal."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(ln for ln in fh if ln.strip() and not ln.startswith("#"))]
    if not rows or [h.strip() for h in rows[0]] != PULSE_HEADER:
        raise ValueError(f"expected header {','.join(PULSE_HEADER)}")
    data = np.array(rows[1:], dtype=float)
    if data.size == 0:
        raise ValueError("pulse file has no segments")
    if not np.array_equal(data[:, 0], np.arange(len(data))):
        raise ValueError("segment indices must run 0, 1, 2, ...")
    dts = data[:, 1]
    if not np.allclose(dts, dts[0], rtol=1e-12, atol=0):
        raise ValueError("segment durations must be uniform")
    return Pulse(data[:, 2], data[:, 3], float(dts[0]), amplitude_cap)


def write_profile(profile: np.ndarray, path: str | os.PathLike, comment: str | None = None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROFILE_HEADER)
        for df, s, mz in profile:
            w.writerow([repr(float(df)), repr(float(s)), repr(float(mz))])
