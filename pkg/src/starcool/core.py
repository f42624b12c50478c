"""Symmetry-reduced population model of heat-bath algorithmic cooling.

A star register has one computation qubit coupled to ``N`` equivalent reset
qubits.  Its ``2**(N+1)`` levels collapse onto two subspaces, ``S0`` and
``S1`` (computation qubit in ``|0>`` or ``|1>``), each indexed by ``j`` = the
number of reset qubits in ``|1>``, with binomial degeneracy ``C(N, j)``.
Populations are stored per level (not degeneracy-expanded) and measured in
units where the equilibrium intra-subspace gap is ``gamma`` and the
inter-subspace gap is 1.

One HBAC iteration is an AC swap followed by a heat-bath delay, during which
the fast reset-qubit relaxation and the slow computation-qubit relaxation are
applied one after the other over the same delay.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.constants import hbar, k as k_B
from scipy.special import comb

__all__ = [
    "ModelValidityWarning",
    "StarSystem",
    "ThermalConfig",
    "StarState",
    "SwapProfile",
    "HbacSchedule",
    "CoolingTrace",
    "binomial_weights",
    "equilibrium_state",
    "magnetization",
    "spin_temperature",
    "exact_spin_temperature",
    "swap_profile_from_m",
    "apply_ac",
    "relax_intra",
    "relax_inter",
    "hbac_iterate",
    "magnetization_series",
    "run_schedule",
    "steady_state",
    "NoUniqueFixedPointError",
]


class ModelValidityWarning(UserWarning):
    """Parameters are outside the regime where the reduced model is justified."""


class NoUniqueFixedPointError(ValueError):
    """The iteration map has more than one fixed point for a given total population."""


@lru_cache(maxsize=None)
def _weights(n: int) -> np.ndarray:
    w = comb(n, np.arange(n + 1), exact=False)
    w.setflags(write=False)
    return w


def binomial_weights(n_reset: int) -> np.ndarray:
    """Return the level degeneracies ``C(N, j)`` for ``j = 0..N`` as floats."""
    return _weights(int(n_reset))


@dataclass(frozen=True)
class StarSystem:
    """Static description of a star register.

    Attributes
    ----------
    n_reset : int
        Number of reset qubits ``N``.
    gamma : float
        Gyromagnetic ratio quotient ``gamma_R / gamma_C``.
    t1_comp, t1_reset : float
        Longitudinal relaxation times of the computation and reset qubits in
        seconds.  ``math.inf`` is accepted and means no relaxation.
    j_rc : float
        Reset/computation scalar coupling in Hz.
    temperature : float
        Ambient (lattice) temperature in Kelvin.
    """

    n_reset: int
    gamma: float
    t1_comp: float
    t1_reset: float
    j_rc: float = 0.0
    temperature: float = 298.0

    def __post_init__(self):
        if int(self.n_reset) != self.n_reset or self.n_reset < 1:
            raise ValueError(f"n_reset must be a positive integer, got {self.n_reset!r}")
        object.__setattr__(self, "n_reset", int(self.n_reset))
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma!r}")
        if self.gamma < 1:
            warnings.warn(
                f"gamma={self.gamma} < 1: reset qubits are less polarized than the "
                "computation qubit",
                ModelValidityWarning,
                stacklevel=3,
            )
        if not (self.t1_comp > 0 and self.t1_reset > 0):
            raise ValueError("relaxation times must be positive")
        if self.j_rc < 0:
            raise ValueError("j_rc must be non-negative")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not self.t1_reset < self.t1_comp:
            warnings.warn(
                f"t1_reset={self.t1_reset} s is not shorter than t1_comp={self.t1_comp} s; "
                "the time-scale separation assumed by the model does not hold",
                ModelValidityWarning,
                stacklevel=3,
            )


@dataclass(frozen=True)
class ThermalConfig:
    """Thermal state of a bare computation qubit at high temperature.

    ``omega_comp`` is the magnitude of the Larmor angular frequency (rad/s);
    with this sign convention the ground state ``|0>`` is the more populated one.
    """

    omega_comp: float
    temperature: float = 298.0

    hbar: float = field(default=hbar, init=False)
    k: float = field(default=k_B, init=False)

    @property
    def epsilon(self) -> float:
        """Purity ``hbar * omega / (2 k T)``."""
        return self.hbar * self.omega_comp / (2 * self.k * self.temperature)

    def populations(self) -> tuple[float, float]:
        """Exact Boltzmann populations ``(rho00, rho11)``."""
        x = self.hbar * self.omega_comp / (2 * self.k * self.temperature)
        # 1 / (1 + exp(-2x)) without overflow for either sign
        rho00 = 0.5 * (1.0 + math.tanh(x))
        return rho00, 1.0 - rho00


@dataclass(frozen=True, eq=False)
class StarState:
    """Per-level populations of ``S0`` and ``S1``.

    ``p0[j]`` and ``p1[j]`` are single-level populations; the degeneracy
    ``C(N, j)`` is applied only when totals are formed.  Arrays are copied and
    frozen, so states behave as values.
    """

    p0: np.ndarray
    p1: np.ndarray
    background: float = 0.0

    def __post_init__(self):
        p0 = np.array(self.p0, dtype=float)
        p1 = np.array(self.p1, dtype=float)
        if p0.ndim != 1 or p1.ndim != 1:
            raise ValueError("populations must be one-dimensional")
        if p0.shape != p1.shape:
            raise ValueError(f"length mismatch: p0 has {p0.size} levels, p1 has {p1.size}")
        if p0.size < 2:
            raise ValueError("a star register has at least two levels per subspace")
        p0.setflags(write=False)
        p1.setflags(write=False)
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)

    @property
    def n_reset(self) -> int:
        return self.p0.size - 1

    def totals(self) -> tuple[float, float]:
        """Degeneracy-weighted populations of ``S0`` and ``S1``."""
        w = binomial_weights(self.n_reset)
        return float(w @ self.p0), float(w @ self.p1)

    def stacked(self) -> np.ndarray:
        """Return the vector ``[p0; p1]`` of length ``2N + 2``."""
        return np.concatenate([self.p0, self.p1])

    @classmethod
    def from_stacked(cls, v, background: float = 0.0) -> "StarState":
        v = np.asarray(v, dtype=float)
        half = v.size // 2
        return cls(v[:half], v[half:], background)

    def shifted(self, c: float) -> "StarState":
        """Add ``c`` to every level population."""
        return StarState(self.p0 + c, self.p1 + c, self.background + c)

    def __eq__(self, other):
        if not isinstance(other, StarState):
            return NotImplemented
        return (
            np.array_equal(self.p0, other.p0)
            and np.array_equal(self.p1, other.p1)
            and self.background == other.background
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SwapProfile:
    """Swap factors ``eta[j]`` for the pairs ``(p0[j], p1[N - j])``."""

    eta: np.ndarray

    def __post_init__(self):
        eta = np.array(self.eta, dtype=float)
        if eta.ndim != 1 or eta.size < 2:
            raise ValueError("eta must be a vector of length N + 1 >= 2")
        if not np.all((eta >= 0) & (eta <= 1)):
            raise ValueError(f"swap factors must lie in [0, 1], got {eta}")
        eta.setflags(write=False)
        object.__setattr__(self, "eta", eta)

    @property
    def n_reset(self) -> int:
        return self.eta.size - 1

    def __eq__(self, other):
        if not isinstance(other, SwapProfile):
            return NotImplemented
        return np.array_equal(self.eta, other.eta)

    __hash__ = None


@dataclass(frozen=True)
class HbacSchedule:
    """Per-iteration swap profiles and heat-bath delays.

    Build the usual uniform schedule with :meth:`uniform`.
    """

    entries: tuple[tuple[SwapProfile, float], ...]

    def __post_init__(self):
        entries = tuple((p, float(t)) for p, t in self.entries)
        for profile, tau in entries:
            if not isinstance(profile, SwapProfile):
                raise TypeError("schedule entries must hold SwapProfile instances")
            if not tau >= 0:
                raise ValueError(f"heat-bath delay must be non-negative, got {tau}")
        sizes = {p.eta.size for p, _ in entries}
        if len(sizes) > 1:
            raise ValueError("all swap profiles in a schedule must have the same length")
        object.__setattr__(self, "entries", entries)

    @property
    def iterations(self) -> int:
        return len(self.entries)

    @classmethod
    def uniform(cls, profile: SwapProfile, tau_hb: float, iterations: int) -> "HbacSchedule":
        if int(iterations) != iterations or iterations < 0:
            raise ValueError(f"iterations must be a non-negative integer, got {iterations!r}")
        return cls(tuple((profile, tau_hb) for _ in range(int(iterations))))

    @classmethod
    def from_m(cls, n_reset: int, m: int | Sequence[int], tau_hb: float | Sequence[float],
               iterations: int | None = None) -> "HbacSchedule":
        """Ideal-swap schedule; ``m`` and ``tau_hb`` may be scalars or per-iteration lists."""
        ms = [m] if np.isscalar(m) else list(m)
        taus = [tau_hb] if np.isscalar(tau_hb) else list(tau_hb)
        if iterations is None:
            iterations = max(len(ms), len(taus))
        if len(ms) == 1:
            ms = ms * iterations
        if len(taus) == 1:
            taus = taus * iterations
        if len(ms) != iterations or len(taus) != iterations:
            raise ValueError("per-iteration lists must match the iteration count")
        return cls(tuple((swap_profile_from_m(n_reset, mi), ti) for mi, ti in zip(ms, taus)))


@dataclass(frozen=True, eq=False)
class CoolingTrace:
    """Magnetization and spin temperature after each iteration (row 0 = thermal)."""

    n: np.ndarray
    magnetization: np.ndarray
    spin_temperature: np.ndarray

    def rows(self) -> Iterable[tuple[int, float, float]]:
        for n, m, t in zip(self.n, self.magnetization, self.spin_temperature):
            yield int(n), float(m), float(t)

    def __len__(self):
        return self.n.size


def equilibrium_state(sys: StarSystem, background: float = 0.0) -> StarState:
    """Thermal-equilibrium populations ``p0[j] = b + 1 + gamma (N - j)``, ``p1 = p0 - 1``."""
    n = sys.n_reset
    p0 = background + 1.0 + sys.gamma * (n - np.arange(n + 1))
    return StarState(p0, p0 - 1.0, background)


def magnetization(state: StarState) -> float:
    """Relative computation-qubit magnetization, normalized so that equilibrium gives 1."""
    if state.p0.shape != state.p1.shape:
        raise ValueError("p0 and p1 must have the same length")
    n = state.n_reset
    w = binomial_weights(n)
    return float(w @ (state.p0 - state.p1)) / 2.0**n


def spin_temperature(m_rel: float, ambient: float) -> float:
    """High-temperature spin temperature ``ambient / m_rel``."""
    if not m_rel > 0:
        raise ValueError(f"unphysical magnetization {m_rel!r}: spin temperature requires M > 0")
    return ambient / m_rel


def exact_spin_temperature(rho00: float, rho11: float, omega0: float) -> float:
    """Invert the Boltzmann ratio ``rho11 / rho00 = exp(-hbar omega0 / (k T))``.

    ``omega0`` is the positive Larmor angular frequency, so a ground-state
    excess (``rho11 < rho00``) yields a positive temperature and population
    inversion a negative one.  Equal populations return ``math.inf``.
    """
    if not (rho00 > 0 and rho11 > 0):
        raise ValueError("populations must be positive")
    log_ratio = math.log(rho11 / rho00)
    if log_ratio == 0.0:
        return math.inf
    return -hbar * omega0 / (k_B * log_ratio)


def swap_profile_from_m(n_reset: int, m: int) -> SwapProfile:
    """Ideal profile: ``eta[j] = 1`` for ``j > N - m`` and 0 otherwise."""
    if int(m) != m or not 0 <= m <= n_reset:
        raise ValueError(f"m must be an integer in [0, {n_reset}], got {m!r}")
    j = np.arange(n_reset + 1)
    return SwapProfile((j > n_reset - m).astype(float))


def _check_profile(state: StarState, profile: SwapProfile):
    if profile.eta.size != state.p0.size:
        raise ValueError(
            f"profile has {profile.eta.size} entries, state has {state.p0.size} levels"
        )


def apply_ac(state: StarState, profile: SwapProfile, explicit: bool = False) -> StarState:
    """Algorithmic-cooling step.

    The default is the effective map: each pair ``(p0[j], p1[N-j])`` is mixed
    convexly by ``eta[j]`` and nothing else changes.  With ``explicit=True``
    ``S1`` is first reversed (``p1[j] <-> p1[N-j]``) and the pairs
    ``(p0[j], p1[j])`` are then mixed, so unswapped ``S1`` levels stay
    inverted.
    """
    _check_profile(state, profile)
    eta = profile.eta
    a = state.p0
    b = state.p1[::-1]
    new_p0 = (1 - eta) * a + eta * b
    new_b = (1 - eta) * b + eta * a
    if explicit:
        new_p1 = new_b
    else:
        new_p1 = new_b[::-1]
    return StarState(new_p0, new_p1, state.background)


def _decay(tau: float, t1: float) -> float:
    if tau < 0:
        raise ValueError(f"delay must be non-negative, got {tau}")
    return math.exp(-tau / t1)


def _relax_subspace(p: np.ndarray, decay: float, gamma: float) -> np.ndarray:
    n = p.size - 1
    w = binomial_weights(n)
    d = p[:-1] - p[1:]
    d = gamma + (d - gamma) * decay
    # p[j] = p[N] + sum_{i >= j} d[i]; p[N] fixed by the weighted total.
    tail = np.concatenate([np.cumsum(d[::-1])[::-1], [0.0]])
    p_last = (w @ p - w @ tail) / 2.0**n
    return p_last + tail


def relax_intra(state: StarState, tau: float, sys: StarSystem) -> StarState:
    """Reset-qubit relaxation within each subspace over a delay ``tau``.

    Adjacent gaps relax toward ``gamma`` with ``t1_reset`` while each
    subspace keeps its degeneracy-weighted total.
    """
    decay = _decay(tau, sys.t1_reset)
    if decay == 1.0:
        return state
    return StarState(
        _relax_subspace(state.p0, decay, sys.gamma),
        _relax_subspace(state.p1, decay, sys.gamma),
        state.background,
    )


def relax_inter(state: StarState, tau: float, sys: StarSystem) -> StarState:
    """Computation-qubit relaxation: ``p0[j] - p1[j]`` relaxes to 1, ``p0[j] + p1[j]`` is kept."""
    decay = _decay(tau, sys.t1_comp)
    if decay == 1.0:
        return state
    s = state.p0 + state.p1
    d = 1.0 + (state.p0 - state.p1 - 1.0) * decay
    return StarState((s + d) / 2, (s - d) / 2, state.background)


def hbac_iterate(state: StarState, profile: SwapProfile, tau_hb: float, sys: StarSystem,
                 explicit: bool = False) -> StarState:
    """One iteration: AC swap, then intra- and inter-subspace relaxation over ``tau_hb``."""
    state = apply_ac(state, profile, explicit=explicit)
    state = relax_intra(state, tau_hb, sys)
    return relax_inter(state, tau_hb, sys)


def magnetization_series(sys: StarSystem, schedule: HbacSchedule, background: float = 0.0,
                         explicit: bool = False) -> np.ndarray:
    """``M_n`` for ``n = 0..iterations`` without forming spin temperatures."""
    state = equilibrium_state(sys, background)
    mags = np.empty(schedule.iterations + 1)
    # row 0 is the normalization point; keep it exact
    mags[0] = 1.0
    for n, (profile, tau) in enumerate(schedule.entries, start=1):
        if profile.n_reset != sys.n_reset:
            raise ValueError("schedule profile does not match the register size")
        state = hbac_iterate(state, profile, tau, sys, explicit=explicit)
        mags[n] = magnetization(state)
    return mags


def run_schedule(sys: StarSystem, schedule: HbacSchedule, background: float = 0.0,
                 explicit: bool = False) -> CoolingTrace:
    """Iterate from thermal equilibrium and record ``M_n`` and ``T_n = T / M_n``.

    Raises ``ValueError`` if any iterate has ``M_n <= 0`` (over-inversion).
    """
    mags = magnetization_series(sys, schedule, background, explicit)
    temps = np.array([spin_temperature(m, sys.temperature) for m in mags])
    return CoolingTrace(np.arange(mags.size), mags, temps)


def _probe_affine(sys: StarSystem, profile: SwapProfile, tau_hb: float,
                  explicit: bool = False) -> tuple[np.ndarray, np.ndarray]:
    # every stage is affine, so A and c follow from 2N + 3 evaluations
    size = 2 * (sys.n_reset + 1)

    def step(v):
        s = StarState.from_stacked(v)
        return hbac_iterate(s, profile, tau_hb, sys, explicit=explicit).stacked()

    c = step(np.zeros(size))
    a = np.empty((size, size))
    for k in range(size):
        e = np.zeros(size)
        e[k] = 1.0
        a[:, k] = step(e) - c
    return a, c


def steady_state(sys: StarSystem, profile: SwapProfile, tau_hb: float,
                 background: float = 0.0, explicit: bool = False) -> tuple[StarState, float]:
    """Fixed point of repeated iterations with a fixed profile and delay.

    Every iteration conserves the total weighted population and commutes with
    a uniform shift, so ``I - A`` is always singular along the all-ones
    direction.  The fixed point is made unique by pinning the total to that of
    the equilibrium state with the given background; any further degeneracy
    raises :class:`NoUniqueFixedPointError`.
    """
    a, c = _probe_affine(sys, profile, tau_hb, explicit=explicit)
    size = a.shape[0]
    w = np.concatenate([binomial_weights(sys.n_reset)] * 2)
    total = float(w @ equilibrium_state(sys, background).stacked())
    lhs = np.vstack([np.eye(size) - a, w[None, :] / 2.0**sys.n_reset])
    rhs = np.concatenate([c, [total / 2.0**sys.n_reset]])
    sv = np.linalg.svd(lhs, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise NoUniqueFixedPointError(
            "iteration map has a degenerate fixed-point set (e.g. no swapping with t1_comp = inf)"
        )
    v, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    state = StarState.from_stacked(v, background)
    return state, magnetization(state)
