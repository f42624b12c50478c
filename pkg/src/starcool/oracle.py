"""Brute-force cross-checks for the population model.

Everything here is assembled from explicit matrices and dense solves so that
it shares no code path with the closed forms in :mod:`starcool.core`.
Sizes are capped at ``N <= 40``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import comb

from .core import StarState, StarSystem, SwapProfile, hbac_iterate

MAX_ORACLE_N = 40


def _check_size(n: int):
    if n > MAX_ORACLE_N:
        raise ValueError(f"oracle is limited to N <= {MAX_ORACLE_N}, got {n}")


def _degeneracies(n: int) -> np.ndarray:
    return np.array([math.comb(n, j) for j in range(n + 1)], dtype=float)


@dataclass(frozen=True)
class AffineIteration:
    """One HBAC iteration written as ``v -> matrix @ v + offset`` on ``[p0; p1]``."""

    matrix: np.ndarray
    offset: np.ndarray

    def __call__(self, v):
        return self.matrix @ np.asarray(v, dtype=float) + self.offset

    def iterate(self, v, n: int) -> np.ndarray:
        """Return the trajectory ``v, f(v), ..., f^n(v)`` as rows."""
        out = [np.asarray(v, dtype=float)]
        for _ in range(n):
            out.append(self(out[-1]))
        return np.array(out)

    def power(self, n: int) -> "AffineIteration":
        """The ``n``-fold composition, via homogeneous-coordinate matrix powers."""
        size = self.offset.size
        h = np.eye(size + 1)
        h[:size, :size] = self.matrix
        h[:size, size] = self.offset
        hn = np.linalg.matrix_power(h, n)
        return AffineIteration(hn[:size, :size], hn[:size, size])

    def fixed_point(self) -> np.ndarray:
        """Minimum-norm solution of ``(I - A) v = c`` through the pseudo-inverse."""
        size = self.offset.size
        return np.linalg.pinv(np.eye(size) - self.matrix) @ self.offset


def mixing_matrix_swap(profile: SwapProfile, explicit: bool = False) -> np.ndarray:
    """Explicit ``(2N+2) x (2N+2)`` matrix of the AC swap acting on ``[p0; p1]``.

    Each pair ``(p0[j], p1[N-j])`` gets the block ``[[1-eta, eta], [eta, 1-eta]]``.
    With ``explicit=True`` the mixed ``S1`` value lands in slot ``p1[j]`` (full
    ``S1`` reversal followed by the swap).
    """
    eta = profile.eta
    n = eta.size - 1
    size = n + 1
    mat = np.zeros((2 * size, 2 * size))
    for j in range(size):
        col0, col1 = j, size + n - j
        row1 = size + j if explicit else col1
        mat[j, col0] = 1 - eta[j]
        mat[j, col1] = eta[j]
        mat[row1, col0] = eta[j]
        mat[row1, col1] = 1 - eta[j]
    return mat


def _intra_system(n: int, decay: float, gamma: float):
    # rows 0..N-1: p[j] - p[j+1] = gamma + (d_j(0) - gamma) * decay
    # row N:       sum_j C(N,j) p[j] = sum_j C(N,j) p_j(0), scaled by 2**-N
    # (unscaled binomial rows make the elimination ill-conditioned for large N)
    size = n + 1
    w = _degeneracies(n) / 2.0**n
    diff = np.zeros((n, size))
    for j in range(n):
        diff[j, j] = 1.0
        diff[j, j + 1] = -1.0
    lhs = np.vstack([diff, w])
    rhs_lin = np.vstack([decay * diff, w])
    rhs_off = np.concatenate([np.full(n, gamma * (1 - decay)), [0.0]])
    return lhs, rhs_lin, rhs_off


def dense_intra_solve(p, tau: float, sys: StarSystem) -> np.ndarray:
    """Solve the ``N + 1`` relaxation equations of one subspace by elimination."""
    p = np.asarray(p, dtype=float)
    n = p.size - 1
    _check_size(n)
    if tau < 0:
        raise ValueError("tau must be non-negative")
    decay = math.exp(-tau / sys.t1_reset)
    lhs, rhs_lin, rhs_off = _intra_system(n, decay, sys.gamma)
    try:
        return np.linalg.solve(lhs, rhs_lin @ p + rhs_off)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - binomial rows keep it regular
        raise RuntimeError("intra-subspace system is singular") from exc


def _symbolic_affine(sys: StarSystem, profile: SwapProfile, tau_hb: float, explicit: bool):
    n = sys.n_reset
    size = n + 1
    swap = mixing_matrix_swap(profile, explicit=explicit)

    decay_r = math.exp(-tau_hb / sys.t1_reset)
    lhs, rhs_lin, rhs_off = _intra_system(n, decay_r, sys.gamma)
    block = np.linalg.solve(lhs, rhs_lin)
    block_c = np.linalg.solve(lhs, rhs_off)
    intra = np.zeros((2 * size, 2 * size))
    intra[:size, :size] = block
    intra[size:, size:] = block
    intra_c = np.concatenate([block_c, block_c])

    decay_c = math.exp(-tau_hb / sys.t1_comp)
    # per level: [p0 - p1; p0 + p1]' = [[e, -e], [1, 1]] [p0; p1] + [1 - e; 0]
    to_ds = np.array([[1.0, -1.0], [1.0, 1.0]])
    step = np.linalg.solve(to_ds, np.array([[decay_c, -decay_c], [1.0, 1.0]]))
    step_c = np.linalg.solve(to_ds, np.array([1 - decay_c, 0.0]))
    inter = np.kron(step, np.eye(size))
    inter_c = np.kron(step_c, np.ones(size))

    return inter @ intra @ swap, inter @ intra_c + inter_c


def _probed_affine(sys: StarSystem, profile: SwapProfile, tau_hb: float, explicit: bool):
    size = 2 * (sys.n_reset + 1)

    def f(v):
        return hbac_iterate(StarState.from_stacked(v), profile, tau_hb, sys, explicit).stacked()

    c = f(np.zeros(size))
    a = np.column_stack([f(e) - c for e in np.eye(size)])
    return a, c


def build_affine(sys: StarSystem, profile: SwapProfile, tau_hb: float,
                 method: str = "symbolic", explicit: bool = False,
                 check: bool = False) -> AffineIteration:
    """Affine representation of one iteration.

    ``method`` is ``"symbolic"`` (explicit matrices and dense solves) or
    ``"probe"`` (evaluate :func:`hbac_iterate` on basis vectors).  With
    ``check=True`` both are built and required to agree to 1e-10.
    """
    _check_size(sys.n_reset)
    if profile.eta.size != sys.n_reset + 1:
        raise ValueError("profile length does not match the register size")
    builders = {"symbolic": _symbolic_affine, "probe": _probed_affine}
    if method not in builders:
        raise ValueError(f"unknown method {method!r}")
    a, c = builders[method](sys, profile, tau_hb, explicit)
    if check:
        other = "probe" if method == "symbolic" else "symbolic"
        a2, c2 = builders[other](sys, profile, tau_hb, explicit)
        dev = max(np.max(np.abs(a - a2)), np.max(np.abs(c - c2)))
        if dev > 1e-10:
            raise AssertionError(f"symbolic and probed affine maps differ by {dev:.3e}")
    return AffineIteration(a, c)


def oracle_magnetization(v) -> float:
    """Magnetization of a stacked population vector, by explicit enumeration."""
    v = np.asarray(v, dtype=float)
    n = v.size // 2 - 1
    total = 0.0
    for j in range(n + 1):
        total += comb(n, j, exact=True) * (v[j] - v[n + 1 + j])
    return total / 2**n
