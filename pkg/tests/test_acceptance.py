"""Acceptance criteria, one test and one printed PASS/FAIL line each.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary section at
the end of the pytest output lists every criterion.
"""

import math
import pathlib
import time
import warnings

import numpy as np
import pytest

from conftest import record
from starcool.cli import main
from starcool.coherence import NoiseModel, decay_window, extract_rate, fit_q2, line_position
from starcool.coherence import simulate_decays
from starcool.core import (
    HbacSchedule,
    StarState,
    StarSystem,
    SwapProfile,
    equilibrium_state,
    hbac_iterate,
    magnetization_series,
    relax_intra,
    spin_temperature,
    steady_state,
    swap_profile_from_m,
)
from starcool.oracle import build_affine, dense_intra_solve
from starcool.pulse import BandSpec, EnsembleSpec, OptimizerConfig, Pulse, band_deviation
from starcool.pulse import design_pulse, fidelity, gradient
from starcool.sweeps import (
    EtaFitProblem,
    SweepSpec,
    fit_eta,
    grid_sweep,
    optimize_axis,
    ttss_system,
    two_level_profile,
)

CONFIGS = pathlib.Path(__file__).resolve().parents[1] / "configs"
ORACLE_SEED = 12345
GRADIENT_SEED = 42


def test_temperature_mapping():
    t1, t2 = spin_temperature(10.4, 298), spin_temperature(24.1, 298)
    ok = abs(t1 - 28.7) <= 0.1 and abs(t2 - 12.4) <= 0.1
    assert record("temperature mapping", ok, f"T(10.4)={t1:.3f} K, T(24.1)={t2:.3f} K")


def test_closed_form_limit():
    # T1R = 1 s << tau_hb = 50 s << T1C = inf
    sys = StarSystem(2, 1.0, math.inf, 1.0)
    prof = swap_profile_from_m(2, 1)
    mags = magnetization_series(sys, HbacSchedule.uniform(prof, 50.0, 15))
    n = np.arange(16)
    dev = float(np.max(np.abs(mags - (2 - 2.0**-n))))
    _, m_inf = steady_state(sys, prof, 50.0)
    ok = dev <= 1e-9 and abs(m_inf - 2) <= 1e-9
    assert record("closed-form limit M_n = 2 - 2^-n and M_inf = 2", ok,
                  f"max |dM_n| = {dev:.2e}, |M_inf - 2| = {abs(m_inf - 2):.2e}")


def test_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(ORACLE_SEED)
    traj_dev = intra_dev = 0.0
    for n in range(2, 13):
        for _ in range(20):
            sys = StarSystem(n, float(rng.uniform(1, 6)), float(rng.uniform(20, 500)),
                             float(rng.uniform(0.5, 5)))
            prof = SwapProfile(rng.random(n + 1))
            tau = float(rng.uniform(0, 20))
            aff = build_affine(sys, prof, tau)
            state = equilibrium_state(sys)
            v0 = state.stacked()
            for k in range(1, 16):
                state = hbac_iterate(state, prof, tau, sys)
                traj_dev = max(traj_dev, float(np.max(np.abs(state.stacked() - aff.power(k)(v0)))))
            p = rng.uniform(0, 10 * n, n + 1)
            closed = relax_intra(StarState(p, p), tau, sys).p0
            intra_dev = max(intra_dev, float(np.max(np.abs(closed - dense_intra_solve(p, tau, sys)))))
    elapsed = time.perf_counter() - start
    ok = traj_dev <= 1e-10 and intra_dev <= 1e-12 and elapsed < 10
    assert record("oracle equivalence N=2..12, 20 cases, 15 iterations", ok,
                  f"trajectory {traj_dev:.1e}, intra {intra_dev:.1e}, {elapsed:.1f} s")


def test_landscape_properties():
    start = time.perf_counter()
    table = dict(grid_sweep(SweepSpec("n_reset", tuple(range(4, 27)))).rows())
    odd_ok = all(table[n] > table[n - 1] and table[n] > table[n + 1] for n in range(5, 26, 2))
    m_best, _ = optimize_axis(SweepSpec("m", tuple(range(0, 19))))
    m_ok = m_best < 36 // 2
    taus = tuple(np.geomspace(0.3, 300, 25))
    mags = grid_sweep(SweepSpec("tau_hb", taus)).magnetization
    i = int(np.argmax(mags))
    tau_ok = 0 < i < len(taus) - 1
    elapsed = time.perf_counter() - start
    ok = odd_ok and m_ok and tau_ok and elapsed < 60
    assert record("landscape: odd N > even N, m* < floor(N/2), interior tau optimum", ok,
                  f"(a) {odd_ok}, (b) m*={m_best}, (c) tau*={taus[i]:.2f} s, {elapsed:.1f} s")


def test_eta_round_trip():
    start = time.perf_counter()
    truth = (0.08, 0.87)
    sys = ttss_system()
    data = magnetization_series(sys, HbacSchedule.uniform(two_level_profile(36, 15, *truth),
                                                          9.5, 15))
    problem = EtaFitProblem(tuple(enumerate(data)),
                            HbacSchedule.uniform(two_level_profile(36, 15), 9.5, 15))
    fit = fit_eta(problem, sys)
    rmse = math.sqrt(float(np.mean((fit.params - np.array(truth)) ** 2)))
    elapsed = time.perf_counter() - start
    ok = rmse <= 0.02 and fit.residual < 1e-8 and elapsed < 30
    assert record("eta round trip", ok,
                  f"RMSE {rmse:.1e}, residual {fit.residual:.1e}, {elapsed:.1f} s")


def test_pulse_design():
    start = time.perf_counter()
    ens = EnsembleSpec()
    single = BandSpec(((2.5, 50.0, "invert"), (-50.0, -2.5, "preserve")), 2.5)
    double = BandSpec(((-50.0, -27.5, "preserve"), (-22.5, -2.5, "invert"),
                       (2.5, 22.5, "preserve"), (27.5, 50.0, "invert")), 2.5)
    cfg = OptimizerConfig(max_iterations=500, seed=0)

    # gradient against central differences with step 1e-6 of the control scale
    rng = np.random.default_rng(GRADIENT_SEED)
    scale = 10.0
    pulse = Pulse.from_xy(scale * rng.standard_normal(30), scale * rng.standard_normal(30),
                          0.2 / 30)
    g = gradient(pulse, single, ens)
    h = 1e-6 * scale
    fd = np.empty_like(g)
    for c in range(2):
        for k in range(pulse.segments):
            val = []
            for sgn in (1, -1):
                u = [pulse.ux.copy(), pulse.uy.copy()]
                u[c][k] += sgn * h
                val.append(fidelity(Pulse.from_xy(u[0], u[1], pulse.segment_duration), single, ens))
            fd[k, c] = (val[0] - val[1]) / (2 * h)
    grad_err = float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3 * np.abs(fd).max())))

    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)
        res1 = design_pulse(single, ens, 300, 0.2, cfg)
        res2 = design_pulse(double, ens, 300, 0.2, cfg)
    dev = band_deviation(res1.pulse, single, ens)
    worst = max(dev.values())
    elapsed = time.perf_counter() - start
    ok = (res1.fidelity >= 0.98 and worst <= 0.05 and grad_err <= 1e-5
          and res2.fidelity >= 0.97 and elapsed <= 300)
    assert record("pulse design single >= 0.98, bands <= 0.05, gradient 1e-5, double >= 0.97",
                  ok, f"single {res1.fidelity:.4f}, worst band {worst:.4f}, "
                      f"gradient rel {grad_err:.1e}, double {res2.fidelity:.4f}, {elapsed:.0f} s")


def test_coherence_scaling():
    start = time.perf_counter()
    noise = NoiseModel(100.0, 1e-4, 10_000, seed=0)
    rates = {}
    for q in (1, 3, 5, 7, 9):
        curve = simulate_decays([q], noise, decay_window(noise, q))[q]
        rates[q] = extract_rate(curve)[0]
    fit = fit_q2(list(rates.items()))
    ratio = rates[3] / rates[1]
    elapsed = time.perf_counter() - start
    ok = fit.r2 >= 0.99 and abs(ratio - 9) <= 0.9 and elapsed < 60
    assert record("coherence scaling R^2 >= 0.99, Gamma_3/Gamma_1 = 9 +- 10%", ok,
                  f"R^2 {fit.r2:.6f}, ratio {ratio:.3f}, {elapsed:.1f} s")


def test_line_positions():
    j = 6.5
    ok = all(line_position(q, j) == (q - 1) * j / 2 for q in range(1, 16))
    ok &= line_position(15, j) == 7 * j
    assert record("line positions (q-1) J / 2 for q = 1..15", ok)


DETERMINISM = [
    ("simulate", "cooling_curve.cfg", []),
    ("steady-state", "cooling_curve.cfg", []),
    ("sweep", "m_sweep.cfg", []),
    ("fit-eta", "fit_roundtrip.cfg", ["--data", str(CONFIGS / "data" / "roundtrip_trace.csv")]),
    ("coherence", "coherence.cfg", []),
    ("design-pulse", None, []),
]


@pytest.mark.filterwarnings("ignore:pulse design plateaued")
def test_cli_determinism(tmp_path):
    quick_pulse = tmp_path / "pulse.cfg"
    quick_pulse.write_text("[pulse]\nsegments = 60\nmax_iterations = 10\n")
    same = []
    for command, name, extra in DETERMINISM:
        cfg = str(CONFIGS / name) if name else str(quick_pulse)
        blobs = []
        for rep in range(2):
            out = tmp_path / f"{command}-{rep}.csv"
            assert main([command, cfg, "-o", str(out), "-q", "--threads", "2", *extra]) == 0
            blobs.append(out.read_bytes())
        same.append(blobs[0] == blobs[1])
    ok = all(same)
    detail = ", ".join(f"{c}={'same' if s else 'DIFF'}" for (c, _, _), s in zip(DETERMINISM, same))
    assert record("CLI determinism (byte-identical reruns)", ok, detail)
