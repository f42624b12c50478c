import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from starcool.pulse import (
    Band,
    BandSpec,
    EnsembleSpec,
    OptimizerConfig,
    Pulse,
    _rotations,
    band_deviation,
    design_pulse,
    fidelity,
    gradient,
    read_pulse,
    simulate_profile,
    write_profile,
    write_pulse,
)

SINGLE = BandSpec(((2.5, 50.0, "invert"), (-50.0, -2.5, "preserve")), 2.5)
SMALL_ENSEMBLE = EnsembleSpec(tuple(np.linspace(-50, 50, 12)), (0.9, 1.1))


def random_pulse(seed, segments=40, duration=0.05, scale=30.0):
    rng = np.random.default_rng(seed)
    return Pulse.from_xy(scale * rng.standard_normal(segments),
                         scale * rng.standard_normal(segments), duration / segments)


def central_difference(pulse, bands, ens, h):
    ux, uy = pulse.ux.copy(), pulse.uy.copy()
    out = np.empty((pulse.segments, 2))
    for c, base in enumerate((ux, uy)):
        for k in range(pulse.segments):
            vals = []
            for sign in (1, -1):
                u = base.copy()
                u[k] += sign * h
                args = (u, uy) if c == 0 else (ux, u)
                vals.append(fidelity(Pulse.from_xy(*args, pulse.segment_duration), bands, ens))
            out[k, c] = (vals[0] - vals[1]) / (2 * h)
    return out


# ------------------------------------------------------------ band specs


def test_band_validation():
    with pytest.raises(ValueError):
        Band(1.0, 1.0, "invert")
    with pytest.raises(ValueError):
        Band(0.0, 1.0, "flip")
    with pytest.raises(ValueError):
        BandSpec(())
    with pytest.raises(ValueError):
        BandSpec(((0, 10, "invert"), (5, 20, "preserve")))
    with pytest.raises(ValueError):
        BandSpec(((0, 10, "invert"),), -1.0)
    with pytest.raises(ValueError, match="vanishes"):
        BandSpec(((0, 1, "invert"), (1, 2, "preserve"), (2, 3, "invert")), 0.6)


def test_default_margin_and_effective_bands():
    spec = BandSpec(((0.0, 50.0, "invert"), (-50.0, 0.0, "preserve")))
    assert spec.transition_margin == pytest.approx(5.0)
    assert spec.effective_bands() == [(-50.0, -5.0, "preserve"), (5.0, 50.0, "invert")]
    assert spec.min_gap() == pytest.approx(10.0)
    assert BandSpec(((0, 1, "invert"),)).min_gap() == math.inf


def test_targets():
    # effective bands are [-50, -5] and [5, 50]; 2.5 Hz margins at the inner edges
    t = SINGLE.targets([-50, -6, -3, 0, 4, 6, 50])
    np.testing.assert_array_equal(t, [1, 1, 0, 0, 0, -1, -1])
    with pytest.raises(ValueError, match="outside"):
        SINGLE.targets([60.0])


def test_ensemble_members_scale_major():
    df, s = EnsembleSpec((1.0, 2.0), (0.5, 1.5)).members()
    np.testing.assert_array_equal(df, [1, 2, 1, 2])
    np.testing.assert_array_equal(s, [0.5, 0.5, 1.5, 1.5])
    assert len(EnsembleSpec().offsets) == 50
    with pytest.raises(ValueError):
        EnsembleSpec((), (1.0,))
    with pytest.raises(ValueError):
        EnsembleSpec((0.0,), (0.0,))


def test_pulse_validation_and_conversion():
    p = Pulse.from_xy([3.0, 0.0], [4.0, -2.0], 0.01)
    np.testing.assert_allclose(p.amplitude, [5.0, 2.0])
    np.testing.assert_allclose(p.ux, [3.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(p.uy, [4.0, -2.0])
    assert p.duration == pytest.approx(0.02)
    with pytest.raises(ValueError):
        Pulse([2000.0], [0.0], 0.01)
    with pytest.raises(ValueError):
        Pulse([-1.0], [0.0], 0.01)
    with pytest.raises(ValueError):
        Pulse([], [], 0.01)
    with pytest.raises(ValueError):
        Pulse([1.0], [0.0], 0.0)


def test_optimizer_config_validation():
    for kw in (dict(shrink=1.0), dict(tolerance=0.0), dict(method="adam"), dict(init_scale=-1)):
        with pytest.raises(ValueError):
            OptimizerConfig(**kw)


# ------------------------------------------------------------ propagation


def test_zero_pulse_keeps_mz():
    prof = simulate_profile(Pulse.zeros(30, 0.1), EnsembleSpec())
    assert prof.shape == (150, 3)
    np.testing.assert_allclose(prof[:, 2], 1.0, atol=1e-12)


def test_hard_pi_pulse_on_resonance():
    # amplitude * duration = 1/2 cycle
    pulse = Pulse(np.full(10, 50.0), np.zeros(10), 0.001)
    prof = simulate_profile(pulse, EnsembleSpec((0.0,), (1.0,)))
    assert prof[0, 2] == pytest.approx(-1.0, abs=1e-12)


def test_mz_bounded_for_random_pulse():
    prof = simulate_profile(random_pulse(3, scale=200.0), EnsembleSpec())
    assert np.all(np.abs(prof[:, 2]) <= 1 + 1e-12)


def test_norm_preserved_over_many_segments():
    rng = np.random.default_rng(4)
    k = 10_000
    ux, uy = 300 * rng.standard_normal(k), 300 * rng.standard_normal(k)
    df, s = np.array([-37.0, 0.0, 12.5]), np.array([0.8, 1.0, 1.2])
    vx, vy, vz, ca, f, _ = _rotations(ux, uy, 1e-4, df, s)
    alpha, beta = ca - 1j * f * vz, -1j * f * (vx - 1j * vy)
    np.testing.assert_allclose(np.abs(alpha) ** 2 + np.abs(beta) ** 2, 1.0, atol=1e-14)
    psi = np.zeros((3, 2), dtype=complex)
    psi[:, 0] = 1.0
    for i in range(k):
        a, b = alpha[:, i], beta[:, i]
        psi = np.column_stack([a * psi[:, 0] + b * psi[:, 1],
                               -np.conj(b) * psi[:, 0] + np.conj(a) * psi[:, 1]])
    np.testing.assert_allclose(np.sum(np.abs(psi) ** 2, axis=1), 1.0, atol=1e-12)
    pulse = Pulse.from_xy(ux, uy, 1e-4)
    prof = simulate_profile(pulse, EnsembleSpec(tuple(df), (1.0,)))
    assert np.all(np.abs(prof[:, 2]) <= 1 + 1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_segment_splitting_invariance(seed, parts):
    # segments share one duration, so every segment is split into `parts` copies
    pulse = random_pulse(seed, segments=20, duration=0.04, scale=80.0)
    split = Pulse(np.repeat(pulse.amplitude, parts), np.repeat(pulse.phase, parts),
                  pulse.segment_duration / parts)
    ens = EnsembleSpec((-40.0, -3.0, 0.0, 17.0), (0.8, 1.2))
    np.testing.assert_allclose(simulate_profile(split, ens)[:, 2],
                               simulate_profile(pulse, ens)[:, 2], atol=1e-12)


# ------------------------------------------------------------ fidelity and gradient


def test_fidelity_trivial_cases():
    zero = Pulse.zeros(20, 0.1)
    ens = EnsembleSpec()
    assert fidelity(zero, BandSpec(((-50, 50, "invert"),)), ens) == pytest.approx(0.0, abs=1e-12)
    assert fidelity(zero, BandSpec(((-50, 50, "preserve"),)), ens) == pytest.approx(1.0)
    assert fidelity(zero, SINGLE, ens) == pytest.approx(0.5)


def test_hard_pulse_small_offsets():
    pulse = Pulse(np.array([500.0]), np.array([0.0]), 0.001)
    ens = EnsembleSpec(tuple(np.linspace(-5, 5, 11)), (1.0,))
    assert fidelity(pulse, BandSpec(((-5, 5, "invert"),)), ens) >= 0.99


def test_fidelity_requires_in_band_members():
    with pytest.raises(ValueError, match="no ensemble member"):
        # both offsets sit in transition margins
        fidelity(Pulse.zeros(5, 0.01), BandSpec(((-1, 1, "invert"), (2, 5, "preserve")), 0.8),
                 EnsembleSpec((1.0, 2.0), (1.0,)))


@pytest.mark.parametrize("seed", [42, 7])
def test_gradient_matches_finite_differences(seed):
    pulse = random_pulse(seed)
    g = gradient(pulse, SINGLE, SMALL_ENSEMBLE)
    fd = central_difference(pulse, SINGLE, SMALL_ENSEMBLE, h=1e-6 * 30.0)
    scale = np.abs(g).max()
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-5 * scale)


def test_gradient_at_zero_pulse_symmetric_problem():
    bands = BandSpec(((-50, -2.5, "invert"), (2.5, 50, "invert")), 2.5)
    pulse = Pulse.zeros(10, 0.02)
    g = gradient(pulse, bands, SMALL_ENSEMBLE)
    fd = central_difference(pulse, bands, SMALL_ENSEMBLE, h=1e-4)
    np.testing.assert_allclose(g, fd, atol=1e-7)


def test_gradient_thread_invariance():
    pulse = random_pulse(5)
    ens = EnsembleSpec()
    np.testing.assert_allclose(gradient(pulse, SINGLE, ens, threads=1),
                               gradient(pulse, SINGLE, ens, threads=3), rtol=0, atol=1e-12)
    assert fidelity(pulse, SINGLE, ens, threads=1) == fidelity(pulse, SINGLE, ens, threads=4)


# ------------------------------------------------------------ design


def test_preserve_only_zero_pulse_optimal():
    res = design_pulse(BandSpec(((-50, 50, "preserve"),)), EnsembleSpec(), 20, 0.1)
    assert res.fidelity == pytest.approx(1.0)
    assert res.log[0][0] == 0 and res.log[0][1] == pytest.approx(1.0)
    np.testing.assert_array_equal(res.pulse.amplitude, 0.0)


@pytest.fixture(scope="module")
def short_design():
    cfg = OptimizerConfig(max_iterations=40, seed=3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return design_pulse(SINGLE, SMALL_ENSEMBLE, 60, 0.2, cfg)


def test_design_monotone_and_deterministic(short_design):
    fids = [row[1] for row in short_design.log]
    assert all(b >= a for a, b in zip(fids, fids[1:]))
    assert fids[-1] > fids[0]
    cfg = OptimizerConfig(max_iterations=40, seed=3, threads=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        again = design_pulse(SINGLE, SMALL_ENSEMBLE, 60, 0.2, cfg)
    np.testing.assert_array_equal(again.pulse.amplitude, short_design.pulse.amplitude)
    assert again.fidelity == short_design.fidelity


def test_design_respects_amplitude_cap():
    cfg = OptimizerConfig(max_iterations=15, amplitude_cap=20.0, init_scale=15.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = design_pulse(SINGLE, SMALL_ENSEMBLE, 30, 0.2, cfg)
    assert res.pulse.amplitude.max() <= 20.0 * (1 + 1e-12)


def test_steepest_method_runs():
    cfg = OptimizerConfig(max_iterations=10, method="steepest")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = design_pulse(SINGLE, SMALL_ENSEMBLE, 30, 0.2, cfg)
    fids = [row[1] for row in res.log]
    assert all(b >= a for a, b in zip(fids, fids[1:]))


def test_design_warnings():
    narrow = BandSpec(((0.5, 50, "invert"), (-50, -0.5, "preserve")), 0.2)
    ens = EnsembleSpec((-50.0, -0.6, 0.6, 50.0), (1.0,))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        design_pulse(narrow, ens, 10, 0.05, OptimizerConfig(max_iterations=2))
    assert any("resolvable" in str(w.message) for w in caught)
    with pytest.warns(RuntimeWarning, match="plateaued"):
        design_pulse(SINGLE, SMALL_ENSEMBLE, 10, 0.2, OptimizerConfig(max_iterations=0))


def test_band_deviation_keys(short_design):
    dev = band_deviation(short_design.pulse, SINGLE, SMALL_ENSEMBLE)
    assert set(dev) == {(0, 0.9), (0, 1.1), (1, 0.9), (1, 1.1)}
    assert all(0 <= v <= 2 for v in dev.values())


# ------------------------------------------------------------ files


def test_pulse_round_trip(tmp_path, short_design):
    path = tmp_path / "pulse.csv"
    write_pulse(short_design.pulse, path, "test pulse")
    lines = path.read_text().splitlines()
    assert lines[0] == "# test pulse"
    assert lines[1] == "segment,duration_s,amplitude_hz,phase_rad"
    back = read_pulse(path)
    np.testing.assert_array_equal(back.amplitude, short_design.pulse.amplitude)
    np.testing.assert_array_equal(back.phase, short_design.pulse.phase)
    assert back.segment_duration == short_design.pulse.segment_duration


def test_read_pulse_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("segment,duration_s,amplitude_hz,phase_rad\n0,0.1,1,0\n1,0.2,1,0\n")
    with pytest.raises(ValueError, match="uniform"):
        read_pulse(path)
    path.write_text("a,b\n")
    with pytest.raises(ValueError, match="header"):
        read_pulse(path)


def test_profile_file(tmp_path):
    path = tmp_path / "prof.csv"
    write_profile(simulate_profile(Pulse.zeros(3, 0.01), EnsembleSpec((0.0, 1.0), (1.0,))), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "offset_hz,rf_scale,mz"
    assert len(lines) == 3
