import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from holoidem import beamforming as bf
from holoidem.geometry import CircularArray, propagation_matrix
from holoidem.metrics import du_rate, eu_energy, link_metrics


def orthogonal_scenario(n=256, k=3, l=2, seed=0, pt=1.0, noise=1e-6, e0=1e-4):
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((n, k + l)) + 1j * rng.standard_normal((n, k + l))
    q, _ = np.linalg.qr(raw)
    gains = rng.uniform(0.02, 0.1, k + l)
    hs = [q[:, i] * gains[i] for i in range(k + l)]
    return bf.Scenario(hs[:k], hs[k:], pt, noise, e0)


def random_scenario(n=128, k=3, l=2, seed=0, scale=0.05):
    rng = np.random.default_rng(seed)
    hs = [scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n)) for _ in range(k + l)]
    return bf.Scenario(hs[:k], hs[k:], 1.0, 1e-6, 1e-3)


complex_vectors = arrays(np.complex128, st.integers(4, 40),
                         elements=st.complex_numbers(max_magnitude=5.0, allow_nan=False, allow_infinity=False))


# ---------------------------------------------------------------------------
# Fully-digital beams
# ---------------------------------------------------------------------------

def test_fd_asymptotic_orthogonal_identities():
    sc = orthogonal_scenario()
    f = bf.fd_asymptotic(sc)
    assert abs(np.linalg.norm(f) - 1.0) < 1e-12
    rates, energies = link_metrics(sc, f)
    assert np.ptp(rates) / rates.max() < 1e-12
    assert np.allclose(energies, sc.energy_floor, rtol=1e-12)


def test_energy_weights_formula():
    sc = orthogonal_scenario()
    g = np.array([np.vdot(h, h).real for h in sc.eu_vectors])
    assert np.allclose(bf.energy_weights(sc), np.sqrt(sc.energy_floor / (sc.transmit_power * g ** 2)))


def test_fd_asymptotic_without_eus():
    sc = orthogonal_scenario(l=0)
    f = bf.fd_asymptotic(sc)
    rates, energies = link_metrics(sc, f)
    assert energies.size == 0
    assert np.ptp(rates) < 1e-10
    assert np.linalg.norm(f) == pytest.approx(1.0, abs=1e-12)


def test_energy_infeasible():
    sc = orthogonal_scenario(e0=1.0)
    with pytest.raises(bf.EnergyInfeasible):
        bf.fd_asymptotic(sc)
    f = bf.fd_asymptotic(sc, on_infeasible="saturate")
    rates, energies = link_metrics(sc, f)
    assert np.linalg.norm(f) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(rates, 0.0, atol=1e-12)
    assert np.all(energies < sc.energy_floor)


def test_zero_channel_rejected():
    sc = bf.Scenario([np.zeros(8, complex)], [], 1.0, 1.0, 0.0)
    with pytest.raises(bf.DegenerateInput):
        bf.fd_asymptotic(sc)


def test_scenario_validation():
    with pytest.raises(ValueError):
        bf.Scenario([], [], 1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        bf.Scenario([np.ones(4)], [np.ones(5)], 1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        bf.Scenario([np.ones(4)], [], 0.0, 1.0, 0.0)


def test_mf_baseline():
    sc = random_scenario()
    f = bf.mf_baseline(sc)
    s = sum(sc.du_vectors) + sum(sc.eu_vectors)
    assert np.allclose(f, s / np.linalg.norm(s))


def test_metrics_examples():
    h = np.array([1e-4 + 0j, 0, 0])
    f = np.array([1, 0, 0], dtype=complex)
    # |h^H f|^2 = sigma2 / P_t gives exactly one bit
    assert du_rate(h, f, 1.0, 1e-8) == pytest.approx(1.0)
    assert du_rate(np.array([0, 1, 0]), f, 1.0, 1e-8) == 0.0
    assert eu_energy(h, h / np.linalg.norm(h), 2.0) == pytest.approx(2.0 * 1e-8)
    # 20 dBm, -94 dBm noise, |h^H f|^2 = 1e-9: log2(1 + 10^11.4 * 1e-9)
    g = np.array([math.sqrt(1e-9)])
    assert du_rate(g, np.array([1.0]), 0.1, 10 ** -12.4) == pytest.approx(math.log2(1 + 10 ** 2.4), rel=1e-12)


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_rate_monotone_in_power(p1, p2):
    h = np.array([0.3 + 0.1j, -0.2j])
    f = np.array([0.6, 0.8], dtype=complex)
    lo, hi = sorted((p1, p2))
    assert du_rate(h, f, lo, 1.0) <= du_rate(h, f, hi, 1.0)
    assert eu_energy(h, f, lo) <= eu_energy(h, f, hi)


# ---------------------------------------------------------------------------
# Digital update
# ---------------------------------------------------------------------------

def test_digital_ls_matches_normal_equations():
    rng = np.random.default_rng(1)
    P = propagation_matrix(CircularArray(64, 0.01), 4, 5.0)
    q = rng.uniform(0.1, 1.0, 64).astype(complex)
    f = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    b = bf.digital_ls_update(P, q, f).b
    A = q[:, None] * P.matrix
    oracle = np.linalg.solve(A.conj().T @ A, A.conj().T @ f)
    assert np.allclose(b, oracle, rtol=1e-9, atol=1e-12)
    # residual orthogonal to the column space
    assert np.max(np.abs(A.conj().T @ (f - A @ b))) < 1e-9 * np.linalg.norm(f)


def test_digital_ls_singular_fallback():
    # gamma = 0 with the default beta leaves all feed columns parallel (2 pi R / lambda is an integer)
    arr = CircularArray(32, 0.01)
    P = propagation_matrix(arr, 4, 0.0)
    assert np.linalg.matrix_rank(P.matrix) == 1
    f = np.exp(1j * np.arange(32) * 0.3)
    with pytest.warns(bf.SingularUpdate):
        b = bf.digital_ls_update(P, np.ones(32), f)
    assert np.all(np.isfinite(b.b))


def test_digital_ls_zero_matrix():
    with pytest.raises(bf.DegenerateBeam):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            bf.digital_ls_update(np.zeros((8, 2)), np.ones(8), np.ones(8, complex))


def test_analog_target_zero_where_unreachable():
    P = np.array([[1.0, 0.0], [0.0, 0.0], [0.5, 0.5]], dtype=complex)
    x = bf.analog_target(np.array([2.0, 3.0, 1.0], dtype=complex), P, np.array([1.0, 1.0], dtype=complex))
    assert np.allclose(x, [2.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# Analog updates
# ---------------------------------------------------------------------------

def test_amplitude_projection():
    x = np.array([-1 + 1j, 0.3 - 2j, 1.7, 0.0])
    q = bf.analog_amplitude(x)
    assert np.allclose(q.q, [0.0, 0.3, 1.0, 0.0]) and q.scale_a == 1.0
    qs = bf.analog_amplitude(x, scaled=True)
    assert np.allclose(qs.q, [0.0, 0.3, 1.7, 0.0]) and qs.scale_a == pytest.approx(1.7)
    with pytest.raises(bf.DegenerateAnalog):
        bf.analog_amplitude(np.array([-1.0, -2j]))


@given(complex_vectors, st.floats(0.05, 5.0))
def test_amplitude_elementwise_optimal(x, a):
    # projection of each element onto the segment [0, a]
    q = np.clip(x.real, 0, a)
    grid = np.linspace(0, a, 201)
    best = np.min(np.abs(x[:, None] - grid[None, :]), axis=1)
    assert np.all(np.abs(x - q) <= best + 1e-12)


def test_binary_threshold_and_ties():
    x = np.array([0.5, 0.50000001, 0.2 + 3j, 1.4])
    q = bf.analog_binary(x)
    assert np.allclose(q.q, [0, 1, 0, 1])


@given(complex_vectors, st.floats(0.05, 5.0))
def test_binary_elementwise_optimal(x, a):
    q = bf.analog_binary(x, scaled=True, scale=a).q
    assert np.all(np.abs(x - q) <= np.minimum(np.abs(x), np.abs(x - a)) + 1e-12)


def test_binary_objective_equals_split_sum():
    rng = np.random.default_rng(4)
    x = rng.standard_normal(50) + 1j * rng.standard_normal(50)
    for a in (0.3, 1.0, 2.5):
        low = x.real <= a / 2
        split = np.sum(np.abs(x[low])) + np.sum(np.abs(x[~low] - a))
        assert bf.binary_objective(x, a) == pytest.approx(split, rel=1e-12)


def test_binary_scale_fixed_point():
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        for fn, centre in ((bf.binary_scale_mean, np.mean), (bf.binary_scale_median, np.median)):
            a = fn(x)
            active = x.real[x.real >= a / 2]
            assert a == pytest.approx(centre(active), rel=1e-12)
            assert a > 0


def test_binary_scale_hand_example():
    # start {1, 2, 9}: mean 4 drops 1 (< 2); mean of {2, 9} = 5.5 drops 2; {9} -> 9
    assert bf.binary_scale_mean(np.array([1.0, 2.0, 9.0, -3.0])) == pytest.approx(9.0)
    assert bf.binary_scale_median(np.array([1.0, 2.0, 9.0, -3.0])) == pytest.approx(2.0)


def test_binary_scale_rules():
    x = np.array([1.0, 2.0, 9.0])
    with pytest.raises(ValueError):
        bf.analog_binary(x, scaled=True, scale_rule="mode")
    with pytest.raises(bf.DegenerateAnalog):
        bf.binary_scale_mean(np.array([-1.0, 0.0]))


def test_lorentzian_closed_form_scale():
    rng = np.random.default_rng(6)
    for _ in range(50):
        x = rng.standard_normal(32) + 1j * rng.standard_normal(32)
        a = bf.lorentzian_scale(x)
        upper = x[x.imag > 0]
        p = upper[np.argmax(np.abs(upper))]
        assert abs(abs(p - 0.5j * a) - 0.5 * a) < 1e-12 * max(1.0, a)
        assert bf.lorentzian_scale(x, rule="half") == pytest.approx(a / 2, rel=1e-12)


def test_lorentzian_anchor_phase():
    for p in (0.3 + 0.7j, -2.0 + 0.1j, 1e-3 + 5j):
        a = abs(p) ** 2 / p.imag
        phi = bf.lorentzian_anchor_phase(p)
        assert 0.5 * a * (1j + np.exp(1j * phi)) == pytest.approx(p, rel=1e-12)
        assert abs(np.exp(1j * np.angle(2 * p - 1j * a)) - np.exp(1j * phi)) < 1e-12


@given(complex_vectors, st.floats(0.05, 5.0))
def test_lorentzian_elementwise_optimal(x, a):
    q = bf.analog_lorentzian(x, scaled=True, scale=a)
    assert q.constraint_violation() < 1e-12 * max(1.0, a)
    phis = np.linspace(0, 2 * np.pi, 2001)
    circle = 0.5 * a * (1j + np.exp(1j * phis))
    best = np.min(np.abs(x[:, None] - circle[None, :]), axis=1)
    assert np.all(np.abs(x - q.q) <= best + 1e-12)


def test_lorentzian_degenerate():
    with pytest.raises(bf.DegenerateAnalog):
        bf.lorentzian_scale(np.array([1.0 - 1j, -2.0 + 0j]))


def test_lorentzian_global_search_not_worse():
    rng = np.random.default_rng(7)
    for _ in range(10):
        x = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        a_cf = bf.lorentzian_scale(x)
        a_gs = bf.lorentzian_scale(x, global_search=True)
        assert bf.lorentzian_objective(x, a_gs) <= bf.lorentzian_objective(x, a_cf) + 1e-9


def test_initial_analog_feasible():
    for kind in bf.ControlKind:
        q = bf.initial_analog(16, bf.ControlMode(kind))
        assert q.constraint_violation() == 0.0


def test_control_kind_aliases():
    assert bf.ControlKind.parse("Lorentzian-Phase") is bf.ControlKind.LORENTZIAN_PHASE
    assert bf.ControlKind.parse("phase") is bf.ControlKind.LORENTZIAN_PHASE
    assert bf.ControlKind.parse("0-1") is bf.ControlKind.BINARY_AMPLITUDE
    assert bf.ControlKind.parse("amplitude_only") is bf.ControlKind.AMPLITUDE_ONLY
    with pytest.raises(ValueError):
        bf.ControlKind.parse("magic")
    assert str(bf.ControlMode("lorentzian", True)) == "lorentzian_scaling"


# ---------------------------------------------------------------------------
# Normalization, descaling, alternating optimization
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kind", list(bf.ControlKind))
def test_descale_invariance(kind):
    sc = random_scenario(n=64)
    P = propagation_matrix(CircularArray(64, 0.01), 2, 5.0)
    mode = bf.ControlMode(kind, True)
    f = bf.fd_asymptotic(sc)
    q = bf.initial_analog(64, mode)
    b = bf.digital_ls_update(P, q, f)
    q = bf.analog_update(bf.analog_target(f, P, b), mode, bf.SolverOptions())
    b = bf.normalize_digital(b, q, P)
    r0, e0 = link_metrics(sc, bf.effective_beam(q, P, b))
    q1, b1 = bf.descale(q, b)
    r1, e1 = link_metrics(sc, bf.effective_beam(q1, P, b1))
    assert np.max(np.abs(r1 - r0) / r0) < 1e-10
    assert np.max(np.abs(e1 - e0) / e0) < 1e-10
    assert q1.scale_a == 1.0 and q1.constraint_violation() < 1e-12


def test_descale_rejects_nonpositive():
    q = bf.AnalogBeamformer(np.ones(3, complex), 0.0, bf.ControlMode("amplitude", True))
    with pytest.raises(bf.DegenerateAnalog):
        bf.descale(q, bf.DigitalBeamformer(np.ones(1, complex)))


def test_normalize_unit_power():
    P = propagation_matrix(CircularArray(32, 0.01), 2, 5.0)
    q = bf.initial_analog(32, bf.ControlMode("binary"))
    b = bf.normalize_digital(bf.DigitalBeamformer(np.array([2.0, 1j])), q, P)
    assert np.linalg.norm(bf.effective_beam(q, P, b)) == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("kind", list(bf.ControlKind))
@pytest.mark.parametrize("scaled", [False, True])
def test_alternating_optimize_properties(kind, scaled):
    sc = random_scenario(n=96, seed=11)
    P = propagation_matrix(CircularArray(96, 0.01), 3, 5.0)
    mode = bf.ControlMode(kind, scaled)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        q, b, rep = bf.alternating_optimize(sc, P, mode)
        q2, b2, rep2 = bf.alternating_optimize(sc, P, mode)
    h = np.asarray(rep.residual_history)
    assert np.all(np.diff(h) <= 1e-12 * h[:-1])
    assert np.array_equal(q.q, q2.q) and np.array_equal(b.b, b2.b)
    assert rep.min_rate == rep2.min_rate
    f_eff = bf.effective_beam(q, P, b)
    assert np.linalg.norm(f_eff) == pytest.approx(1.0, rel=1e-12)
    assert q.scale_a == 1.0 and q.constraint_violation() < 1e-12
    rates, energies = link_metrics(sc, f_eff)
    assert rep.min_rate == pytest.approx(rates.min(), rel=1e-14)
    assert np.allclose(rep.per_eu_energy, energies)
    assert rep.min_rate <= rep.target_min_rate + 1e-9


def test_iteration_cap_returns_best_iterate():
    sc = random_scenario(n=64, seed=2)
    P = propagation_matrix(CircularArray(64, 0.01), 2, 5.0)
    opts = bf.SolverOptions(max_iterations=2, tolerance=1e-15)
    with pytest.warns(RuntimeWarning):
        _, _, rep = bf.alternating_optimize(sc, P, bf.ControlMode("amplitude"), opts)
    assert not rep.converged
    assert rep.min_rate == pytest.approx(max(rep.rate_history), rel=1e-12)


def test_feasibility_slack():
    sc = orthogonal_scenario()
    f = bf.fd_asymptotic(sc)
    assert bf.digital_report(sc, f).feasible
    tight = bf.Scenario(sc.du_channels, sc.eu_channels, 1.0, 1e-6, 1e-4 * 10 ** 0.06)
    assert not bf.digital_report(tight, f, slack_db=0.5).feasible
    assert bf.digital_report(tight, f, slack_db=0.7).feasible
