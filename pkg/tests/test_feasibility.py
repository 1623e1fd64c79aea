import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import worst_case_mse_trs
from robmono.conic import ConicBackend, ConicResult, SolverError, Status
from robmono.feasibility import (FeasibilityChecker, Feasible, Infeasible, Strategy,
                                 UnreachableTarget, align_phases, build_robust_lmi, check_feasible,
                                 effective_gains, equalizer_for_target_mse, mmse_perfect_csi,
                                 mse_nominal, optimal_equalizer_perfect_csi, worst_case_mse)
from robmono.scenario import (ChannelRealization, CsiMode, TotalPower, draw_channels,
                              make_interference_channel, make_network_mimo)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def single_user(q=10.0, n=2, seed=0):
    sc = make_network_mimo(1, [n], 1, TotalPower(q))
    h = crandn(np.random.default_rng(seed), 1, n)
    return sc, ChannelRealization(h / np.linalg.norm(h))


def ball_samples(rng, m, n):
    """m uniform samples of the complex unit ball in C^n."""
    z = crandn(rng, m, n)
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z * rng.uniform(size=(m, 1)) ** (1 / (2 * n))


@pytest.fixture(scope="module")
def robust_pair():
    sc = make_network_mimo(2, [2, 2], 2, TotalPower(10.0), xi=0.02)
    return sc, draw_channels(sc, seed=7)


# --- nominal MSE and equalizers --------------------------------------------------

def test_mse_trivial_cases():
    sc = make_network_mimo(2, [1, 2], 2, noise=[0.5, 2.0])
    h = crandn(np.random.default_rng(1), 3)
    zero = np.zeros((2, 3))
    assert mse_nominal(sc, Strategy(zero, [0, 0]), 0, h) == 1.0
    r = 1 / np.sqrt(sc.noise_variances)
    for k in range(2):
        assert mse_nominal(sc, Strategy(zero, r), k, h) == pytest.approx(2.0)


def test_mse_single_user_closed_form():
    sc, real = single_user(q=10.0, n=3, seed=2)
    h = real.estimates[0] * 1.7
    v = np.sqrt(10.0) * h / np.linalg.norm(h)
    real = ChannelRealization(h[None])
    r = optimal_equalizer_perfect_csi(sc, real, v[None], 0)
    got = mse_nominal(sc, Strategy(v[None], [r]), 0, h)
    assert got == pytest.approx(1 / (10 * np.linalg.norm(h) ** 2 + 1), rel=1e-12)


def test_mse_vectorized_over_channels(rng):
    sc = make_network_mimo(2, [2, 1], 2)
    strat = Strategy(crandn(rng, 2, 3), [0.3, 0.7])
    H = crandn(rng, 5, 3)
    vec = mse_nominal(sc, strat, 1, H)
    np.testing.assert_allclose(vec, [mse_nominal(sc, strat, 1, h) for h in H])


def test_zero_beamformers_give_zero_equalizer():
    sc = make_network_mimo(2, [2, 2], 2)
    real = draw_channels(sc, seed=3)
    assert optimal_equalizer_perfect_csi(sc, real, np.zeros((2, 4)), 0) == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_optimal_equalizer_beats_grid(seed):
    rng = np.random.default_rng(seed)
    sc = make_network_mimo(2, [2, 1], 3, noise=[1.0, 0.5, 2.0])
    real = draw_channels(sc, seed=seed)
    V = align_phases(sc, real, crandn(rng, 3, 3))
    for k in range(3):
        r = optimal_equalizer_perfect_csi(sc, real, V, k)
        eq = np.zeros(3)
        eq[k] = r
        best = mse_nominal(sc, Strategy(V, eq), k, real.estimates[k])
        assert best == pytest.approx(mmse_perfect_csi(sc, real, V, k), abs=1e-12)
        y = effective_gains(sc, V, k, real.estimates[k])
        s2 = sc.noise_variances[k]
        expected = (np.sum(np.abs(y) ** 2) - abs(y[k]) ** 2 + s2) / (np.sum(np.abs(y) ** 2) + s2)
        assert best == pytest.approx(expected, rel=1e-12)
        for g in np.linspace(0, 1 / np.sqrt(s2), 2001):
            eq[k] = g
            assert mse_nominal(sc, Strategy(V, eq), k, real.estimates[k]) >= best - 1e-9


def _gain_and_power(seed):
    rng = np.random.default_rng(seed)
    sc = make_network_mimo(2, [2, 2], 2)
    real = draw_channels(sc, seed=seed)
    V = align_phases(sc, real, crandn(rng, 2, 4))
    y = effective_gains(sc, V, 0, real.estimates[0])
    return sc, real, V, y[0].real, np.sum(np.abs(y) ** 2) + 1.0


def test_equalizer_for_target_examples():
    sc, real, V, a, b = _gain_and_power(11)
    assert equalizer_for_target_mse(a, b, 1.0) == pytest.approx(2 * a / b)
    mmse = 1 - a * a / b
    r = equalizer_for_target_mse(a, b, mmse)
    assert r == pytest.approx(a / b, rel=1e-9)
    assert r == pytest.approx(optimal_equalizer_perfect_csi(sc, real, V, 0), rel=1e-9)
    with pytest.raises(UnreachableTarget):
        equalizer_for_target_mse(a, b, 0.5 * mmse)


@pytest.mark.parametrize("seed", range(4))
def test_equalizer_for_target_hits_target(seed):
    sc, real, V, a, b = _gain_and_power(seed)
    mmse = 1 - a * a / b
    for gamma in np.linspace(mmse, 1.0, 7):
        r = equalizer_for_target_mse(a, b, gamma)
        got = mse_nominal(sc, Strategy(V, [r, 0.0]), 0, real.estimates[0])
        assert got == pytest.approx(gamma, abs=1e-9)


# --- robust LMI -----------------------------------------------------------------

def test_lmi_shape_and_hermitian(robust_pair, rng):
    sc, real = robust_pair
    Vt = crandn(rng, 4, 2)
    A = build_robust_lmi(sc, real, Vt, 0.7, 0.3, 0.4, 1)
    assert A.shape == (4 + 2 + 2,) * 2
    np.testing.assert_array_equal(A, A.conj().T)
    with pytest.raises(ValueError):
        build_robust_lmi(sc, real, Vt.T, 0.7, 0.3, 0.4, 1)


@pytest.mark.parametrize("seed", range(10))
def test_lmi_without_uncertainty_matches_mse(seed):
    rng = np.random.default_rng(seed)
    sc = make_network_mimo(2, [2, 1], 2, noise=[1.0, 0.3])
    real = draw_channels(sc, seed=seed)
    V = crandn(rng, 2, 3)
    r = rng.uniform(0.2, 1.5, 2)
    strat = Strategy(V, r)
    for k in range(2):
        m = mse_nominal(sc, strat, k, real.estimates[k])
        for gamma, psd in ((m * 1.01, True), (m * 0.99, False)):
            if gamma > 1:
                continue
            A = build_robust_lmi(sc, real, strat.stacked(sc), 1 / r[k], 0.0, gamma, k)
            assert (np.linalg.eigvalsh(A)[0] >= -1e-10) == psd


# --- check_feasible --------------------------------------------------------------

@pytest.mark.parametrize("formulation", ["soc", "lmi"])
def test_all_ones_target_is_trivially_feasible(robust_pair, formulation):
    sc, real = robust_pair
    if formulation == "soc":
        real = ChannelRealization(real.estimates)
    out = check_feasible(sc, real, [1.0, 1.0], formulation=formulation)
    assert isinstance(out, Feasible)
    assert not np.any(out.strategy.beamformers)


@pytest.mark.parametrize("formulation", ["soc", "lmi"])
def test_single_user_boundary(formulation):
    sc, real = single_user(q=10.0, n=2, seed=4)
    checker = FeasibilityChecker(sc, real, formulation=formulation)
    assert isinstance(checker.check([1 / 11 + 1e-6]), Feasible)
    assert isinstance(checker.check([1 / 11 - 1e-3]), Infeasible)


def test_single_user_power_sweep_agrees():
    # one antenna: MSE(p) = 1 / (p |h|^2 + 1), so feasibility needs p = (1/gamma - 1) / |h|^2 <= q
    sc, real = single_user(q=10.0, n=1, seed=5)
    for p in np.linspace(0.5, 15, 30):
        gamma = 1 / (p + 1)
        assert bool(check_feasible(sc, real, [gamma])) == (p <= 10 - 1e-6)


def test_feasible_strategy_validates(robust_pair):
    sc, real = robust_pair
    gamma = np.array([0.4, 0.5])
    out = check_feasible(sc, real, gamma)
    assert isinstance(out, Feasible)
    strat = out.strategy
    assert strat.power_feasible(sc)
    np.testing.assert_array_equal(strat.beamformers, strat.beamformers * sc.data_masks)
    assert np.all(out.auxiliaries >= -1e-9)
    for k in range(2):
        assert worst_case_mse(sc, real, strat, k) <= gamma[k] + 1e-6


def test_feasible_outcome_holds_over_ellipsoid(robust_pair):
    sc, real = robust_pair
    gamma = np.array([0.35, 0.45])
    out = check_feasible(sc, real, gamma)
    assert out
    rng = np.random.default_rng(99)
    for k in range(2):
        E = ball_samples(rng, 10_000, 4)
        H = real.estimates[k] + E @ real.uncertainty_shapes[k].T
        assert np.max(mse_nominal(sc, out.strategy, k, H)) <= gamma[k] + 1e-5


def test_cross_mode_agreement():
    rng = np.random.default_rng(2024)
    agree = 0
    for probe in range(50):
        ants = list(rng.integers(1, 3, size=2))
        sc = make_interference_channel(2, ants, q=float(rng.uniform(1, 10)))
        real = draw_channels(sc, seed=probe)
        gamma = rng.uniform(0.05, 0.9, size=2)
        soc = FeasibilityChecker(sc, real, formulation="soc").check(gamma)
        lmi = FeasibilityChecker(sc, real, formulation="lmi").check(gamma)
        agree += bool(soc) == bool(lmi)
        assert soc.power_scale == pytest.approx(lmi.power_scale, abs=1e-5)
    assert agree == 50


def test_soc_requires_perfect_csi(robust_pair):
    with pytest.raises(ValueError):
        FeasibilityChecker(*robust_pair, formulation="soc")


class _Broken(ConicBackend):
    name = "broken"

    def solve(self, prog):
        return ConicResult(Status.FAILED, None, np.nan, np.inf, "boom")


def test_backend_failure_is_not_infeasible(robust_pair):
    checker = FeasibilityChecker(*robust_pair, backend=_Broken(), fallback=None)
    with pytest.raises(SolverError):
        checker.check([0.5, 0.5])


def test_fallback_backend_is_used(robust_pair):
    checker = FeasibilityChecker(*robust_pair, backend=_Broken(), fallback="scs")
    assert checker.check([0.6, 0.6])


@settings(max_examples=12)
@given(st.lists(st.floats(0.05, 0.95), min_size=2, max_size=2),
       st.lists(st.floats(0.0, 0.5), min_size=2, max_size=2))
def test_feasible_set_is_upward_closed(gamma, bump):
    sc = make_network_mimo(2, [1, 2], 2, TotalPower(5.0), xi=0.01)
    real = draw_channels(sc, seed=3)
    checker = FeasibilityChecker(sc, real)
    g1 = np.array(gamma)
    g2 = np.minimum(g1 + np.array(bump), 1.0)
    if checker.check(g1):
        assert checker.check(g2)


# --- worst-case MSE --------------------------------------------------------------

def test_worst_case_trivial(robust_pair, rng):
    sc, real = robust_pair
    assert worst_case_mse(sc, real, Strategy(np.zeros((2, 4)), [0, 0]), 0) == 1.0
    strat = Strategy(crandn(rng, 2, 4), [0.4, 0.6])
    perfect = ChannelRealization(real.estimates)
    for k in range(2):
        assert worst_case_mse(sc, perfect, strat, k) == pytest.approx(
            mse_nominal(sc, strat, k, real.estimates[k]), abs=1e-12)


def test_worst_case_sdp_without_uncertainty_via_solver(rng):
    # a vanishing ellipsoid exercises the conic path and must reproduce the nominal value
    sc = make_network_mimo(2, [1, 1], 2, xi=1e-14)
    real = draw_channels(sc, seed=5)
    strat = Strategy(crandn(rng, 2, 2), [0.5, 0.9])
    for k in range(2):
        assert worst_case_mse(sc, real, strat, k) == pytest.approx(
            mse_nominal(sc, strat, k, real.estimates[k]), abs=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_worst_case_dominates_samples(seed, robust_pair):
    sc, real = robust_pair
    rng = np.random.default_rng(seed)
    strat = Strategy(crandn(rng, 2, 4), rng.uniform(0.2, 0.8, 2))
    for k in range(2):
        wc = worst_case_mse(sc, real, strat, k)
        trs, e_star = worst_case_mse_trs(sc, real, strat, k)
        E = np.vstack([ball_samples(rng, 100_000, 4), e_star])
        H = real.estimates[k] + E @ real.uncertainty_shapes[k].T
        sampled = np.max(mse_nominal(sc, strat, k, H))
        assert wc >= sampled - 1e-7
        assert wc - sampled <= 1e-4
        assert wc == pytest.approx(trs, abs=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_worst_case_grows_with_uncertainty(seed):
    rng = np.random.default_rng(seed)
    base = make_network_mimo(2, [1, 2], 2)
    h = draw_channels(base, seed=seed).estimates
    strat = Strategy(crandn(rng, 2, 3), [0.5, 0.5])
    prev = [0.0, 0.0]
    for xi in (0.0, 0.01, 0.05, 0.2):
        sc = base.with_uncertainty(xi)
        real = ChannelRealization(h, np.stack([sc.uncertainty_shape(k) for k in range(2)]))
        cur = [worst_case_mse(sc, real, strat, k) for k in range(2)]
        assert all(c >= p - 1e-6 for c, p in zip(cur, prev))
        prev = cur


def test_strategy_projection_and_json(robust_pair, rng):
    sc = make_interference_channel(2, [1, 2], 5.0)
    s = Strategy.projected(sc, crandn(rng, 2, 3), [0.1, 0.2])
    assert s.beamformers[0, 1] == 0 and s.beamformers[1, 0] == 0
    back = Strategy.from_dict(s.to_dict())
    np.testing.assert_array_equal(back.beamformers, s.beamformers)
    np.testing.assert_array_equal(back.equalizers, s.equalizers)
    assert sc.csi_mode is CsiMode.PERFECT
