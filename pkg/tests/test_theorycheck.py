from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from byzsaga import theorycheck as tc
from byzsaga.aggregation import GeoMedParams, geomed_objective, weiszfeld


def test_constants_worked_example():
    c = tc.constants(30, 1, 2)
    assert c.alpha == pytest.approx(1 / 30)
    assert c.C_alpha == pytest.approx(29 / 14, abs=1e-15)
    assert c.C_s_alpha == pytest.approx(28 / 13, abs=1e-15)
    assert c.d == pytest.approx(29 / 59, abs=1e-15)
    assert c.tolerable and c.tolerable_s


def test_exact_constants_are_rationals():
    alpha, d, ca, csa = tc.exact_constants(30, 1, 2)
    assert (alpha, d, ca, csa) == (Fraction(1, 30), Fraction(29, 59), Fraction(29, 14), Fraction(28, 13))


def test_s1_and_b0_reductions():
    c = tc.constants(10, 2, 1)
    assert c.d == 1 and c.C_s_alpha == c.C_alpha
    c0 = tc.constants(10, 0, 3)
    assert c0.C_alpha == c0.C_s_alpha == 2


def test_untolerable_constants_are_absent():
    c = tc.constants(10, 3, 2)
    assert c.C_s_alpha is None and not c.tolerable_s and c.tolerable
    rep = tc.bounds(c, 1.0, 1.0, 5, 7, 1.0, 1.0)
    assert rep.delta2_proposed is None and rep.delta2_rs_byrd_sgd is None


@pytest.mark.parametrize("args", [(0, 0, 1), (5, 5, 1), (5, -1, 1), (5, 1, 0)])
def test_constants_preconditions(args):
    with pytest.raises(ValueError):
        tc.constants(*args)


@given(W=st.integers(2, 200), s=st.integers(1, 6))
def test_constant_monotonicity(W, s):
    c_next = tc.constants(W, 0, s + 1)
    c = tc.constants(W, 0, s)
    assert 0 < c_next.d < c.d <= 1
    prev = None
    for B in range(W):
        k = tc.constants(W, B, s)
        if not k.tolerable_s:
            break
        assert k.C_s_alpha >= 2
        if prev is not None:
            assert k.C_s_alpha > prev
        prev = k.C_s_alpha


def test_bound_worked_example():
    rep = tc.bounds(tc.constants(30, 1, 2), mu=1.0, L=1.0, J=20, R=29, delta_sq=1.0, sigma_sq=0.0)
    exact = 5 * Fraction(29, 59) * Fraction(28, 13) ** 2
    assert rep.delta2_proposed == pytest.approx(float(exact), abs=1e-12)
    assert rep.delta2_proposed == pytest.approx(11.40, abs=5e-3)


def test_bound_reductions():
    c = tc.constants(30, 1, 2)
    assert tc.bounds(c, 1.0, 2.0, 10, 29, 0.0, 3.0).delta2_proposed == 0.0
    c1 = tc.constants(20, 3, 1)
    rep = tc.bounds(c1, 0.5, 2.0, 10, 17, delta_sq=1.7, sigma_sq=0.0)
    assert rep.delta2_rs_byrd_sgd == pytest.approx(2 / 0.25 * c1.C_alpha ** 2 * 1.7)
    assert rep.orders["byrd-sgd"] == pytest.approx(c1.C_alpha ** 2 * 1.7)


def test_step_ceilings_and_epsilon_terms():
    c = tc.constants(30, 2, 2)
    rep = tc.bounds(c, 0.5, 2.0, 10, 28, 1.0, 1.0, epsilon=0.3)
    assert rep.gamma_max_proposed == pytest.approx(0.5 / (2 * np.sqrt(10) * 100 * 4 * c.C_s_alpha))
    assert rep.gamma_max_rs_byrd_sgd == pytest.approx(0.5 / 8)
    assert rep.epsilon_term == pytest.approx(10 * 0.09 / (0.25 * 22 ** 2))
    assert rep.epsilon_term_rs_byrd_sgd == pytest.approx(4 * 0.09 / (0.25 * 22 ** 2))
    assert all(v >= 0 for v in [rep.delta2_proposed, rep.delta2_rs_byrd_sgd, rep.gamma_max_proposed, rep.epsilon_term])


def test_bounds_reject_nonpositive_curvature():
    with pytest.raises(ValueError):
        tc.bounds(tc.constants(5, 0, 1), 0.0, 1.0, 1, 5, 1.0, 1.0)


def test_error_curve_values():
    rows = {(s, a): v for s, a, v in tc.error_curve(30, [1, 2], [1 / 30])}
    exact2 = Fraction(29, 59) * Fraction(28, 13) ** 2
    exact1 = Fraction(29, 14) ** 2
    assert abs(rows[(2, 1 / 30)] - float(exact2)) < 1e-9
    assert abs(rows[(1, 1 / 30)] - float(exact1)) < 1e-9
    # the quoted 2.280 / 4.290 are truncated to three decimals
    assert abs(rows[(2, 1 / 30)] - 2.280) < 1e-3 and abs(rows[(1, 1 / 30)] - 4.290) < 1e-3
    assert rows[(2, 1 / 30)] < rows[(1, 1 / 30)]


def test_error_curve_skips_intolerable_and_diverges():
    rows = tc.error_curve(30, [2], [0.1, 0.24, 0.249, 0.2499, 0.25, 0.3])
    alphas = [a for _, a, _ in rows]
    assert 0.25 not in alphas and 0.3 not in alphas
    vals = [v for *_, v in rows]
    assert vals == sorted(vals) and vals[-1] > 1e4


def test_small_alpha_limit():
    for W in (2, 10, 100):
        for s in (2, 3):
            (_, _, v), = tc.error_curve(W, [s], [0.0])
            assert v == pytest.approx(4 * (W - 1) / (s * W - 1)) and v < 4


def test_crossover():
    grid = np.linspace(0, 0.24, 241)
    a = tc.crossover(30, 2, grid)
    assert a is not None and 0 < a < 0.25
    # sign change really happens at a
    (_, _, below), = tc.error_curve(30, [2], [a - 0.001])
    assert below < ((2 - 2 * (a - 0.001)) / (1 - 2 * (a - 0.001))) ** 2


# --------------------------------------------------------------------------- verifiers (small trial counts)


def test_identity_all_equal_vectors_zero_variance():
    rep = tc.verify_resampling_identities([[2.0, 1.0]] * 5, 2, trials=200)
    assert rep.estimate == 0.0 and rep.passed


def test_identity_small_run_is_close():
    rep = tc.verify_resampling_identities([0.0, 1.0, 2.0, 3.0], 2, trials=20_000, var_tol=0.05)
    assert rep.predicted == pytest.approx(15 / 28)
    assert rep.passed


def test_workers_scheme_misses_the_identity():
    # the scheme that draws uniformly over eligible workers (not tickets) has
    # a different per-slot variance
    rep = tc.verify_resampling_identities([0.0, 1.0, 2.0, 3.0], 2, trials=20_000, scheme="workers")
    assert not rep.passed


def test_resampled_deviation_special_cases():
    det = [tc.GaussianSource((float(v),)) for v in range(4)]
    rep = tc.verify_resampled_deviation(det, 2, trials=5000)
    assert rep.details["inner"] == 0 and rep.predicted == pytest.approx(15 / 28)
    same = [tc.GaussianSource((1.0, 1.0), 0.5)] * 4
    rep = tc.verify_resampled_deviation(same, 2, trials=5000, tol=0.1)
    d = 3 / 7
    assert rep.details["outer"] == 0
    assert rep.predicted == pytest.approx((d + (1 - d) / 4) * 0.5)
    assert rep.passed


def test_geomed_bound_trivial_case():
    src = [tc.GaussianSource((1.0, 2.0))] * 4
    rep = tc.verify_geomed_bounds(src, [], 2, trials=20)
    assert rep.estimate < 1e-18 and rep.predicted == 0.0 and rep.passed


def test_geomed_bound_rejects_intolerable():
    with pytest.raises(ValueError):
        tc.verify_geomed_bounds([tc.GaussianSource((0.0,), 1.0)] * 2, [[9.0]] * 2, 1, trials=5)


def test_push_to_gap_hits_epsilon():
    rng = np.random.default_rng(0)
    P = rng.standard_normal((6, 2))
    z = weiszfeld(P, GeoMedParams(1e-12, 5000)).point
    z2 = tc._push_to_gap(z, P, 0.25, np.array([1.0, 0.0]))
    assert geomed_objective(z2, P) - geomed_objective(z, P) == pytest.approx(0.25, abs=1e-9)


def test_saga_variance_small():
    rep = tc.verify_saga_variance(configs=20)
    assert rep.passed and rep.estimate <= 1.0
