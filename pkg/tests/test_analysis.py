import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from delaycrn import (
    ConvergenceError,
    HistoryFunction,
    NotComplexBalancedError,
    class_membership,
    class_signature,
    conserved_functional,
    equilibrium_in_class,
    exp_inequality_check,
    lk_dissipation,
    lk_functional,
    lk_lower_bound_gamma,
    parse_network,
    stoichiometric_subspace,
)
from delaycrn.analysis import lower_bound_constant, lower_bound_ratio

from conftest import CORPUS_EQUILIBRIA, const, corpus, dimer_with_delay, wavy_history

ROOT5 = math.sqrt(5)

# class limits from theta = 0.5: positive root of (1 + 2 tau) x1^2 + x1 - (1.5 + 2 tau) = 0, x2 = x1^2 / 2
DIMER_LIMITS = {
    0.05: [0.8343133526143478, 0.34803938517529653],
    0.1: [0.844395495868463, 0.3565018767214737],
    0.5: [0.89564392373896, 0.40108901906525996],
}

# independent high-precision minima of f/g for one species (mpmath, 50 digits)
GAMMA_ORACLE = {
    0.1: 2.3616092329851655,
    2.0: 0.24669230439068351,
    5.0: 0.09977956680113245,
    10.0: 0.04997227863536915,
}


# -- conserved functional -------------------------------------------------------------


def test_conserved_functional_constant_examples(dimer):
    assert conserved_functional(dimer, [1, 2], const([2, 2], dimer)) == pytest.approx(10.0, abs=1e-14)
    assert conserved_functional(dimer, [1, 2], const([0.5, 0.5], dimer)) == pytest.approx(2.5, abs=1e-14)


def test_conserved_functional_zero_delay_is_linear():
    net = dimer_with_delay(0.0)
    p = np.array([0.3, 1.7])
    for v in ([1, 2], [-1, 4], [0.5, 0.0]):
        assert conserved_functional(net, v, const(p, net)) == float(np.dot(v, p))


def test_conserved_functional_sampled_linear(dimer):
    # psi2 runs linearly from 1 to 3, so the delay integral is exactly 1
    hist = HistoryFunction.sampled([-0.5, 0.0], [[0.2, 1.0], [1.0, 3.0]], 0.5)
    assert conserved_functional(dimer, [1, 2], hist) == pytest.approx(1 + 6 + 4, abs=1e-13)


def test_conserved_functional_sampled_bilinear():
    net = corpus("binding")  # A + B -> C delay 0.2, C -> A + B delay 0.4
    t = np.array([-0.4, 0.0])
    samples = np.array([[1.0, 2.0, 0.5], [2.0, 1.0, 1.5]])
    hist = HistoryFunction.sampled(t, samples, 0.4)
    A = lambda s: np.interp(s, t, samples[:, 0])  # noqa: E731
    B = lambda s: np.interp(s, t, samples[:, 1])  # noqa: E731
    C = lambda s: np.interp(s, t, samples[:, 2])  # noqa: E731
    i_ab = quad(lambda s: A(s) * B(s), -0.2, 0)[0]
    i_c = quad(C, -0.4, 0)[0]
    expected_vec = samples[-1] + i_ab * np.array([1, 1, 0]) + i_c * np.array([0, 0, 1])
    v = np.array([1.0, 0.0, 1.0])
    assert conserved_functional(net, v, hist) == pytest.approx(float(v @ expected_vec), abs=1e-12)


def test_conserved_functional_dimension_check(dimer):
    with pytest.raises(ValueError):
        conserved_functional(dimer, [1, 2, 3], const([1, 1], dimer))
    with pytest.raises(ValueError):
        conserved_functional(dimer, [1, 2], HistoryFunction.constant([1, 1, 1], 0.5))


def test_class_signature(dimer, dimer_report):
    sig = class_signature(dimer, dimer_report, const([0.5, 0.5], dimer))
    # the basis is [1, 2] / sqrt(5)
    assert len(sig) == 1
    assert sig.values[0] * ROOT5 == pytest.approx(2.5, abs=1e-13)
    sig = class_signature(dimer, dimer_report, const([2, 2], dimer))
    assert sig.values[0] * ROOT5 == pytest.approx(10.0, abs=1e-13)


def test_full_rank_signature_is_empty():
    net = corpus("inflow")
    rep = stoichiometric_subspace(net)
    assert len(class_signature(net, rep, const([0.1], net))) == 0
    assert class_membership(net, rep, const([0.1], net), const([7.0], net))


def test_class_membership(dimer, dimer_report):
    theta = const([0.5, 0.5], dimer)
    assert class_membership(dimer, dimer_report, theta, theta)
    assert class_membership(dimer, dimer_report, theta, const(DIMER_LIMITS[0.5], dimer))
    assert not class_membership(dimer, dimer_report, theta, const([2, 2], dimer))


@settings(max_examples=200, deadline=None)
@given(
    st.sampled_from(sorted(CORPUS_EQUILIBRIA)),
    st.lists(st.floats(0.01, 5.0), min_size=8, max_size=8),
)
def test_zero_delay_membership_is_linear(name, values):
    net = corpus(name).without_delays()
    rep = stoichiometric_subspace(net)
    n = net.n_species
    a, b = np.array(values[:n]), np.array(values[4 : 4 + n])
    # project b - a onto S^perp; keep only the S part half the time
    if values[0] < 2.5:
        b = a + (b - a) @ rep.s_basis.T @ rep.s_basis
        b = np.where(b > 0, b, a)
    linear = bool(np.all(np.abs(rep.s_perp_basis @ (b - a)) <= 1e-6 * (1 + np.abs(rep.s_perp_basis @ a))))
    assert class_membership(net, rep, const(a, net), const(b, net)) == linear


# -- equilibrium in class ----------------------------------------------------------


@pytest.mark.parametrize("tau", sorted(DIMER_LIMITS))
def test_equilibrium_in_class_dimer(tau):
    net = dimer_with_delay(tau)
    rep = stoichiometric_subspace(net)
    x = equilibrium_in_class(net, rep, [2, 2], const([0.5, 0.5], net))
    np.testing.assert_allclose(x, DIMER_LIMITS[tau], rtol=1e-12)


def test_equilibrium_in_class_fixed_point(dimer, dimer_report):
    x = equilibrium_in_class(dimer, dimer_report, [2, 2], const([2, 2], dimer))
    np.testing.assert_allclose(x, [2, 2], rtol=1e-14)


def test_equilibrium_in_class_cycle():
    net = corpus("cycle3")
    rep = stoichiometric_subspace(net)
    # the equilibrium set is s * [6, 3, 2]; the constant-history class value is 17 s
    x = equilibrium_in_class(net, rep, [6, 3, 2], const([1, 2, 3], net))
    np.testing.assert_allclose(x, 13.5 / 17 * np.array([6, 3, 2]), rtol=1e-12)


def test_equilibrium_in_class_rejects_bad_reference(dimer, dimer_report):
    with pytest.raises(NotComplexBalancedError):
        equilibrium_in_class(dimer, dimer_report, [1, 1], const([0.5, 0.5], dimer))
    with pytest.raises(ValueError):
        equilibrium_in_class(dimer, dimer_report, [2, 2], const([0.0, 0.5], dimer))


def test_equilibrium_in_class_reports_nonconvergence(dimer, dimer_report):
    with pytest.raises(ConvergenceError) as info:
        equilibrium_in_class(dimer, dimer_report, [2, 2], const([0.5, 0.5], dimer), max_iter=1)
    assert info.value.last_iterate is not None


@pytest.mark.parametrize("name", ["dimer", "cycle3", "binding", "two_linkage"])
def test_equilibrium_in_class_is_unique(name):
    net = corpus(name)
    rep = stoichiometric_subspace(net)
    x_bar = CORPUS_EQUILIBRIA[name]
    theta = wavy_history(net, x_bar, 0.8, seed=11)
    rng = np.random.default_rng(0)
    d = rep.s_perp_basis.shape[0]
    pts = [equilibrium_in_class(net, rep, x_bar, theta, lam0=rng.uniform(-1, 1, d)) for _ in range(20)]
    spread = max(np.max(np.abs(p - q)) for p in pts for q in pts)
    assert spread <= 1e-9
    assert class_membership(net, rep, theta, const(pts[0], net))


# -- Lyapunov-Krasovskii functional -----------------------------------------------


def test_lk_functional_examples(dimer):
    assert lk_functional(dimer, [2, 2], const([2, 2], dimer)) == 0.0
    assert lk_functional(dimer, [2, 2], const([0.5, 0.5], dimer)) == pytest.approx(2.420558458320164, abs=1e-12)


def test_lk_functional_sampled_matches_quad(dimer):
    hist = wavy_history(dimer, [2, 2], 0.9, seed=5)
    head = np.sum(hist(0.0) * (np.log(hist(0.0)) - np.log(2.0) - 1) + 2.0)
    # only reaction 2 (source X2, x_bar^y = 2, rate 2) is delayed
    integrand = lambda s: (lambda u: u * (math.log(u) - math.log(2) - 1) + 2)(float(hist(s)[1]))  # noqa: E731
    tail = 2.0 * quad(integrand, -0.5, 0, points=list(hist.breakpoints()), limit=200)[0]
    # Simpson on 201 nodes over a piecewise linear history leaves an O(h^2) kink error
    assert lk_functional(dimer, [2, 2], hist) == pytest.approx(head + tail, rel=1e-6)


def test_lk_functional_needs_positive(dimer):
    with pytest.raises(ValueError):
        lk_functional(dimer, [2, 2], const([0.0, 1.0], dimer))


def test_lk_dissipation_examples(dimer):
    assert lk_dissipation(dimer, [2, 2], const([2, 2], dimer)) == 0.0
    assert lk_dissipation(dimer, [2, 2], const([0.5, 0.5], dimer)) == pytest.approx(0.75 * math.log(0.25), abs=1e-14)


def test_lk_dissipation_vanishes_on_the_equality_set(dimer):
    # (psi(0)/x_bar)^{y'} = (psi(-tau)/x_bar)^{y} for both reactions: psi(0) = [1, 0.5], psi(-0.5) = [1, 0.5]
    hist = HistoryFunction.sampled([-0.5, -0.25, 0.0], [[1.0, 0.5], [3.0, 0.1], [1.0, 0.5]], 0.5)
    assert abs(lk_dissipation(dimer, [2, 2], hist)) <= 1e-14


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(sorted(CORPUS_EQUILIBRIA)), st.integers(0, 2**31 - 1))
def test_lyapunov_positive_and_dissipative(name, seed):
    net = corpus(name)
    x_bar = CORPUS_EQUILIBRIA[name]
    psi = wavy_history(net, x_bar, 1.5, seed)
    assert lk_functional(net, x_bar, psi) > 0
    assert lk_dissipation(net, x_bar, psi) <= 1e-10


# -- inequalities --------------------------------------------------------------------


def test_exp_inequality_examples():
    assert exp_inequality_check(1.0, 1.0)
    assert exp_inequality_check(0.0, 1.0)
    assert exp_inequality_check(np.array([-3.0, 2.0]), np.array([4.0, -7.0])).all()


@settings(max_examples=500, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10))
def test_exp_inequality_property(a, b):
    assert exp_inequality_check(a, b)


def test_lower_bound_ratio_endpoints():
    b = 2.0
    assert lower_bound_ratio(b, b) == pytest.approx(1 / (2 * b), rel=1e-15)
    assert lower_bound_ratio(0.0, b) == pytest.approx(b / math.log(1 + b * b), rel=1e-14)
    # continuous through b
    near = lower_bound_ratio(b + np.array([-1e-5, -1e-7, 1e-7, 1e-5]), b)
    assert np.max(np.abs(near - 0.25)) < 1e-5


@pytest.mark.parametrize("b", sorted(GAMMA_ORACLE))
def test_lower_bound_constant_matches_oracle(b):
    assert lower_bound_constant(b) == pytest.approx(GAMMA_ORACLE[b], rel=1e-10)


def test_gamma_takes_the_worst_species():
    net = corpus("two_linkage")
    assert lk_lower_bound_gamma(net, [1.0, 2.0, 5.0, 10.0]) == pytest.approx(GAMMA_ORACLE[10.0], rel=1e-10)
    with pytest.raises(ValueError):
        lk_lower_bound_gamma(net, [1.0, 0.0, 1.0, 1.0])


def test_gamma_bounds_f_by_g_for_b_two():
    gamma = lower_bound_constant(2.0)
    assert gamma <= 0.25
    x = np.random.default_rng(1).uniform(0, 100, 10_000)
    f = x * (np.log(x) - math.log(2) - 1) + 2
    assert np.all(f >= gamma * np.log1p((x - 2) ** 2) - 1e-12)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["dimer", "cycle3", "two_linkage"]), st.integers(0, 2**31 - 1))
def test_lyapunov_lower_bound(name, seed):
    net = corpus(name)
    x_bar = np.array(CORPUS_EQUILIBRIA[name])
    gamma = lk_lower_bound_gamma(net, x_bar)
    psi = wavy_history(net, x_bar, 3.0, seed)
    r2 = float(np.sum((psi(0.0) - x_bar) ** 2))
    assert lk_functional(net, x_bar, psi) >= gamma * math.log1p(r2) - 1e-10


def test_nonreversible_reference_rejected():
    net = parse_network("A -> B : rate=1\nB -> A : rate=1, delay=0.1")
    rep = stoichiometric_subspace(net)
    with pytest.raises(NotComplexBalancedError):
        equilibrium_in_class(net, rep, [1.0, 2.0], const([1, 1], net))
