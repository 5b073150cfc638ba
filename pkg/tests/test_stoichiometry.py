import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delaycrn import (
    ConvergenceError,
    NotComplexBalancedError,
    equilibrium_set_membership,
    find_equilibrium,
    is_complex_balanced,
    parse_network,
    stoichiometric_subspace,
)
from delaycrn.stoichiometry import equilibrium_rhs

from conftest import CORPUS_EQUILIBRIA, corpus
from test_network import networks


def _same_line(basis, direction):
    direction = np.asarray(direction, float) / np.linalg.norm(direction)
    return abs(abs(float(basis @ direction)) - 1.0) < 1e-12


def test_dimer_report(dimer):
    rep = stoichiometric_subspace(dimer)
    assert rep.s_dim == 1 and rep.n_complexes == 2 and rep.n_linkage_classes == 1
    assert rep.deficiency == 0 and rep.weakly_reversible
    assert _same_line(rep.s_basis[0], [-2, 1])
    assert _same_line(rep.s_perp_basis[0], [1, 2])
    # canonical sign: largest entry positive
    np.testing.assert_allclose(rep.s_perp_basis[0], np.array([1, 2]) / math.sqrt(5), atol=1e-15)


def test_irreversible_single_reaction():
    rep = stoichiometric_subspace(parse_network("A -> B : rate=1, delay=0"))
    assert rep.s_dim == 1 and _same_line(rep.s_basis[0], [-1, 1])
    assert not rep.weakly_reversible


def test_three_cycle_structure():
    net = parse_network("A -> B : rate=1, delay=0\nB -> C : rate=1, delay=0\nC -> A : rate=1, delay=0")
    rep = stoichiometric_subspace(net)
    assert rep.weakly_reversible and rep.s_dim == 2 and rep.deficiency == 0


@pytest.mark.parametrize(
    "name, s_dim, linkage",
    [("dimer", 1, 1), ("dimer_nodelay", 1, 1), ("cycle3", 2, 1), ("binding", 1, 1), ("inflow", 1, 1), ("two_linkage", 2, 2)],
)
def test_corpus_structure(name, s_dim, linkage):
    rep = stoichiometric_subspace(corpus(name))
    assert (rep.s_dim, rep.n_linkage_classes, rep.deficiency, rep.weakly_reversible) == (s_dim, linkage, 0, True)


@settings(max_examples=200, deadline=None)
@given(networks())
def test_basis_invariants(net):
    rep = stoichiometric_subspace(net)
    assert rep.s_dim + rep.s_perp_basis.shape[0] == net.n_species
    if rep.s_dim and rep.s_perp_basis.size:
        assert np.max(np.abs(rep.s_basis @ rep.s_perp_basis.T)) <= 1e-10
    assert rep.deficiency >= 0
    # every reaction vector lies in the span of s_basis
    resid = net.reaction_vectors - (net.reaction_vectors @ rep.s_basis.T) @ rep.s_basis
    assert np.max(np.abs(resid)) <= 1e-9 * max(1.0, np.abs(net.reaction_vectors).max())


def test_complex_balance_at_two_two(dimer):
    rep = is_complex_balanced(dimer, [2.0, 2.0])
    assert rep.complex_balanced and rep.residual == 0.0
    for inflow, outflow in rep.per_complex_flux.values():
        assert abs(inflow - 4.0) <= 1e-12 and abs(outflow - 4.0) <= 1e-12


def test_complex_balance_fails_at_one_one(dimer):
    rep = is_complex_balanced(dimer, [1.0, 1.0])
    assert not rep.complex_balanced
    flux = {c.coeffs: f for c, f in rep.per_complex_flux.items()}
    assert flux[(2, 0)] == (2.0, 1.0)  # (inflow, outflow)
    assert flux[(0, 1)] == (1.0, 2.0)
    assert {c.coeffs for c in rep.violations()} == {(2, 0), (0, 1)}


def test_complex_balance_rejects_nonpositive(dimer):
    with pytest.raises(ValueError):
        is_complex_balanced(dimer, [0.0, 1.0])


def test_find_equilibrium_dimer(dimer):
    rep = find_equilibrium(dimer, [1.0, 1.0])
    x = rep.point
    assert rep.complex_balanced
    assert abs(x[0] ** 2 - 2 * x[1]) <= 1e-10
    rep = find_equilibrium(dimer, [2.0, 2.0])
    assert rep.residual == 0.0 and np.array_equal(rep.point, [2.0, 2.0])


def test_find_equilibrium_without_positive_equilibrium():
    with pytest.raises(ConvergenceError) as info:
        find_equilibrium(parse_network("A -> B : rate=1, delay=0"), [1.0, 1.0])
    assert info.value.last_iterate is not None


@pytest.mark.parametrize("name", sorted(CORPUS_EQUILIBRIA))
def test_corpus_reference_points_are_complex_balanced(name):
    net = corpus(name)
    assert is_complex_balanced(net, CORPUS_EQUILIBRIA[name]).complex_balanced


@pytest.mark.parametrize("name", sorted(CORPUS_EQUILIBRIA))
def test_cb_implies_weak_reversibility_on_corpus(name):
    net = corpus(name)
    rep = find_equilibrium(net, np.ones(net.n_species))
    if rep.complex_balanced:
        assert stoichiometric_subspace(net).weakly_reversible


def test_not_weakly_reversible_never_complex_balanced():
    net = parse_network("A -> B : rate=1\nB -> C : rate=1\nA -> C : rate=2")
    rng = np.random.default_rng(0)
    for x in rng.uniform(0.01, 10, size=(200, 3)):
        assert not is_complex_balanced(net, x).complex_balanced


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(sorted(CORPUS_EQUILIBRIA)), st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_cb_implies_equilibrium_and_closure(name, lam):
    net = corpus(name)
    rep = stoichiometric_subspace(net)
    x_bar = np.array(CORPUS_EQUILIBRIA[name])
    d = rep.s_perp_basis.shape[0]
    # a point of the equilibrium set and an arbitrary point
    on_set = np.exp(np.log(x_bar) + np.asarray(lam[:d]) @ rep.s_perp_basis) if d else x_bar
    off_set = x_bar * np.exp(np.asarray(lam[: net.n_species]) / 3)
    for x in (on_set, off_set):
        cb = is_complex_balanced(net, x)
        if cb.complex_balanced:
            scale = max(1.0, max(max(f) for f in cb.per_complex_flux.values()))
            assert np.linalg.norm(equilibrium_rhs(net, x)) <= 1e-9 * scale
        if equilibrium_set_membership(net, x_bar, x, rep):
            assert cb.complex_balanced
    assert equilibrium_set_membership(net, x_bar, on_set, rep)


def test_equilibrium_set_membership_examples(dimer):
    assert equilibrium_set_membership(dimer, [2, 2], [1.0, 0.5])
    assert equilibrium_set_membership(dimer, [2, 2], [2.0, 2.0])
    assert not equilibrium_set_membership(dimer, [2, 2], [1.0, 1.0])
    with pytest.raises(NotComplexBalancedError):
        equilibrium_set_membership(dimer, [1, 1], [1.0, 0.5])


def test_report_json_keys(dimer):
    d = stoichiometric_subspace(dimer).to_dict()
    assert {"s_basis", "s_perp_basis", "deficiency", "weakly_reversible"} <= set(d)
    e = is_complex_balanced(dimer, [2, 2]).to_dict(dimer.species)
    assert set(e["per_complex_flux"]) == {"2 X1", "X2"}
