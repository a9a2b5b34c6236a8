import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from invpde.terms import (CONSTANT, Factor, Library, LibraryMode, Target, VarKind, build_library, canonicalize,
                          enumerate_candidates, evaluate_term, galilean_filter, lorentz_filter, make_vars,
                          pinned_terms_for, scalar_vars, string_to_term, term, term_to_string, velocity_vars)

UV = velocity_vars()
PHI = scalar_vars(["phi"])
PHI12 = scalar_vars(["phi1", "phi2"])

BURGERS_LIB = ["1", "u*u_x", "v*u_y", "u*v_x", "v*v_y", "u_x", "u_y", "u_xx", "u_xy", "u_yy",
               "v_x", "v_y", "v_xx", "v_xy", "v_yy"]
KG_LIB = ["1", "phi_xx", "phi_yy", "phi", "phi^2", "phi^3"]
COUPLED_LIB_PRINTED = ["1", "phi1_xx", "phi1_yy", "phi2_xx", "phi2_yy", "phi1", "phi1^2", "phi1^3",
                       "phi1*phi2^2", "phi2", "phi2^2", "phi2^3", "phi1^2*phi2"]


def names(lib):
    return {term_to_string(t) for t in lib.all_terms()}


def test_overcomplete_sizes():
    assert len(enumerate_candidates(UV, 2)) == 110
    assert len(enumerate_candidates(PHI, 2)) == 24


def test_one_dimensional_small_library():
    u = make_vars(["u"], [VarKind.VELOCITY])
    got = [term_to_string(t) for t in enumerate_candidates(u, 1, max_degree=1, max_deriv_order=1)]
    assert got == ["1", "u", "u_x", "u*u_x"]


def test_galilean_golden():
    lib = build_library(LibraryMode.GALILEAN, UV, 2)
    assert names(lib) == set(BURGERS_LIB)
    assert len(lib) == 15
    pins = pinned_terms_for(lib)
    assert {term_to_string(t) for t in pins["u"]} == {"u*u_x", "v*u_y"}
    assert {term_to_string(t) for t in pins["v"]} == {"u*v_x", "v*v_y"}


def test_lorentz_golden():
    lib = build_library(LibraryMode.LORENTZ, PHI, 2)
    assert names(lib) == set(KG_LIB)
    assert {term_to_string(t) for t in pinned_terms_for(lib)["phi"]} == {"phi_xx", "phi_yy"}
    assert lib.target is Target.SECOND


def test_coupled_lorentz_contains_the_cross_term():
    lib = build_library(LibraryMode.LORENTZ, PHI12, 2)
    got = names(lib)
    # every printed term is present, plus the degree-2 cross monomial
    assert set(COUPLED_LIB_PRINTED) <= got
    assert got - set(COUPLED_LIB_PRINTED) == {"phi1*phi2"}


def test_three_dimensional_counts():
    v = velocity_vars(("u", "v", "w"), pressure="p")
    lib = build_library(LibraryMode.GALILEAN, v, 3)
    assert len(lib) == 40
    assert "p_x" in names(lib) and "p_xx" not in names(lib)


def test_pinned_for_overcomplete_raises():
    with pytest.raises(ValueError):
        pinned_terms_for(build_library(LibraryMode.OVERCOMPLETE, UV, 2))


def test_canonical_merging_and_order():
    u, v = UV
    t1 = term(Factor(v, (0, 0)), Factor(u, (1, 0)), Factor(u, (1, 0)))
    assert term_to_string(t1) == "v*u_x^2"
    t2 = canonicalize([Factor(u, (0, 0), 2), Factor(u, (0, 0))])
    assert term_to_string(t2) == "u^3"
    assert term_to_string(CONSTANT) == "1"


@given(st.sampled_from(enumerate_candidates(UV, 2)))
def test_string_round_trip(t):
    assert string_to_term(term_to_string(t), UV, 2) == t


@given(st.permutations(list(range(3))))
def test_canonical_form_is_order_free(perm):
    u, v = UV
    fs = [Factor(u, (0, 0)), Factor(v, (0, 1)), Factor(v, (0, 0))]
    assert canonicalize([fs[i] for i in perm]) == canonicalize(fs)


def test_string_errors():
    with pytest.raises(ValueError):
        string_to_term("w_x", UV, 2)
    with pytest.raises(ValueError):
        string_to_term("u_z", UV, 2)
    with pytest.raises(ValueError):
        string_to_term("u+v", UV, 2)


def test_evaluate_term():
    jet = {"u": np.array([2.0, 3.0]), "u_x": np.array([5.0, 7.0])}
    t = string_to_term("u^2*u_x", UV, 2)
    np.testing.assert_array_equal(evaluate_term(t, jet), [20.0, 63.0])
    np.testing.assert_array_equal(evaluate_term(CONSTANT, jet), [1.0, 1.0])
    with pytest.raises(KeyError, match="v_y"):
        evaluate_term(string_to_term("v_y", UV, 2), jet)


def test_library_json_round_trip():
    for lib in (build_library("galilean", UV, 2), build_library("lorentz", PHI12, 2),
                build_library("overcomplete", PHI, 2)):
        back = Library.from_json(lib.to_json())
        assert back.terms == lib.terms and back.pinned == lib.pinned
        assert back.mode is lib.mode and back.target is lib.target
        json.loads(lib.to_json())


def test_filters_reject_wrong_kinds():
    with pytest.raises(ValueError):
        galilean_filter(enumerate_candidates(PHI, 2), PHI)
    with pytest.raises(ValueError):
        lorentz_filter(enumerate_candidates(UV, 2), UV)
    with pytest.raises(ValueError):
        enumerate_candidates(UV, 4)


@settings(max_examples=30)
@given(st.integers(1, 3), st.integers(1, 2))
def test_filtered_libraries_are_subsets(deg, order):
    cands = set(enumerate_candidates(UV, 2, deg, order))
    lib = galilean_filter(sorted(cands, key=lambda t: t.sort_key()), UV)
    assert set(lib.all_terms()) <= cands
