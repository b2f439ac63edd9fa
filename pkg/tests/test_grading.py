import itertools
import math

import numpy as np
import pytest

from orbitnf.grading import (
    ContractionBudgetError,
    Spectrum,
    SubResStructure,
    contraction_factor,
    degree_bound,
    enumerate_types,
    spectral_gap_lambda,
)


def spec(chi, mults=None, eps=0.01, tol=1e-9):
    if mults is None:
        mults = (1,) * len(chi)
    return Spectrum(tuple(chi), tuple(mults), eps, tol)


# brute-force admissibility, written independently of the library helpers
def brute_types(chi, n, tol):
    ell = len(chi)
    out = set()
    for s in itertools.product(range(n + 1), repeat=ell):
        if sum(s) != n:
            continue
        w = sum(a * b for a, b in zip(s, chi))
        for i in range(1, ell + 1):
            if chi[i - 1] <= w + tol:
                out.add((i, s))
    return out


def brute_lambda(chi, tol, max_degree):
    best = -math.inf
    ell = len(chi)
    for n in range(1, max_degree + 1):
        for s in itertools.product(range(n + 1), repeat=ell):
            if sum(s) != n:
                continue
            w = sum(a * b for a, b in zip(s, chi))
            for i in range(1, ell + 1):
                if not (chi[i - 1] <= w + tol):
                    best = max(best, -chi[i - 1] + w)
    return best


class TestDegreeBound:
    def test_two_to_one(self):
        assert degree_bound(spec((-2.0, -1.0))) == 2

    def test_scalar(self):
        assert degree_bound(spec((-1.0,))) == 1

    def test_three_blocks(self):
        assert degree_bound(spec((-3.5, -1.2, -1.0))) == 3

    def test_float_ratio_at_exact_resonance(self):
        # ratio representable only approximately; tolerance keeps the floor stable
        s = spec((-0.3, -0.1))
        assert degree_bound(s) == 3


class TestEnumerateTypes:
    def test_linear_types_two_blocks(self):
        s = spec((-2.0, -1.0))
        assert enumerate_types(s, 1) == {(1, (1, 0)), (1, (0, 1)), (2, (0, 1))}

    def test_resonant_quadratic(self):
        s = spec((-2.0, -1.0))
        assert enumerate_types(s, 2) == {(1, (0, 2))}

    def test_scalar_no_quadratic(self):
        assert enumerate_types(spec((-1.0,)), 2) == frozenset()

    @pytest.mark.parametrize(
        "chi",
        [(-2.0, -1.0), (-1.0, -0.4), (-1.0,), (-3.5, -1.2, -1.0), (-2.5, -1.1, -0.7)],
    )
    def test_matches_bruteforce(self, chi):
        s = spec(chi)
        for n in range(1, 7):
            assert enumerate_types(s, n) == brute_types(chi, n, s.resonance_tol)

    @pytest.mark.parametrize("chi", [(-2.0, -1.0), (-1.0, -0.4), (-3.5, -1.2, -1.0)])
    def test_empty_above_degree_bound(self, chi):
        s = spec(chi)
        d = degree_bound(s)
        for n in range(d + 1, d + 4):
            assert enumerate_types(s, n) == frozenset()

    def test_no_dependence_on_faster_blocks(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            ell = int(rng.integers(1, 4))
            chi = tuple(sorted(-rng.uniform(0.3, 3.0, size=ell)))
            if any(b - a < 0.05 for a, b in zip(chi, chi[1:])):
                continue
            s = spec(chi, eps=0.0)
            for n in range(1, degree_bound(s) + 1):
                for i, stype in enumerate_types(s, n):
                    assert all(stype[j] == 0 for j in range(i - 1))

    def test_scaling_invariance(self):
        base = (-2.0, -1.0, -0.75)
        s0 = spec(base)
        d0 = degree_bound(s0)
        sets0 = {n: enumerate_types(s0, n) for n in range(1, d0 + 2)}
        for c in (0.5, 2.0, 7.3):
            sc = spec(tuple(c * x for x in base))
            assert degree_bound(sc) == d0
            for n, types in sets0.items():
                assert enumerate_types(sc, n) == types


class TestSpectralGap:
    def test_examples(self):
        assert spectral_gap_lambda(spec((-2.0, -1.0))) == pytest.approx(-1.0, abs=1e-12)
        assert spectral_gap_lambda(spec((-1.0,))) == pytest.approx(-1.0, abs=1e-12)
        assert spectral_gap_lambda(spec((-1.0, -0.4))) == pytest.approx(-0.2, abs=1e-12)

    def test_attained_at_expected_type(self):
        # for (-1, -0.4) the max sits at the non-admissible type (1, (0, 3))
        chi = (-1.0, -0.4)
        assert -chi[0] + 3 * chi[1] == pytest.approx(
            spectral_gap_lambda(spec(chi)), abs=1e-12
        )

    def test_matches_bruteforce_random(self):
        rng = np.random.default_rng(11)
        count = 0
        while count < 20:
            ell = int(rng.integers(1, 4))
            chi = tuple(sorted(-rng.uniform(0.3, 3.0, size=ell)))
            if any(b - a < 0.05 for a, b in zip(chi, chi[1:])):
                continue
            count += 1
            s = spec(chi, eps=0.0)
            lam = spectral_gap_lambda(s)
            # enumerating far past where -chi_1 + n*chi_ell < lam is enough
            max_deg = int(math.ceil((abs(lam) - chi[0]) / abs(chi[-1]))) + 2
            assert lam == pytest.approx(
                brute_lambda(chi, s.resonance_tol, max_deg), abs=1e-12
            )
            assert lam < 0


class TestContractionFactor:
    def test_example(self):
        s = spec((-2.0, -1.0), eps=0.05)
        assert contraction_factor(s, 2) == pytest.approx(math.exp(-0.85), rel=1e-12)
        assert contraction_factor(s, 2) == pytest.approx(0.4274149319487267, rel=1e-10)

    def test_eps_zero_limit(self):
        s = spec((-1.0,), eps=0.0)
        assert contraction_factor(s, 2) == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_non_contraction_signal(self):
        # lambda = -0.2, eps = 0.06 passes the (d+1) budget at d = 2 but fails n = 3
        s = spec((-1.0, -0.4), eps=0.06)
        assert contraction_factor(s, 2) < 1
        with pytest.raises(ContractionBudgetError):
            contraction_factor(s, 3)


class TestSpectrumValidation:
    def test_rejects_epsilon_over_budget(self):
        with pytest.raises(ContractionBudgetError):
            spec((-1.0, -0.4), eps=0.1)

    def test_rejects_nonnegative_exponent(self):
        with pytest.raises(ValueError):
            spec((-1.0, 0.1))

    def test_rejects_unsorted(self):
        with pytest.raises(ValueError):
            spec((-1.0, -2.0))

    def test_rejects_coarse_resonance_tol(self):
        # resonance values of (-2, -1) are integer spaced; 1.5 straddles a gap
        with pytest.raises(ValueError):
            spec((-2.0, -1.0), tol=1.5)

    def test_rejects_bad_multiplicity(self):
        with pytest.raises(ValueError):
            Spectrum((-1.0,), (0,), 0.01)


class TestSubResStructure:
    def test_structure_contents(self):
        s = spec((-2.0, -1.0), eps=0.05)
        st = SubResStructure.from_spectrum(s)
        assert st.degree_bound == 2
        assert st.admissible(1) == {(1, (1, 0)), (1, (0, 1)), (2, (0, 1))}
        assert st.admissible(2) == {(1, (0, 2))}
        assert st.admissible(3) == frozenset()
        assert st.is_admissible(1, (0, 2))
        assert not st.is_admissible(2, (1, 0))
        assert st.spectral_gap == pytest.approx(-1.0, abs=1e-12)
