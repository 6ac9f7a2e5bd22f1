import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from featalloc import DecayFunction, DistanceMatrix, ValidationError, evaluate, similarity_matrix, validate_axioms
from featalloc.similarity import ZERO_DISTANCE_JITTER

# Pairwise distances of five states, given to two decimals.
STATE_PAIRS = {(0, 1): 0.12, (0, 2): 0.66, (0, 3): 3.74, (0, 4): 3.78, (1, 2): 0.59,
               (1, 3): 3.65, (1, 4): 3.69, (2, 3): 3.32, (2, 4): 3.46, (3, 4): 1.01}
STATE_SIMILARITY_TAU1 = np.array([
    [1.00, 0.89, 0.51, 0.02, 0.02],
    [0.89, 1.00, 0.55, 0.03, 0.02],
    [0.51, 0.55, 1.00, 0.04, 0.03],
    [0.02, 0.03, 0.04, 1.00, 0.36],
    [0.02, 0.02, 0.03, 0.36, 1.00],
])


def state_distances():
    d = np.zeros((5, 5))
    for (i, j), v in STATE_PAIRS.items():
        d[i, j] = d[j, i] = v
    return DistanceMatrix(d)


ALL_DECAYS = [DecayFunction("constant", const=2.0), DecayFunction("exponential"),
              DecayFunction("reciprocal", shift=0.5), DecayFunction("window")]


class TestEvaluate:
    def test_exponential_tau1(self):
        assert evaluate(DecayFunction("exponential"), 1.0, 0.12) == pytest.approx(0.887, abs=5e-4)

    def test_exponential_tau5(self):
        assert evaluate(DecayFunction("exponential"), 5.0, 0.12) == pytest.approx(0.549, abs=5e-4)

    def test_reciprocal(self):
        assert evaluate(DecayFunction("reciprocal", shift=2.0), 2.0, 1.0) == pytest.approx(1 / 9)

    def test_constant(self):
        assert evaluate(DecayFunction("constant", const=3.0), 4.0, 7.0) == 3.0

    @pytest.mark.parametrize("d, expected", [(0.4, 1.0), (0.5, 1.0), (0.6, 0.0)])
    def test_window(self, d, expected):
        assert evaluate(DecayFunction("window"), 2.0, d) == expected

    def test_window_at_zero_temperature(self):
        assert evaluate(DecayFunction("window"), 0.0, 1e6) == 1.0

    @pytest.mark.parametrize("f", ALL_DECAYS, ids=lambda f: f.kind)
    def test_zero_temperature_is_constant(self, f):
        vals = [evaluate(f, 0.0, d) for d in (0.0, 0.3, 2.0, 50.0)]
        assert vals[0] > 0 and all(v == vals[0] for v in vals)

    @pytest.mark.parametrize("tau, d", [(-1.0, 1.0), (1.0, -0.1)])
    def test_negative_inputs(self, tau, d):
        with pytest.raises(ValidationError):
            evaluate(DecayFunction("exponential"), tau, d)

    @pytest.mark.parametrize("kw", [{"kind": "reciprocal", "shift": 0.0}, {"kind": "constant", "const": -1.0},
                                    {"kind": "gaussian"}])
    def test_bad_decay(self, kw):
        with pytest.raises(ValidationError):
            DecayFunction(**kw)


class TestDistanceMatrix:
    def test_rejects_asymmetric(self):
        with pytest.raises(ValidationError):
            DistanceMatrix([[0, 1], [2, 0]])

    def test_rejects_nonzero_diagonal(self):
        with pytest.raises(ValidationError):
            DistanceMatrix([[1, 1], [1, 0]])

    def test_rejects_negative(self):
        with pytest.raises(ValidationError):
            DistanceMatrix([[0, -1], [-1, 0]])

    def test_rejects_non_square(self):
        with pytest.raises(ValidationError):
            DistanceMatrix([[0, 1, 2], [1, 0, 1]])

    def test_zero_distance_warns(self):
        with pytest.warns(UserWarning):
            DistanceMatrix([[0, 0], [0, 0]])

    def test_jitter(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            D = DistanceMatrix([[0, 0], [0, 0]], jitter=True)
        assert D.d[0, 1] == ZERO_DISTANCE_JITTER and D.d[0, 0] == 0

    def test_temporal(self):
        D = DistanceMatrix.temporal(4, scale=4)
        assert D.d[0, 3] == 0.75 and D.d[2, 1] == 0.25

    def test_from_points(self):
        D = DistanceMatrix.from_points([[0, 0], [3, 4]])
        assert D.d[0, 1] == 5.0


class TestSimilarityMatrix:
    def test_constant_all_equal(self):
        S = similarity_matrix(state_distances(), DecayFunction("constant", const=0.7), 3.0)
        assert np.all(S.lam == 0.7)

    def test_five_state_similarities(self):
        S = similarity_matrix(state_distances(), DecayFunction("exponential"), 1.0)
        # The inputs are themselves rounded to 0.01, hence the tolerance.
        np.testing.assert_allclose(S.lam, STATE_SIMILARITY_TAU1, atol=0.01)

    def test_window_indicator(self):
        D = DistanceMatrix([[0, 0.4, 0.6], [0.4, 0, 0.6], [0.6, 0.6, 0]])
        S = similarity_matrix(D, DecayFunction("window"), 2.0)
        assert S.lam[0, 1] == 1.0 and S.lam[0, 2] == 0.0

    @given(st.lists(st.floats(0, 10), min_size=2, max_size=6), st.floats(0, 5),
           st.sampled_from(["constant", "exponential", "reciprocal"]))
    def test_symmetric_positive_diagonal(self, pts, tau, kind):
        D = DistanceMatrix.from_points(np.array(pts)[:, None], jitter=True)
        S = similarity_matrix(D, DecayFunction(kind), tau)
        np.testing.assert_array_equal(S.lam, S.lam.T)
        assert np.all(np.diag(S.lam) > 0)


class TestAxioms:
    @pytest.mark.parametrize("f", ALL_DECAYS, ids=lambda f: f.kind)
    def test_builtins_pass(self, f):
        rep = validate_axioms(f, [0, 0.1, 0.5, 1, 2, 5], [0, 0.05, 0.3, 0.5, 1, 2, 10])
        assert rep.passed, rep.violations

    def test_increasing_function_fails_monotone(self):
        rep = validate_axioms(lambda t, d: 1 + t * d, [0, 1], [0, 1, 2])
        assert not rep.monotone and "monotone" in rep.violations

    def test_non_constant_at_zero_fails(self):
        rep = validate_axioms(lambda t, d: math.exp(-(t + 1) * d), [0, 1], [0, 1])
        assert not rep.constant_at_zero

    def test_tempered_violation(self):
        # Higher temperature flattens this family, the opposite of what is required.
        rep = validate_axioms(lambda t, d: math.exp(-d / (1 + t)) if t else 1.0, [0, 1, 2], [0, 1, 2])
        assert not rep.tempered

    def test_empty_grid(self):
        with pytest.raises(ValidationError):
            validate_axioms(DecayFunction("exponential"), [], [1.0])

    @given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 10), st.floats(0, 10),
           st.sampled_from(["exponential", "reciprocal", "window"]))
    def test_temperature_accentuates_distance(self, t1, t2, d1, d2, kind):
        t1, t2 = sorted((t1, t2))
        d1, d2 = sorted((d1, d2))
        f = DecayFunction(kind)
        a1, a2 = f(t1, d1), f(t1, d2)
        b1, b2 = f(t2, d1), f(t2, d2)
        # f(t,d1)/f(t,d2) is nondecreasing in t, written without division.
        assert a1 * b2 <= b1 * a2 * (1 + 1e-12) + 1e-300
