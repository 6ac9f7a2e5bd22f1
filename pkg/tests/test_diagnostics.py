import math
import random

import numpy as np
import pytest

from featalloc import (
    AibdParams,
    ChainSample,
    DecayFunction,
    DistanceMatrix,
    FeatureAllocation,
    IbpParams,
    LglfmData,
    NoiseScales,
    ValidationError,
    ddibp_feature_count_pmf,
    log_likelihood,
    sample_aibd,
    sample_ibp,
)
from featalloc.diagnostics import (
    CorrelationAccumulator,
    SharingAccumulator,
    accuracy_from_counts,
    accuracy_report,
    dic,
    feature_count_histogram,
    permutation_diagnostics,
    sharing_summary,
    squared_correlation,
)


def aibd(n=5, tau=1.0, alpha=1.0, perm=None):
    return AibdParams.build(alpha, DistanceMatrix.temporal(n), DecayFunction("exponential"), tau, perm)


def chain_of(zs, loglik=None, rhos=None):
    out = []
    for t, z in enumerate(zs):
        n = z.n_customers
        rho = rhos[t] if rhos is not None else tuple(range(1, n + 1))
        ll = loglik[t] if loglik is not None else 0.0
        out.append(ChainSample(t + 1, tuple(z.to_strings()), 1.0, 1.0, rho, 0.5, 0.5, ll, 0.0))
    return out


class TestSharing:
    def test_hand_example(self):
        draws = [FeatureAllocation([[1], [1], [0]]), FeatureAllocation.empty(3)]
        s = sharing_summary(draws)
        assert s.pair_means[0, 1] == 0.5 and s.pair_means[1, 0] == 0.5
        assert s.pair_means[0, 2] == 0.0
        assert s.overall_mean == pytest.approx(1 / 6)
        assert s.customers_per_feature == 2.0

    def test_no_features(self):
        assert sharing_summary([FeatureAllocation.empty(3)] * 4).customers_per_feature is None

    def test_needs_draws(self):
        with pytest.raises(ValidationError):
            sharing_summary([])

    def test_merge_equals_pooled(self, rng):
        p = aibd()
        draws = [sample_aibd(p, rng) for _ in range(200)]
        a, b = SharingAccumulator(5), SharingAccumulator(5)
        for z in draws[:120]:
            a.update(z)
        for z in draws[120:]:
            b.update(z)
        merged = a.merge(b).summary()
        pooled = sharing_summary(draws)
        np.testing.assert_allclose(merged.pair_means, pooled.pair_means)
        assert merged.overall_mean == pytest.approx(pooled.overall_mean)

    @pytest.mark.parametrize("tau", [0.2, 5.0])
    def test_overall_mean_is_half_alpha(self, rng, tau):
        s = sharing_summary(sample_aibd(aibd(tau=tau, alpha=1.2), rng) for _ in range(20000))
        assert abs(s.overall_mean - 0.6) < 3 * s.overall_se

    def test_accepts_chain_samples(self):
        s = sharing_summary(chain_of([FeatureAllocation([[1], [1]])] * 2))
        assert s.pair_means[0, 1] == 1.0


class TestSquaredCorrelation:
    def test_identical_rows(self):
        draws = [FeatureAllocation([[1, 0], [1, 0], [0, 1]]), FeatureAllocation([[1], [1], [1]])]
        r2 = squared_correlation(draws)
        assert r2[0, 1] == pytest.approx(1.0)
        assert r2[0, 0] == 1.0

    def test_zero_variance_row(self):
        draws = [FeatureAllocation([[1, 0], [1, 1]]), FeatureAllocation([[0, 1], [1, 1]])]
        r2 = squared_correlation(draws)
        assert r2[0, 1] == 0.0 and r2[1, 1] == 0.0

    def test_complementary_rows(self):
        draws = [FeatureAllocation([[1, 0], [0, 1]])] * 2
        assert squared_correlation(draws)[0, 1] == pytest.approx(1.0)

    def test_needs_two_draws(self):
        with pytest.raises(ValidationError):
            squared_correlation([FeatureAllocation([[1], [0]])])

    def test_merge(self, rng):
        draws = [sample_ibp(IbpParams(2.0, 4), rng) for _ in range(50)]
        a, b = CorrelationAccumulator(4), CorrelationAccumulator(4)
        for z in draws[:20]:
            a.update(z)
        for z in draws[20:]:
            b.update(z)
        np.testing.assert_allclose(a.merge(b).result(), squared_correlation(draws))


class TestAccuracy:
    def test_exact_counts_give_small_error(self):
        # Frequencies 1/2 at K=0 and K=1 against Poisson(1): errors |e^-1 - 1/2| etc.
        r = accuracy_from_counts([0, 1], [0, 1], 1.0, 1)
        assert r.max_feature_prob_error == pytest.approx(max(abs(math.exp(-1) - 0.5), math.exp(-1) / 2))
        assert r.mean_active_feature_error == pytest.approx(0.5)

    def test_error_shrinks_with_sample_size(self, rng):
        p = aibd(n=6, tau=2.0)
        errs = []
        for m in (1000, 10000, 100000):
            errs.append(accuracy_report((sample_aibd(p, rng) for _ in range(m)), 1.0, 6))
        for small, large in zip(errs, errs[1:]):
            # Shrinks like m^(-1/2) up to a slack factor of 2.
            assert large.max_feature_prob_error < 2 * small.max_feature_prob_error / math.sqrt(10) * 2
            assert large.mean_active_feature_error < 2 * small.mean_active_feature_error + 0.05

    def test_customer_mismatch(self):
        with pytest.raises(ValidationError):
            accuracy_report([FeatureAllocation([[1]])], 1.0, 3)


class TestDic:
    def test_hand_value(self):
        # Deviances 2 and 6: mean 4, variance 8, penalty 4.
        assert dic([-1.0, -3.0]) == pytest.approx(8.0)

    def test_order_invariant(self, rng):
        ll = list(rng.normal(-50, 3, size=200))
        shuffled = ll[:]
        random.Random(1).shuffle(shuffled)
        assert dic(ll) == dic(shuffled)

    def test_needs_two(self):
        with pytest.raises(ValidationError):
            dic([-1.0])

    def test_recomputes_from_data(self, rng):
        x = rng.normal(size=(3, 2))
        zs = [FeatureAllocation([[1], [0], [1]]), FeatureAllocation([[1, 0], [1, 1], [0, 1]])]
        data = LglfmData(x)
        ll = [log_likelihood(z, data, NoiseScales(0.5, 0.5)) for z in zs]
        chain = chain_of(zs, loglik=[0.0, 0.0])
        assert dic(chain, data) == pytest.approx(dic(ll))


class TestHistogram:
    def test_tiny_mass(self, rng):
        assert feature_count_histogram(sample_aibd(aibd(alpha=1e-12), rng) for _ in range(50)) == {0: 1.0}

    def test_sums_to_one(self, rng):
        h = feature_count_histogram(sample_ibp(IbpParams(1.0, 4), rng) for _ in range(500))
        assert sum(h.values()) == pytest.approx(1.0)

    def test_identity_proximity_mean(self):
        mean = sum(k * ddibp_feature_count_pmf(k, 1.5, np.eye(4)) for k in range(80))
        assert mean == pytest.approx(6.0, rel=1e-12)


class TestPermutationDiagnostics:
    def test_fixed_order(self):
        z = FeatureAllocation.empty(4)
        out = permutation_diagnostics(chain_of([z] * 5))
        np.testing.assert_array_equal(out["position_sd"], np.zeros(4))
        np.testing.assert_allclose(out["first_half_mean"], 1.5)
        np.testing.assert_allclose(out["odd_mean"], 2.0)

    def test_positions_from_order(self):
        z = FeatureAllocation.empty(3)
        out = permutation_diagnostics(chain_of([z, z], rhos=[(1, 2, 3), (3, 2, 1)]))
        # Customer 1 sits at positions 1 then 3.
        assert out["position_sd"][0] == pytest.approx(1.0)
        assert out["position_sd"][1] == 0.0
        np.testing.assert_allclose(out["first_half_mean"], [1.0, 2.0])

    def test_empty(self):
        with pytest.raises(ValidationError):
            permutation_diagnostics([])
