import numpy as np
import pytest

from berkdemand.berkson import BerksonSpec, expect_eps, gauss_hermite_rule, make_rule

SPEC = BerksonSpec(sigma_by_region={"west": 0.0339, "east": 0.02, "zero": 0.0})


class TestMakeRule:
    def test_zero_sigma_degenerate(self):
        rule = make_rule(SPEC, "zero")
        np.testing.assert_array_equal(rule.nodes, [0.0])
        np.testing.assert_array_equal(rule.weights, [1.0])

    def test_weights_sum_to_one(self):
        rule = make_rule(SPEC, "west")
        assert abs(rule.weights.sum() - 1.0) < 1e-14

    def test_second_moment_matches_sigma(self):
        sigma = 0.0339
        rule = gauss_hermite_rule(sigma, 21)
        m2 = float(rule.weights @ rule.nodes**2)
        assert abs(m2 - sigma**2) < 1e-10

    def test_nodes_symmetric_and_zero_included(self):
        rule = make_rule(SPEC, "east")
        np.testing.assert_allclose(rule.nodes, -rule.nodes[::-1], atol=1e-15)
        assert np.min(np.abs(rule.nodes)) < 1e-15  # odd count includes 0

    def test_deterministic(self):
        r1, r2 = make_rule(SPEC, "west"), make_rule(SPEC, "west")
        np.testing.assert_array_equal(r1.nodes, r2.nodes)
        np.testing.assert_array_equal(r1.weights, r2.weights)

    def test_unknown_region(self):
        with pytest.raises(KeyError):
            make_rule(SPEC, "XX")

    def test_global_factor_scales_sigma(self):
        scaled = SPEC.scaled(1.2)
        assert scaled.sigma("west") == pytest.approx(0.0339 * 1.2)
        m2 = float(np.dot(make_rule(scaled, "west").weights, make_rule(scaled, "west").nodes ** 2))
        assert m2 == pytest.approx((0.0339 * 1.2) ** 2, abs=1e-10)


class TestExpectEps:
    def test_constant(self):
        rule = gauss_hermite_rule(0.1, 11)
        assert expect_eps(rule, lambda e: np.full_like(e, 3.7)) == pytest.approx(3.7)

    def test_odd_function_vanishes(self):
        rule = gauss_hermite_rule(0.2, 15)
        assert abs(expect_eps(rule, lambda e: e)) < 1e-14

    def test_fourth_moment(self):
        sigma = 0.07
        rule = gauss_hermite_rule(sigma, 5)
        assert abs(expect_eps(rule, lambda e: e**4) - 3 * sigma**4) < 1e-9

    def test_polynomial_exactness(self):
        # Gauss-Hermite with k nodes integrates degrees <= 2k - 1 exactly.
        sigma = 0.5
        rule = gauss_hermite_rule(sigma, 7)
        # E[eps^k] for N(0, sigma^2): 0 odd, sigma^k (k-1)!! even
        moments = {0: 1.0, 2: sigma**2, 4: 3 * sigma**4, 6: 15 * sigma**6,
                   8: 105 * sigma**8, 10: 945 * sigma**10, 12: 10395 * sigma**12}
        for k, expected in moments.items():
            got = expect_eps(rule, lambda e, k=k: e**k)
            assert got == pytest.approx(expected, rel=1e-12, abs=1e-15), f"degree {k}"

    def test_degenerate_rule_evaluates_at_zero(self):
        rule = gauss_hermite_rule(0.0, 21)
        assert expect_eps(rule, lambda e: np.cos(e)) == 1.0

    def test_non_finite_integrand_rejected(self):
        rule = gauss_hermite_rule(0.1, 5)
        with pytest.raises(ValueError, match="not finite"):
            expect_eps(rule, lambda e: np.where(e > 0, np.inf, 1.0))


class TestSpecValidation:
    def test_even_nodes_rejected(self):
        with pytest.raises(ValueError):
            BerksonSpec(sigma_by_region={"all": 0.05}, n_nodes=20)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            BerksonSpec(sigma_by_region={"all": -0.01})

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError):
            BerksonSpec(sigma_by_region={"all": 0.05}, family="laplace")

    def test_json_round_trip(self):
        spec = BerksonSpec(sigma_by_region={"a": 0.1, "b": 0.0}, n_nodes=11, global_factor=0.8)
        assert BerksonSpec.from_dict(spec.to_dict()) == spec

    def test_zeroed_spec(self):
        z = SPEC.zeroed()
        assert set(z.sigma_by_region) == set(SPEC.sigma_by_region)
        assert all(v == 0.0 for v in z.sigma_by_region.values())
