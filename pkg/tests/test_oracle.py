"""Test dell'oracolo esatto: forme chiuse, controllo incrociato, fattorizzazione."""

import math

import numpy as np
import pytest

from polyscale.errors import EnumerationLimitError, ValidationError
from polyscale.model import GibbsParams, Polymer, gibbs_log_weight, power_law
from polyscale.oracle import (CHAIN_MAX_N, POLYMER_MAX_N, association_matrix, chain_probabilities,
                              chain_states, check_positive_association, enumerate_chain, enumerate_polymer,
                              magnetization_moments, max_pair, monotone_family, newman_wright_gap, partial_sum,
                              polymer_chain_indices, polymer_codes, polymer_probabilities, site, threshold,
                              window_sum)


class TestChainEnumeration:
    """Misura di catena esatta."""

    def test_beta_zero(self, kernel15):
        s = enumerate_chain(GibbsParams(0.0, kernel15, 4), 0.0)
        assert s.log_z == pytest.approx(4 * math.log(2))
        assert np.allclose(s.site_means, 0.0)
        assert np.allclose(s.pair_covariances, np.eye(4))

    def test_two_sites(self, kernel2):
        s = enumerate_chain(GibbsParams(2.0, kernel2, 2), 1.0)
        assert math.exp(s.log_z) == pytest.approx(2 * math.e + 2 / math.e)
        assert s.pair_covariances[0, 1] == pytest.approx(math.tanh(1.0), abs=1e-12)

    @pytest.mark.parametrize("beta_eff", [0.5, -0.3])
    def test_matches_plain_loops(self, kernel2, chain_oracle, beta_eff):
        s = enumerate_chain(GibbsParams(1.0, kernel2, 3), beta_eff)
        z, means, cov = chain_oracle(3, beta_eff, kernel2)
        assert s.log_z == pytest.approx(math.log(z), abs=1e-12)
        assert np.allclose(s.site_means, means, atol=1e-12)
        assert np.allclose(s.pair_covariances, cov, atol=1e-12)

    def test_probabilities_sum_to_one(self, kernel15):
        probs = chain_probabilities(GibbsParams(1.0, kernel15, 6), 0.4)
        assert probs.shape == (64,)
        assert math.fsum(probs) == pytest.approx(1.0, abs=1e-12)

    def test_state_ordering(self):
        states = chain_states(3)
        assert states[0].tolist() == [1, 1, 1]
        assert states[1].tolist() == [-1, 1, 1]
        assert states[4].tolist() == [1, 1, -1]

    def test_var_ratio(self, kernel15):
        s = enumerate_chain(GibbsParams(1.0, kernel15, 5), 0.3)
        assert s.extras["var_ratio"] == pytest.approx(s.pair_covariances.sum() / 5)

    def test_magnetization_bounds(self, kernel15):
        m_abs, m_sq = magnetization_moments(GibbsParams(1.0, kernel15, 8), 1.0)
        assert 0 < m_abs <= 1
        assert m_abs ** 2 <= m_sq + 1e-12

    def test_cap(self, kernel15):
        with pytest.raises(EnumerationLimitError):
            enumerate_chain(GibbsParams(1.0, kernel15, CHAIN_MAX_N + 1), 0.5)


class TestPolymerEnumeration:
    """Misura del polimero esatta."""

    def test_srw_end_to_end(self, kernel15):
        s = enumerate_polymer(GibbsParams(0.0, kernel15, 5))
        assert s.extras["end_to_end_sq"] == pytest.approx(5.0, abs=1e-12)

    def test_uniform_at_beta_zero(self, kernel15):
        s = enumerate_polymer(GibbsParams(0.0, kernel15, 3))
        assert np.allclose(s.probabilities, 1 / 64, atol=1e-15)

    def test_matches_plain_loops(self, kernel15, polymer_oracle):
        g = GibbsParams(0.8, kernel15, 4)
        s = enumerate_polymer(g)
        z, end_sq = polymer_oracle(g)
        assert s.log_z == pytest.approx(math.log(z), abs=1e-12)
        assert s.extras["end_to_end_sq"] == pytest.approx(end_sq, abs=1e-10)

    def test_probability_matches_weight(self, kernel15):
        g = GibbsParams(1.3, kernel15, 4)
        s = enumerate_polymer(g)
        codes = polymer_codes(4)
        for k in (0, 17, 200):
            expected = math.exp(gibbs_log_weight(Polymer(codes[k]), g) - s.log_z)
            assert s.probabilities[k] == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("alpha", [1.2, 1.5, 2.0])
    @pytest.mark.parametrize("beta", [0.0, 0.25, 0.5, 1.0, 2.0])
    @pytest.mark.parametrize("n", range(2, 9))
    def test_factorization(self, alpha, beta, n):
        """P(polimero) = P1(sigma1) P2(sigma2) con beta_eff = beta/2."""
        g = GibbsParams(beta, power_law(alpha), n)
        poly = enumerate_polymer(g).probabilities
        chain = chain_probabilities(g, g.chain_beta)
        i1, i2 = polymer_chain_indices(n)
        assert np.max(np.abs(poly - chain[i1] * chain[i2])) < 1e-12

    def test_probabilities_helper(self, kernel15):
        g = GibbsParams(0.7, kernel15, 3)
        assert np.array_equal(polymer_probabilities(g), enumerate_polymer(g).probabilities)
        with pytest.raises(EnumerationLimitError):
            polymer_probabilities(GibbsParams(0.7, kernel15, 9))

    def test_cap(self, kernel15):
        with pytest.raises(EnumerationLimitError):
            enumerate_polymer(GibbsParams(1.0, kernel15, POLYMER_MAX_N + 1))


class TestAssociation:
    """Associazione positiva e disuguaglianza di Newman-Wright."""

    def test_independent_sites(self, kernel15):
        g = GibbsParams(0.0, kernel15, 3)
        assert check_positive_association(g, 0.0, site(0), site(1)) == pytest.approx(0.0, abs=1e-15)

    def test_two_sites(self, kernel2):
        g = GibbsParams(2.0, kernel2, 2)
        assert check_positive_association(g, 1.0, site(0), site(1)) == pytest.approx(math.tanh(1.0))

    def test_total_with_first_site(self, kernel15):
        g = GibbsParams(0.8, kernel15, 8)
        assert check_positive_association(g, 0.4, partial_sum(8), site(0)) >= 0

    def test_family_nonnegative(self, kernel15):
        g = GibbsParams(1.0, kernel15, 7)
        cov = association_matrix(g, 0.5, monotone_family(7))
        assert cov.min() >= -1e-12

    def test_monotone_functions(self):
        states = np.array([[1, -1, 1, 1]])
        assert window_sum(1, 3).evaluate(states).tolist() == [1.0]
        assert threshold(2, 0.0).evaluate(states).tolist() == [1.0]
        assert threshold(2, 1.0).evaluate(states).tolist() == [0.0]
        assert max_pair(1, 2).evaluate(states).tolist() == [1.0]
        assert max_pair(1, 1).evaluate(states).tolist() == [-1.0]

    def test_incompatible_function(self, kernel15):
        with pytest.raises(ValidationError):
            association_matrix(GibbsParams(0.5, kernel15, 3), 0.5, [site(5)])

    def test_newman_wright_independent(self, kernel15):
        lhs, rhs = newman_wright_gap(GibbsParams(0.0, kernel15, 4), 0.0, [0.3, -1.0, 2.0, 0.5])
        assert lhs == pytest.approx(0.0, abs=1e-12)
        assert rhs == 0.0

    def test_newman_wright_two_sites(self, kernel2):
        lhs, rhs = newman_wright_gap(GibbsParams(2.0, kernel2, 2), 1.0, [1.0, 1.0])
        assert rhs == pytest.approx(math.tanh(1.0))
        assert lhs <= rhs + 1e-12

    def test_newman_wright_holds(self):
        lhs, rhs = newman_wright_gap(GibbsParams(0.6, power_law(1.5), 6), 0.3, [0.5] * 6)
        assert lhs <= rhs + 1e-10

    def test_newman_wright_length(self, kernel15):
        with pytest.raises(ValidationError):
            newman_wright_gap(GibbsParams(0.6, kernel15, 3), 0.3, [0.5, 0.5])


@pytest.mark.slow
class TestRandomCouplings:
    """Disuguaglianze verificate su accoppiamenti estratti a caso."""

    @staticmethod
    def _draw(rng):
        n = int(rng.integers(2, 13))
        beta_eff = float(rng.uniform(0.0, 1.0))
        alpha = float(rng.uniform(1.05, 2.0))
        return GibbsParams(2 * beta_eff, power_law(alpha), n), beta_eff

    def test_newman_wright(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            g, beta_eff = self._draw(rng)
            r = rng.normal(size=g.n) * rng.uniform(0.1, 3.0)
            lhs, rhs = newman_wright_gap(g, beta_eff, r)
            assert lhs <= rhs + 1e-10, (g, beta_eff, r)

    def test_positive_association(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            g, beta_eff = self._draw(rng)
            cov = association_matrix(g, beta_eff, monotone_family(g.n))
            assert cov.min() >= -1e-12, (g, beta_eff)
