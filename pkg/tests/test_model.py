"""Test del modello: Hamiltoniana, biiezione polimero/catene, kernel."""

import itertools
import math

import numpy as np
import pytest

from polyscale.errors import ValidationError
from polyscale.model import (AS_WRITTEN, STEP_SPINS, STEP_VECTORS, GibbsParams, Polymer, SpinChainPair, Step,
                             chain_log_weight, custom, finite_range, gibbs_log_weight, hamiltonian, polymer_sites,
                             polymer_to_spins, power_law, random_polymer, rotate, rotate_inverse, spins_to_codes,
                             spins_to_polymer)
from polyscale.oracle import chain_index, polymer_codes


class TestHamiltonian:
    """Valori esatti di H_N su configurazioni piccole."""

    def test_straight_line_alpha_two(self, kernel2):
        """(e1, e1, e1) con alpha=2: 1 + 1 + 1/4."""
        p = Polymer.from_steps([Step.E1] * 3)
        assert hamiltonian(p, kernel2) == pytest.approx(2.25, abs=1e-12)

    def test_single_step_has_zero_energy(self, kernel15):
        assert hamiltonian(Polymer.from_steps([Step.E2]), kernel15) == 0.0

    def test_orthogonal_steps_do_not_interact(self, kernel15):
        p = Polymer.from_steps([Step.E1, Step.E2, Step.E1, Step.E2])
        expected = 2 * 2.0 ** -1.5
        assert hamiltonian(p, kernel15) == pytest.approx(expected, abs=1e-12)

    def test_reversal_is_antialigned(self, kernel2):
        p = Polymer.from_steps([Step.E1, Step.MINUS_E1])
        assert hamiltonian(p, kernel2) == pytest.approx(-1.0)

    def test_beta_zero_log_weight(self, kernel15, rng):
        g = GibbsParams(0.0, kernel15, 8)
        assert gibbs_log_weight(random_polymer(8, rng), g) == 0.0


class TestBijection:
    """La rotazione T manda polimeri in coppie di catene e viceversa."""

    def test_roundtrip_exhaustive(self):
        """Tutti i 4^4 polimeri tornano identici."""
        for codes in itertools.product(range(4), repeat=4):
            p = Polymer.from_steps(codes)
            assert spins_to_polymer(polymer_to_spins(p)) == p

    def test_step_spins(self):
        s = polymer_to_spins(Polymer.from_steps([Step.E1, Step.E2, Step.MINUS_E1, Step.MINUS_E2]))
        assert s.sigma1.tolist() == [1, -1, -1, 1]
        assert s.sigma2.tolist() == [1, 1, -1, -1]

    def test_vectorized_codes_match(self, rng):
        s1 = rng.choice([-1, 1], size=(5, 7))
        s2 = rng.choice([-1, 1], size=(5, 7))
        codes = spins_to_codes(s1, s2)
        for k in range(5):
            assert np.array_equal(codes[k], spins_to_polymer(SpinChainPair(s1[k], s2[k])).steps)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            SpinChainPair([1, 1], [1])

    def test_non_unit_spin_rejected(self):
        with pytest.raises(ValidationError):
            SpinChainPair([1, 0], [1, 1])

    def test_step_inner_products_exhaustive(self):
        """<X_a, X_b> = (sigma1_a sigma1_b + sigma2_a sigma2_b) / 2 per tutte le 16 coppie."""
        for a, b in itertools.product(range(4), repeat=2):
            dot = int(STEP_VECTORS[a] @ STEP_VECTORS[b])
            spins = int(STEP_SPINS[a, 0]) * int(STEP_SPINS[b, 0]) + int(STEP_SPINS[a, 1]) * int(STEP_SPINS[b, 1])
            assert 2 * dot == spins

    @pytest.mark.parametrize("n", range(1, 9))
    def test_bijection_every_length(self, n):
        codes = polymer_codes(n)
        spins = STEP_SPINS[codes]
        assert np.array_equal(spins_to_codes(spins[..., 0], spins[..., 1]), codes)
        keys = chain_index(spins[..., 0]) * 2 ** n + chain_index(spins[..., 1])
        assert np.unique(keys).size == 4 ** n

    def test_rotation_is_isometry(self, rng):
        pts = rng.normal(size=(20, 2))
        rotated = rotate(pts)
        assert np.allclose(np.linalg.norm(rotated, axis=1), np.linalg.norm(pts, axis=1))
        assert np.allclose(rotated @ rotated.T, pts @ pts.T)

    def test_rotation_inverse(self, rng):
        pts = rng.normal(size=(10, 2))
        assert np.allclose(rotate_inverse(rotate(pts)), pts)

    def test_rotation_of_sites(self):
        """sqrt2 * T(S_N) = (somma di sigma1, somma di sigma2)."""
        p = Polymer.from_steps([0, 1, 1, 2, 3, 0])
        s = polymer_to_spins(p)
        rotated = rotate(polymer_sites(p)[-1]) * math.sqrt(2.0)
        assert rotated[0] == pytest.approx(s.sigma1.sum())
        assert rotated[1] == pytest.approx(s.sigma2.sum())


class TestFactorization:
    """Il peso del polimero si fattorizza nei pesi delle due catene con beta/2."""

    def test_chain_examples(self, kernel2):
        assert chain_log_weight([1, -1], 1.0, kernel2) == pytest.approx(-1.0)
        assert chain_log_weight([1, 1, 1], 0.5, kernel2) == pytest.approx(1.125)

    @pytest.mark.parametrize("beta", [0.3, 1.7])
    def test_weight_factorizes(self, kernel15, rng, beta):
        g = GibbsParams(beta, kernel15, 12)
        for _ in range(20):
            p = random_polymer(12, rng)
            s = polymer_to_spins(p)
            split = (chain_log_weight(s.sigma1, g.chain_beta, kernel15)
                     + chain_log_weight(s.sigma2, g.chain_beta, kernel15))
            assert gibbs_log_weight(p, g) == pytest.approx(split, abs=1e-10)

    def test_as_written_flips_sign(self):
        k = power_law(1.5, AS_WRITTEN)
        g = GibbsParams(1.0, k, 3)
        assert g.chain_beta == -0.5
        p = Polymer.from_steps([0, 0, 0])
        assert gibbs_log_weight(p, g) == pytest.approx(-hamiltonian(p, k))


class TestKernels:
    """Costruttori e tabelle dei kernel."""

    def test_power_law_table(self, kernel2):
        assert kernel2.table(4).tolist() == pytest.approx([0.0, 1.0, 0.25, 1 / 9])

    def test_alpha_out_of_range(self):
        with pytest.raises(ValidationError):
            power_law(1.0)

    def test_finite_range(self):
        k = finite_range(2, 0.5)
        assert k.table(5).tolist() == [0.0, 0.5, 0.5, 0.0, 0.0]

    def test_custom_monotone_flag(self):
        assert custom([1.0, 0.5, 0.0]).is_monotone
        assert not custom([0.5, 1.0, 0.0]).is_monotone

    def test_custom_negative_rejected(self):
        with pytest.raises(ValidationError):
            custom([1.0, -0.1])

    def test_tail_sum(self, kernel2):
        assert kernel2.tail_sum(1, 4) == pytest.approx(0.25 + 1 / 9)
        assert kernel2.tail_sum(5, 4) == 0.0

    def test_negative_beta_rejected(self, kernel15):
        with pytest.raises(ValidationError):
            GibbsParams(-0.1, kernel15, 4)


class TestPolymer:
    """Costruzione e misure del polimero."""

    def test_sites_and_end_to_end(self):
        p = Polymer.from_steps([0, 0, 1, 2])
        assert polymer_sites(p).tolist() == [[0, 0], [1, 0], [2, 0], [2, 1], [1, 1]]
        assert p.end_to_end().tolist() == [1, 1]
        assert p.end_to_end_l1() == 2

    def test_from_sites(self):
        p = Polymer.from_sites([[0, 0], [0, 1], [-1, 1]])
        assert p.steps.tolist() == [1, 2]

    def test_non_unit_vector_rejected(self):
        with pytest.raises(ValidationError):
            Polymer.from_vectors([[1, 1]])
