"""Test di somme parziali, blocchi, statistiche delle ipotesi e processi riscalati."""

import math

import numpy as np
import pandas as pd
import pytest

from polyscale.errors import InsufficientDataError, ValidationError
from polyscale.model import GibbsParams, Polymer, SpinChainPair, polymer_to_spins, power_law, rotate
from polyscale.oracle import enumerate_chain
from polyscale.paths import (ANCHOR_BULK, ANCHOR_FIRST, FRAME_POLYMER, FRAME_ROTATED, LITERAL, UNIT_COVARIANCE,
                             BlockScheme, block_schedule, brownian_taxicab_mean_square, build_w_path,
                             chi_from_covariance, condition_envelope, emit_paths, hypothesis_stats,
                             lag_covariances, make_blocks, marginal_samples, partial_sums, path_marginals,
                             sigma_from_chi, stabilized_partial_sum, taxicab_mean_square)
from polyscale.sampler import SamplerConfig, sample_chain


class TestPartialSums:
    """Somme parziali S_k."""

    def test_chain(self):
        assert partial_sums([1, -1, 1]).tolist() == [0, 1, 0, 1]

    def test_polymer(self):
        assert partial_sums(Polymer.from_steps([0, 1])).tolist() == [[0, 0], [1, 0], [1, 1]]

    def test_all_plus(self):
        assert partial_sums(np.ones(5, dtype=np.int8)).tolist() == [0, 1, 2, 3, 4, 5]

    def test_empty(self):
        with pytest.raises(ValidationError):
            partial_sums([])


class TestBlocks:
    """Schema a blocchi e condizione ell^3/m."""

    def test_block_size(self):
        scheme = BlockScheme.from_block_size(10, 3)
        assert (scheme.m, scheme.leftover) == (3, 1)
        assert make_blocks(np.ones(10), scheme).tolist() == [3, 3, 3]

    def test_delta_schedule(self):
        scheme = BlockScheme.from_delta(4096, 0.2)
        assert (scheme.ell, scheme.m) == (5, 819)
        assert scheme.condition_ratio == pytest.approx(125 / 819)

    def test_envelope_decreasing(self):
        ns = [2 ** k for k in range(10, 21)]
        env = [condition_envelope(n, 0.2) for n in ns]
        assert all(a > b for a, b in zip(env, env[1:]))
        for scheme in block_schedule(ns, 0.2):
            assert scheme.condition_ratio <= condition_envelope(scheme.n, 0.2) * (1 + 1e-12)

    def test_invalid_delta(self):
        with pytest.raises(ValidationError):
            BlockScheme.from_delta(100, 0.3)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            make_blocks(np.ones(9), BlockScheme.from_block_size(10, 3))


class TestSusceptibility:
    """Stime di chi."""

    def test_from_covariance_first(self):
        cov = np.array([[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]])
        assert chi_from_covariance(cov, 2, ANCHOR_FIRST) == pytest.approx(1 + 2 * (0.5 + 0.25))

    def test_from_covariance_bulk(self):
        cov = np.array([[1.0, 0.4, 0.0], [0.4, 1.0, 0.6], [0.0, 0.6, 1.0]])
        assert chi_from_covariance(cov, 1, ANCHOR_BULK) == pytest.approx(1 + 2 * 0.5)

    def test_bulk_matches_direct(self, rng):
        x = rng.choice([-1, 1], size=(50, 12)).astype(np.int8)
        fast = lag_covariances(x, 4, ANCHOR_BULK)
        cov = np.cov(x.astype(float), rowvar=False)
        direct = [np.diagonal(cov, k).mean() for k in range(5)]
        assert np.allclose(fast, direct, atol=1e-10)

    def test_sigma_normalizations(self):
        assert sigma_from_chi(2.0, UNIT_COVARIANCE) == pytest.approx(1.0)
        assert sigma_from_chi(2.0, LITERAL) == pytest.approx(math.sqrt(2.0))

    def test_sigma_fallback(self):
        assert sigma_from_chi(-0.5, LITERAL) == pytest.approx(1.0)


class TestHypothesisStats:
    """Statistiche delle ipotesi su catene campionate."""

    def test_iid_chains(self, srw_batch):
        batch = srw_batch(2000, 64)
        stats = hypothesis_stats(batch, BlockScheme.from_delta(64, 0.2))
        count = 2 * len(batch)
        assert stats.n_samples == count
        assert abs(stats.var_ratio - 1) < 5 / math.sqrt(count)
        assert abs(stats.block_var_ratio - 1) < 5 / math.sqrt(count)
        assert stats.chi_hat == pytest.approx(1.0, abs=0.1)
        assert stats.third_moment_max == 1.0

    def test_too_few_samples(self):
        with pytest.raises(InsufficientDataError):
            hypothesis_stats(np.ones((1, 8)), BlockScheme.from_delta(8, 0.2))

    @pytest.mark.slow
    def test_var_ratio_against_oracle(self):
        kernel = power_law(2.0)
        g = GibbsParams(1.0, kernel, 10)
        batch = sample_chain(g, SamplerConfig(seed=4, burn_in_sweeps=200, thinning_sweeps=3,
                                              n_samples=2000, replicas=4))
        stats = hypothesis_stats(batch, BlockScheme.from_delta(10, 0.2), kernel=kernel)
        exact = enumerate_chain(g, g.chain_beta).extras["var_ratio"]
        assert abs(stats.var_ratio - exact) < 3 * stats.var_ratio_se + 0.02


class TestPaths:
    """Processo riscalato W_n(t)."""

    def test_straight_polymer(self):
        path = build_w_path(Polymer.from_steps([0, 0, 0, 0]), 1.0)
        assert path.value(1.0).tolist() == [2.0, 0.0]
        assert path.value(0.0).tolist() == [0.0, 0.0]

    def test_nodes_exact(self, rng):
        p = Polymer(rng.integers(0, 4, size=16))
        path = build_w_path(p, 1.5)
        sites = p.sites()
        for k in (0, 3, 16):
            assert np.allclose(path.value(k / 16), sites[k] / (1.5 * 4), atol=1e-14)

    def test_interpolation(self):
        path = build_w_path(Polymer.from_steps([0, 1]), 1.0)
        assert np.allclose(path.value(0.75), np.array([1.0, 0.5]) / math.sqrt(2))

    def test_rotated_frame(self, rng):
        p = Polymer(rng.integers(0, 4, size=9))
        rotated = build_w_path(polymer_to_spins(p), 1.0)
        lattice = build_w_path(p, 1.0)
        for t in (0.3, 1.0):
            assert np.allclose(rotated.value(t), rotate(lattice.value(t)))

    def test_chain_path(self):
        path = build_w_path(np.array([1, 1, -1, 1]), 1.0)
        assert path.dim == 1
        assert path.value(1.0).tolist() == [1.0]

    def test_bad_sigma(self):
        with pytest.raises(ValidationError):
            build_w_path(Polymer.from_steps([0]), 0.0)

    def test_bad_t(self):
        with pytest.raises(ValidationError):
            build_w_path(Polymer.from_steps([0]), 1.0).value(1.5)

    def test_marginal_point_mass(self):
        paths = [build_w_path(Polymer.from_steps([0] * 4), 1.0)] * 2
        m = marginal_samples(paths, 1.0)
        assert m.size == 2
        assert np.allclose(m.atoms, [[2.0, 0.0], [2.0, 0.0]])
        assert np.allclose(m.weights, 0.5)


class TestPathMarginals:
    """Versione vettoriale dei valori W_n(t) su un batch."""

    @pytest.mark.parametrize("frame", [FRAME_POLYMER, FRAME_ROTATED])
    def test_matches_single_paths(self, srw_batch, frame):
        batch = srw_batch(6, 10)
        ts = [0.25, 0.5, 1.0]
        values = path_marginals(batch, ts, 1.3, frame)
        for k, (p, pair) in enumerate(zip(batch.polymers(), batch.pairs())):
            path = build_w_path(p if frame == FRAME_POLYMER else pair, 1.3)
            assert np.allclose(values[:, k], path.values(ts))

    def test_unknown_frame(self, srw_batch):
        with pytest.raises(ValidationError):
            path_marginals(srw_batch(2, 4), [1.0], 1.0, "polar")

    def test_stabilized_sum(self):
        chains = np.array([[1, 1, -1, 1], [-1, -1, -1, -1]])
        assert stabilized_partial_sum(chains, 0.5, 1.0).tolist() == [1.0, -1.0]

    def test_taxicab(self):
        assert taxicab_mean_square(np.array([[1.0, -1.0], [0.0, 2.0]])) == pytest.approx(4.0)
        assert brownian_taxicab_mean_square(1.0) == pytest.approx(2 + 4 / math.pi)

    @pytest.mark.slow
    def test_srw_taxicab_near_brownian(self, srw_batch):
        batch = srw_batch(20000, 256)
        values = path_marginals(batch, [1.0], sigma_from_chi(1.0, UNIT_COVARIANCE), FRAME_POLYMER)[0]
        assert taxicab_mean_square(values) == pytest.approx(brownian_taxicab_mean_square(1.0), rel=0.05)

    def test_emit(self, tmp_path):
        paths = [build_w_path(Polymer.from_steps([0, 1, 2]), 1.0) for _ in range(2)]
        out = tmp_path / "paths.csv"
        emit_paths(paths, out)
        frame = pd.read_csv(out)
        assert list(frame.columns) == ["path", "t", "w1", "w2"]
        assert len(frame) == 8


class TestSpinChainPairPath:
    """Il sistema ruotato usa sqrt(2n)."""

    def test_scale(self):
        pair = SpinChainPair([1, 1], [1, 1])
        assert np.allclose(build_w_path(pair, 1.0).value(1.0), [1.0, 1.0])
