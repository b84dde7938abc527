"""Fixture condivise e oracolo di controllo a cicli espliciti."""

import itertools
import math

import numpy as np
import pytest

from polyscale.model import STEP_VECTORS, GibbsParams, power_law
from polyscale.sampler import SampleBatch, SampleMeta


@pytest.fixture
def kernel15():
    return power_law(1.5)


@pytest.fixture
def kernel2():
    return power_law(2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def brute_force_chain(n, beta_eff, kernel):
    """Z, medie e covarianze della catena con cicli Python (solo per i test)"""
    weights, states = [], []
    for spins in itertools.product((1, -1), repeat=n):
        energy = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                energy += float(kernel.value(j - i)) * spins[i] * spins[j]
        weights.append(math.exp(beta_eff * energy))
        states.append(spins)
    z = math.fsum(weights)
    probs = np.array(weights) / z
    s = np.array(states, dtype=float)
    means = probs @ s
    second = (s * probs[:, None]).T @ s
    return z, means, second - np.outer(means, means)


def brute_force_polymer(g: GibbsParams):
    """Z ed E||S_N||^2 del polimero con cicli Python (solo per i test)"""
    n = g.n
    weights, ends = [], []
    for codes in itertools.product(range(4), repeat=n):
        x = [STEP_VECTORS[c] for c in codes]
        energy = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                energy += float(g.kernel.value(j - i)) * int(x[i] @ x[j])
        weights.append(math.exp(g.kernel.sign * g.beta * energy))
        end = np.sum(x, axis=0)
        ends.append(float(end @ end))
    z = math.fsum(weights)
    return z, math.fsum(w * e for w, e in zip(weights, ends)) / z


def make_batch(sigma1, sigma2, algorithm="synthetic"):
    return SampleBatch(np.asarray(sigma1, dtype=np.int8), np.asarray(sigma2, dtype=np.int8),
                       SampleMeta(algorithm))


@pytest.fixture
def srw_batch(rng):
    """Passeggiate semplici iid (beta = 0) come SampleBatch"""
    def build(count, n):
        return make_batch(rng.choice([-1, 1], size=(count, n)), rng.choice([-1, 1], size=(count, n)))
    return build


@pytest.fixture
def chain_oracle():
    return brute_force_chain


@pytest.fixture
def polymer_oracle():
    return brute_force_polymer


@pytest.fixture
def batch_factory():
    return make_batch
