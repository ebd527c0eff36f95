"""Reference computations used as independent oracles by the test suite.

Nothing here shares code with the package: likelihoods are summed over every
hidden path explicitly, expansions are built with itertools.product on names,
and band edges are computed directly from mu and sigma.
"""

import itertools
import math

import numpy as np


def brute_force_loglik(A, B, pi, seq):
    """log P(seq) by enumerating all N**T hidden-state paths."""
    A, B, pi = (np.asarray(x, dtype=float) for x in (A, B, pi))
    n = len(pi)
    total = 0.0
    for path in itertools.product(range(n), repeat=len(seq)):
        p = pi[path[0]] * B[path[0], seq[0]]
        for t in range(1, len(seq)):
            p *= A[path[t - 1], path[t]] * B[path[t], seq[t]]
        total += p
    return math.log(total)


def random_stochastic(rng, rows, cols):
    m = rng.random((rows, cols)) + 1e-3
    return m / m.sum(axis=1, keepdims=True)


def cartesian_names(vectors):
    """Every way to pick one name per step, steps sorted by the given code order."""
    return [list(choice) for choice in itertools.product(*vectors)]


def band_edges(mu, sigma):
    return mu - 2 * sigma, mu + 2 * sigma
