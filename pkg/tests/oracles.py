"""Reference implementations kept deliberately naive, for cross-checking."""

import itertools
import math

import numpy as np


def gp_per_round(grid, history, ell, sigma2=0.25):
    """Textbook heteroscedastic GP: one training row per round, explicit inverse."""
    rows = [(m, n, v) for m, n, v in history if n > 0]
    g = np.asarray(grid, dtype=float)
    if not rows:
        return np.zeros(len(g)), np.ones(len(g))
    x = np.array([r[0] for r in rows], dtype=float)
    n = np.array([r[1] for r in rows], dtype=float)
    y = np.array([r[2] for r in rows], dtype=float) / n
    k = lambda a, b: np.exp(-np.subtract.outer(a, b) ** 2 / (2 * ell * ell))
    inv = np.linalg.inv(k(x, x) + np.diag(sigma2 / n))
    ks = k(x, g)
    mean = ks.T @ inv @ y
    var = 1.0 - np.einsum("ij,ik,kj->j", ks, inv, ks)
    return mean, np.maximum(var, 0.0)


def best_partition_value(V):
    """Brute force over every leader assignment: follower j -> leader i or itself."""
    V = np.asarray(V, dtype=float)
    P = V.shape[0]
    best = -math.inf
    for owner in itertools.product(range(P), repeat=P):
        # owner[j] == j: j is alone or a leader; otherwise j follows owner[j]
        leaders = {o for j, o in enumerate(owner) if o != j}
        if any(owner[l] != l for l in leaders):
            continue
        best = max(best, sum(V[owner[j], j] for j in range(P)))
    return best
