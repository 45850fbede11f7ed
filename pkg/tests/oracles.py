"""Brute-force references for the greedy batch selection."""

import numpy as np


def penalty_matrix(nodes, l_psi):
    d2 = np.sum((nodes[:, None, :] - nodes[None, :, :]) ** 2, axis=2)
    return 1.0 - np.exp(-0.5 * d2 / l_psi)


def exhaustive_lexicographic(scores, nodes, n_new, l_psi, exclusions=()):
    """Best ordered tuple under the lexicographic penalised objective.

    Objective of (x1, .., xn): (s(x1), s(x2) psi_x1(x2), s(x3) psi_x1(x3) psi_x2(x3), ...),
    compared lexicographically; ties resolved by the lexicographically smallest
    index tuple. Every ordered tuple of distinct eligible nodes is evaluated.
    """
    m = scores.size
    s = scores.astype(float).copy()
    valid = np.ones(m, dtype=bool)
    valid[list(exclusions)] = False
    s[~valid] = 0.0
    psi = penalty_matrix(nodes, l_psi)
    best_obj, best_tuple = None, None
    idx = np.arange(m)
    if n_new == 2:
        c1 = np.where(valid, s, -np.inf)
        c2 = s[None, :] * psi  # c2[x1, x2]
        ok = valid[:, None] & valid[None, :] & (idx[:, None] != idx[None, :])
        c2 = np.where(ok, c2, -np.inf)
        full1 = np.broadcast_to(c1[:, None], c2.shape).ravel()
        full2 = c2.ravel()
        order = np.lexsort((-np.arange(full1.size), full2, full1))
        flat = order[-1]
        return [int(flat // m), int(flat % m)]
    if n_new == 3:
        pair_ok = valid[:, None] & valid[None, :] & (idx[:, None] != idx[None, :])
        mask = np.where(pair_ok, 0.0, -np.inf)
        c3 = np.empty((m, m))
        for x1 in range(m):
            if not valid[x1]:
                continue
            w = s * psi[x1]
            c2 = np.where(valid & (idx != x1), w, -np.inf)
            np.multiply(psi, w[None, :], out=c3)  # c3[x2, x3] = s(x3) psi_x1(x3) psi_x2(x3)
            c3 += mask
            c3[x1, :] = -np.inf
            c3[:, x1] = -np.inf
            # Lexicographic maximum over all (x2, x3): first component, then second.
            rows = np.flatnonzero(c2 == c2.max())
            sub = c3[rows]
            r, x3 = np.unravel_index(np.argmax(sub), sub.shape)
            obj = (s[x1], c2[rows[r]], sub[r, x3])
            tup = (x1, int(rows[r]), int(x3))
            if best_obj is None or obj > best_obj:
                best_obj, best_tuple = obj, tup
        return list(best_tuple)
    raise ValueError("oracle implemented for n_new in (2, 3)")


def synthetic_fields(rng, nodes):
    """Uniform noise, a few Gaussian bumps, and a smooth oscillating field."""
    x, y = nodes.T
    yield rng.uniform(0, 1, nodes.shape[0])
    bumps = np.zeros(nodes.shape[0])
    for cx, cy, h in rng.uniform([0, 0, 0.5], [2, 1, 1.5], (4, 3)):
        bumps += h * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / 0.05)
    yield bumps
    yield np.abs(np.sin(3 * x) * np.cos(5 * y)) + 0.01 * rng.uniform(0, 1, nodes.shape[0])
