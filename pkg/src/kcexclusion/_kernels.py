"""numba kernels for the direct-method simulation.

The bond rates live in the leaves of a binary sum tree (``size`` leaves, a
power of two, root at index 1).  Parents are always recomputed from their
children, so the total never drifts.
"""

import numpy as np
from numba import njit

REACHED = 0  # observation time reached
BLOCKED = 1  # total rate is zero
NEED_UNIFORMS = 2  # uniform buffer exhausted
MAX_EVENTS = 3


@njit(cache=True)
def constraint_at(eta, x, Ls, F, lmax):
    """c(tau_x eta) from left/right cumulative counts around the node {x, x+1}."""
    n = eta.shape[0]
    left = np.zeros(lmax + 1, np.int64)
    right = np.zeros(lmax + 1, np.int64)
    for i in range(1, lmax + 1):
        left[i] = left[i - 1] + eta[(x - i) % n]
        right[i] = right[i - 1] + eta[(x + 1 + i) % n]
    c = 0.0
    for k in range(Ls.shape[0]):
        L = Ls[k]
        for j in range(L + 1):
            c += F[k, j, left[j] + right[L - j]]
    return c


@njit(cache=True)
def bond_rate_at(eta, x, Ls, F, lmax, pert, scale):
    n = eta.shape[0]
    if eta[x] == eta[(x + 1) % n]:
        return 0.0
    return scale * (constraint_at(eta, x, Ls, F, lmax) + pert)


@njit(cache=True)
def tree_set(tree, size, x, value):
    i = size + x
    tree[i] = value
    i >>= 1
    while i >= 1:
        tree[i] = tree[2 * i] + tree[2 * i + 1]
        i >>= 1


@njit(cache=True)
def rebuild(eta, tree, size, Ls, F, lmax, pert, scale):
    n = eta.shape[0]
    tree[:] = 0.0
    for x in range(n):
        tree[size + x] = bond_rate_at(eta, x, Ls, F, lmax, pert, scale)
    for i in range(size - 1, 0, -1):
        tree[i] = tree[2 * i] + tree[2 * i + 1]


@njit(cache=True)
def tree_find(tree, size, target):
    i = 1
    while i < size:
        left = tree[2 * i]
        if target < left:
            i = 2 * i
        else:
            target -= left
            i = 2 * i + 1
    return i - size


@njit(cache=True)
def advance(eta, tree, size, Ls, F, lmax, pert, scale, t, t_target,
            uniforms, pos, max_events):
    """Run events until ``t_target``.  Returns (t, pos, status, events).

    The event that would overshoot ``t_target`` is discarded; by the memoryless
    property the next call simply draws a fresh waiting time.
    """
    n = eta.shape[0]
    radius = lmax + 1
    nu = uniforms.shape[0]
    events = 0
    since_rebuild = 0
    while True:
        if events >= max_events:
            return t, pos, MAX_EVENTS, events
        total = tree[1]
        if total <= 0.0:
            return t, pos, BLOCKED, events
        if pos + 2 > nu:
            return t, pos, NEED_UNIFORMS, events
        u1 = uniforms[pos]
        u2 = uniforms[pos + 1]
        pos += 2
        dt = -np.log1p(-u1) / total
        if t + dt > t_target:
            return t_target, pos, REACHED, events
        t += dt
        x = tree_find(tree, size, u2 * total)
        while x >= n or tree[size + x] <= 0.0:
            # only possible through roundoff at the right edge
            if pos + 1 > nu:
                return t, pos, NEED_UNIFORMS, events
            x = tree_find(tree, size, uniforms[pos] * total)
            pos += 1
        y = (x + 1) % n
        tmp = eta[x]
        eta[x] = eta[y]
        eta[y] = tmp
        for d in range(-radius, radius + 1):
            z = (x + d) % n
            tree_set(tree, size, z, bond_rate_at(eta, z, Ls, F, lmax, pert, scale))
        events += 1
        since_rebuild += 1
        if since_rebuild >= 1 << 20:
            rebuild(eta, tree, size, Ls, F, lmax, pert, scale)
            since_rebuild = 0
