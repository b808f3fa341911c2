"""Independent reference implementations used only by the tests.

Nothing here imports from the package under test.
"""
import math
from collections import deque

import numpy as np


def algorithm1_literal(p, S, T):
    """Line-by-line transcription of the spike-pruning / running-max procedure.

    Indices are 1-based like the pseudo-code; the window is clamped to [1, n]
    and a length-1 trace is passed through unfiltered.
    """
    n = len(p)
    B = [None] + list(p)  # B[1..n]
    r = [None] * (n + 1)
    RMP = 0
    for i in range(1, n + 1):
        W = [B[j] for j in range(max(1, i - S), min(n, i + S) + 1) if j != i]
        if not W:
            r[i] = B[i]
            continue
        W.sort()
        m = len(W)
        if m % 2 == 1:
            M = W[m // 2]
        else:
            M = (W[m // 2 - 1] + W[m // 2]) / 2
        if B[i] - M > T:
            r[i] = 0
        else:
            r[i] = B[i]
    for i in range(1, n + 1):
        if r[i] > RMP:
            temp = r[i]
            r[i] = r[i] - RMP
            RMP = temp
        else:
            r[i] = 0
    return [float(x) for x in r[1:]]


def kl_uniform_to(p):
    """KL(U || p) with U uniform over len(p) outcomes."""
    n = len(p)
    return sum((1.0 / n) * math.log((1.0 / n) / q) for q in p)


def bfs_shortest(start, neighbors, is_goal):
    """Plain breadth-first search; returns (cost, path of states) or (None, None)."""
    if is_goal(start):
        return 0, [start]
    parent = {start: None}
    q = deque([start])
    while q:
        s = q.popleft()
        for nxt in neighbors(s):
            if nxt in parent:
                continue
            parent[nxt] = s
            if is_goal(nxt):
                path = [nxt]
                while parent[path[-1]] is not None:
                    path.append(parent[path[-1]])
                path.reverse()
                return len(path) - 1, path
            q.append(nxt)
    return None, None


def discounted_gae_bruteforce(rewards, values, dones, last_value, gamma, lam):
    """GAE by explicit double sum over TD errors (no recursion)."""
    n = len(rewards)
    next_values = list(values[1:]) + [last_value]
    deltas = [rewards[t] + gamma * next_values[t] * (1.0 - dones[t]) - values[t] for t in range(n)]
    adv = []
    for t in range(n):
        total = 0.0
        coef = 1.0
        for k in range(t, n):
            total += coef * deltas[k]
            if dones[k]:
                break
            coef *= gamma * lam
        adv.append(total)
    returns = [a + v for a, v in zip(adv, values)]
    return adv, returns


def directional_fd_error(params_of, loss_of, grads, rng, n_dirs=64, h=1e-6):
    """Worst relative gap between analytic and central-difference directional derivatives."""
    arrays = params_of()
    worst = 0.0
    for _ in range(n_dirs):
        d = [rng.standard_normal(a.shape) for a in arrays]
        analytic = sum(float(np.sum(g * di)) for g, di in zip(grads, d))
        for a, di in zip(arrays, d):
            a += h * di
        up = loss_of()
        for a, di in zip(arrays, d):
            a -= 2 * h * di
        down = loss_of()
        for a, di in zip(arrays, d):
            a += h * di
        fd = (up - down) / (2 * h)
        worst = max(worst, abs(fd - analytic) / max(abs(analytic), abs(fd), 1e-8))
    return worst
