"""Pure-Python counterparts of the kernels in ``_core.pyx``.

Used when the extension is not built or ``BERGEO_AOI_PURE_PYTHON=1``.
"""

from __future__ import annotations

import numpy as np


def _to_padded(flat, n_max):
    grid = np.zeros((n_max + 1, n_max))
    for n in range(2, n_max + 1):
        base = n * (n - 1) // 2 - 1
        grid[n, :n] = flat[base:base + n]
    return grid


def _to_flat(grid, flat):
    n_max = grid.shape[0] - 1
    for n in range(2, n_max + 1):
        base = n * (n - 1) // 2 - 1
        flat[base:base + n] = grid[n, :n]


def power_iterate(n_max, w_gen, w_stay, w_dn, w_di, w_fn, w_fo, lam, pi, work,
                  scratch, tol, max_iters, check_every=1):
    """Vectorized sweep over a padded ``[n, m]`` array; ``work``/``scratch`` unused."""
    g = _to_padded(pi, n_max)
    it = 0
    res = 0.0
    while it < max_iters:
        new = np.zeros_like(g)
        col0 = g[2:, 0]
        busy = g[2:, 1:].sum(axis=1)
        # rows 2..n_max-1 move up one; row n_max is absorbing in n
        for target, weight_idle, weight_busy in ((1, w_gen, w_fn), (0, w_stay, w_fo)):
            flow = weight_idle * col0 + weight_busy * busy
            new[3:, target] += flow[:-1]
            new[n_max, target] += flow[-1]
        new[3:, 2:] += lam * g[2:n_max, 1:n_max - 1]
        last = lam * g[n_max, 1:]
        new[n_max, 2:] += last[:-1]
        new[n_max, n_max - 1] += last[-1]
        delivered = g[2:, 1:].sum(axis=0)
        new[2:, 1] += w_dn * delivered
        new[2:, 0] += w_di * delivered
        it += 1
        if it % check_every == 0 or it == max_iters:
            res = float(np.max(np.abs(new - g)))
            if res <= tol:
                break
        g = new / new.sum()
    _to_flat(g, pi)
    return it, res


class ModelInvariantError(AssertionError):
    pass


def simulate_block(u, q, gamma, retransmit, aoi, server, t0, warmup, hist,
                   overflow, aoi_sum, stamps=None):
    """Slot loop; see ``_core.simulate_block``.

    When ``stamps`` is given (a 1-element list holding the generation slot
    of the update in service), the 2D-age relation and the delivery rule
    ``AoI(t+1) = t + 1 - stamp`` are asserted every slot.
    """
    n_src = len(q)
    cap = hist.shape[1] - 1
    q = list(q)
    gamma = list(gamma)
    age = [int(a) for a in aoi]
    j, m = int(server[0]), int(server[1])
    rows = u.tolist()
    sums = [0] * n_src
    for r, row in enumerate(rows):
        t = t0 + r
        if t > warmup:
            for i in range(n_src):
                a = age[i]
                sums[i] += a
                if a <= cap:
                    hist[i, a] += 1
                else:
                    overflow[i] += 1
        if stamps is not None and j >= 0:
            if not age[j] > m >= 1:
                raise ModelInvariantError(f"slot {t}: AoI {age[j]} vs update age {m}")
            if t - stamps[0] != m:
                raise ModelInvariantError(f"slot {t}: update age {m} != {t - stamps[0]}")
        success = j >= 0 and row[0] < gamma[j]
        gens = [i for i in range(n_src) if row[1 + i] < q[i]]
        for i in range(n_src):
            age[i] += 1
        if success:
            age[j] = m + 1
            if stamps is not None and age[j] != t + 1 - stamps[0]:
                raise ModelInvariantError(f"slot {t}: delivery AoI mismatch")
        k = len(gens)
        if k:
            sel = min(int(row[n_src + 1] * k), k - 1)
            j, m = gens[sel], 1
            if stamps is not None:
                stamps[0] = t
        elif j >= 0 and not success and retransmit:
            m += 1
        else:
            j, m = -1, 0
    aoi[:] = age
    server[0], server[1] = j, m
    aoi_sum += np.asarray(sums, dtype=np.int64)
