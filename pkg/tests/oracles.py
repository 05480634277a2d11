"""Independent reference solvers used by the test suite."""

import numpy as np


def _project_capped_simplex_batch(x, rho):
    """Row-wise projection onto ``{x >= 0, sum(x) <= rho}``."""
    xp = np.clip(x, 0.0, None)
    over = xp.sum(axis=1) > rho
    if not over.any():
        return xp
    xo, ro = x[over], rho[over]
    u = -np.sort(-xo, axis=1)
    css = np.cumsum(u, axis=1) - ro[:, None]
    idx = np.arange(1, x.shape[1] + 1)
    cond = u - css / idx > 0
    k = x.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(len(k)), k] / (k + 1)
    xp[over] = np.clip(xo - theta[:, None], 0.0, None)
    return xp


def project_batch(gamma, S, rho):
    """Project a batch of ``(gamma, S)`` pairs onto the spectral set."""
    S = 0.5 * (S + np.swapaxes(S, 1, 2))
    w, U = np.linalg.eigh(S)
    x = _project_capped_simplex_batch(np.concatenate([gamma[:, None], w], axis=1), rho)
    S_new = np.einsum("bij,bj,bkj->bik", U, x[:, 1:], U)
    return x[:, 0], S_new


def dense_objective(M, m, gamma, S):
    """``v^T M v + m^T v`` with ``v = (gamma, vec(S))`` in column-stacked order."""
    v = np.concatenate([np.atleast_1d(gamma), np.asarray(S).reshape(-1, order="F")])
    return float(v @ M @ v + m @ v)


def pg_oracle(Ms, ms, rhos, r, max_iter=10**6, gap_tol=1e-13, check_every=50):
    """Projected gradient with step ``1 / (2 ||M||)``, batched over instances.

    Runs up to ``max_iter`` iterations per instance. Projected gradient
    decreases the objective monotonically and the Frank-Wolfe gap bounds
    the distance to the optimal value, so an instance is retired early
    once its gap is below ``gap_tol``: no later iterate can improve the
    value by more than that. Returns objective values, final points, the
    per-instance iteration counts and the final gaps.
    """
    Ms = np.asarray(Ms, dtype=float)
    ms = np.asarray(ms, dtype=float)
    rhos = np.asarray(rhos, dtype=float)
    B = Ms.shape[0]
    L = 2.0 * np.linalg.eigvalsh(Ms)[:, -1]
    step = 1.0 / np.maximum(L, 1e-300)
    gamma = np.zeros(B)
    S = np.zeros((B, r, r))
    iters = np.zeros(B, dtype=int)
    gaps = np.full(B, np.inf)
    active = np.arange(B)
    for k in range(1, max_iter + 1):
        if active.size == 0:
            break
        g, Sa = gamma[active], S[active]
        grad_g, gS = _batch_gradient(Ms[active], ms[active], g, Sa, r)
        st = step[active]
        g_new, S_new = project_batch(g - st * grad_g, Sa - st[:, None, None] * gS, rhos[active])
        gamma[active], S[active] = g_new, S_new
        iters[active] = k
        if k % check_every == 0 or k == max_iter:
            grad_g, gS = _batch_gradient(Ms[active], ms[active], g_new, S_new, r)
            lmin = np.linalg.eigvalsh(gS)[:, 0]
            low = rhos[active] * np.minimum(0.0, np.minimum(grad_g, lmin))
            gap = grad_g * g_new + np.einsum("bij,bij->b", gS, S_new) - low
            gaps[active] = gap
            active = active[gap > gap_tol * (1.0 + np.abs(low))]
    vals = np.array([dense_objective(Ms[i], ms[i], gamma[i], S[i]) for i in range(B)])
    return vals, gamma, S, iters, gaps


def _batch_gradient(Ms, ms, gamma, S, r):
    n = len(gamma)
    v = np.concatenate([gamma[:, None], np.swapaxes(S, 1, 2).reshape(n, -1)], axis=1)
    grad = 2.0 * np.einsum("bij,bj->bi", Ms, v) + ms
    gS = np.swapaxes(grad[:, 1:].reshape(n, r, r), 1, 2)
    return grad[:, 0], 0.5 * (gS + np.swapaxes(gS, 1, 2))


def grid_r1(M, m, rho, n=2000, zooms=4):
    """Minimize ``v^T M v + m^T v`` over the triangle by grid search with zoom.

    The first pass is an ``n x n`` grid over ``[0, rho]^2`` restricted to
    the triangle ``gamma + s <= rho``; each zoom repeats the search on an
    ``n x n`` grid over the 4-cell neighbourhood of the best point so far.
    """
    M = np.asarray(M, dtype=float)
    m = np.asarray(m, dtype=float)
    lo_g, hi_g, lo_s, hi_s = 0.0, rho, 0.0, rho
    best = (np.inf, 0.0, 0.0)
    for _ in range(zooms + 1):
        gs = np.linspace(lo_g, hi_g, n)
        ss = np.linspace(lo_s, hi_s, n)
        G, Sg = np.meshgrid(gs, ss, indexing="ij")
        F = M[0, 0] * G * G + 2 * M[0, 1] * G * Sg + M[1, 1] * Sg * Sg + m[0] * G + m[1] * Sg
        F[G + Sg > rho] = np.inf
        i, j = np.unravel_index(np.argmin(F), F.shape)
        if F[i, j] < best[0]:
            best = (float(F[i, j]), float(gs[i]), float(ss[j]))
        hg = 2 * (hi_g - lo_g) / (n - 1)
        hs = 2 * (hi_s - lo_s) / (n - 1)
        lo_g, hi_g = max(0.0, best[1] - hg), min(rho, best[1] + hg)
        lo_s, hi_s = max(0.0, best[2] - hs), min(rho, best[2] + hs)
    return best
