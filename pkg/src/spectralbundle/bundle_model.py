"""The spectral lower model (W_bar, P) of the penalized objectives.

For the primal method the model of ``F(X) = <C, X> + rho * max(lambda_max(-X), 0)``
is

    F_hat(X) = <C, X> + max { <W, -X> : W = gamma W_bar + P S P^T,
                                        gamma >= 0, S psd, gamma + tr(S) <= rho }.

The dual method uses the same set of W with ``-X`` replaced by
``A*(y) - C`` and ``<C, X>`` by ``-b^T y``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .penalty import eval_dual_penalized, eval_primal_penalized
from .symkernel import apply_A, apply_At, eig_sym, inner, orth, sym, top_eigvecs


@dataclass(frozen=True)
class BundleModel:
    """Aggregate matrix ``W_bar`` (unit trace, psd) and orthonormal block ``P``."""

    W_bar: np.ndarray
    P: np.ndarray
    r_p: int
    r_c: int
    rho: float

    @property
    def r(self):
        return self.P.shape[1]


def init_model(M0, r_p, r_c, rho):
    """Initial model: ``P`` spans the top ``r_p + r_c`` eigenvectors of ``M0``, ``W_bar = I/n``."""
    M0 = np.asarray(M0, dtype=float)
    n = M0.shape[0]
    if r_c < 1 or r_p < 0:
        raise InvalidInput("need r_c >= 1 and r_p >= 0")
    if r_p + r_c > n:
        raise InvalidInput(f"r_p + r_c = {r_p + r_c} exceeds n = {n}")
    if not rho > 0:
        raise InvalidInput("rho must be positive")
    P = top_eigvecs(M0, r_p + r_c)
    return BundleModel(W_bar=np.eye(n) / n, P=P, r_p=int(r_p), r_c=int(r_c), rho=float(rho))


def _support(model, M):
    # max over the model set of <W, M>: attained at 0, at gamma = rho, or on the top eigenvector of P^T M P
    PtMP = sym(model.P.T @ M @ model.P)
    lam = float(np.linalg.eigvalsh(PtMP)[-1]) if PtMP.size else 0.0
    return model.rho * max(0.0, inner(model.W_bar, M), lam)


def eval_model_primal(model, p, X):
    """Model value ``<C, X> + rho * max(0, <W_bar, -X>, lambda_max(-P^T X P))``."""
    X = np.asarray(X, dtype=float)
    if X.shape != (p.n, p.n):
        raise InvalidInput(f"X must be {p.n}x{p.n}")
    return inner(p.C, X) + _support(model, -X)


def eval_model_dual(model, p, y):
    """Model value ``-b^T y + rho * max(0, <W_bar, A*y - C>, lambda_max(P^T (A*y - C) P))``."""
    y = np.asarray(y, dtype=float)
    return -float(p.b @ y) + _support(model, apply_At(p, y) - p.C)


def update_model(model, sol, V_new):
    """Next model from the subproblem solution and fresh eigenvectors ``V_new``.

    ``S*`` is split into its top ``r_p`` eigenpairs ``(Q1, Sigma1)`` and the
    rest ``(Q2, Sigma2)``. The new block is ``orth([V_new, P Q1])`` and the
    new aggregate is ``(gamma W_bar + P Q2 Sigma2 Q2^T P^T)`` normalized to
    unit trace. When ``gamma + tr(Sigma2) <= 1e-12`` the old aggregate is
    kept. With these choices ``W* = gamma W_bar + P S* P^T`` lies in the new
    model set.
    """
    V_new = np.asarray(V_new, dtype=float)
    n = model.W_bar.shape[0]
    if V_new.ndim != 2 or V_new.shape[0] != n:
        raise InvalidInput(f"V_new must have {n} rows")
    S = np.asarray(sol.S, dtype=float)
    if S.shape != (model.r, model.r):
        raise InvalidInput(f"S must be {model.r}x{model.r}")
    vals, Q = eig_sym(S)
    # roundoff can leave tiny negative eigenvalues in a psd S
    vals = np.clip(vals, 0.0, None)
    rp = min(model.r_p, model.r)
    Q1, Q2, sig2 = Q[:, :rp], Q[:, rp:], vals[rp:]
    PQ2 = model.P @ Q2
    gamma = max(float(sol.gamma), 0.0)
    denom = gamma + float(sig2.sum())
    if denom > 1e-12:
        W_bar = sym((gamma * model.W_bar + (PQ2 * sig2) @ PQ2.T) / denom)
    else:
        W_bar = model.W_bar
    P = orth(np.hstack([V_new, model.P @ Q1]))
    return BundleModel(W_bar=W_bar, P=P, r_p=model.r_p, r_c=model.r_c, rho=model.rho)


@dataclass
class ProbeReport:
    """Worst scaled violations of the three model inequalities over the probe panel."""

    minorant: float
    subgradient: float
    model_subgradient: float
    n_probes: int

    @property
    def worst(self):
        return max(self.minorant, self.subgradient, self.model_subgradient)


def model_invariant_probe(
    model_next,
    model_prev,
    sol_prev,
    F_at_candidate,
    candidate,
    subgradient,
    alpha,
    omega_prev,
    p,
    side="primal",
    n_probes=50,
    rng=None,
    extra_points=(),
):
    """Check the bundle-model inequalities at random points.

    For each probe point ``x`` (feasible for ``A(x) = b`` in the primal
    case) it evaluates

    (a) ``model(x) <= F(x)`` for both models,
    (b) ``model_next(x) >= F(cand) + <subgradient, x - cand>``,
    (c) ``model_next(x) >= model_prev(cand) + <alpha (omega_prev - cand), x - cand>``,

    and reports the largest violation divided by the size of the terms in
    each inequality. The candidate and any ``extra_points`` are always
    part of the panel; the prox center joins them when it is feasible.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    primal = side == "primal"
    cand = np.asarray(candidate, dtype=float)
    center = np.asarray(omega_prev, dtype=float)
    s = np.asarray(subgradient, dtype=float)

    if primal:
        def F(x):
            return eval_primal_penalized(p, model_next.rho, x)[0]

        def mod(model, x):
            return eval_model_primal(model, p, x)

        radius = 1.0 + float(np.linalg.norm(cand))

        def draw():
            E = rng.standard_normal((p.n, p.n))
            E = sym(E)
            E -= apply_At(p, p.gram_solve(apply_A(p, E)))
            E *= radius * rng.uniform(0.01, 1.0) / max(np.linalg.norm(E), 1e-300)
            return cand + E
    else:
        def F(x):
            return eval_dual_penalized(p, model_next.rho, x)[0]

        def mod(model, x):
            return eval_model_dual(model, p, x)

        radius = 1.0 + float(np.linalg.norm(cand))

        def draw():
            e = rng.standard_normal(p.m)
            return cand + e * radius * rng.uniform(0.01, 1.0) / np.linalg.norm(e)

    prev_at_cand = mod(model_prev, cand)
    g = alpha * (center - cand)
    points = [cand]
    # inequality (c) only holds on the affine set, so an infeasible prox center is skipped
    if not primal or np.linalg.norm(apply_A(p, center) - p.b) <= 1e-8 * (1.0 + np.linalg.norm(p.b)):
        points.append(center)
    points += list(extra_points) + [draw() for _ in range(n_probes)]
    worst_a = worst_b = worst_c = 0.0
    for x in points:
        d = x - cand
        Fx = F(x)
        mn = mod(model_next, x)
        mp = mod(model_prev, x)
        lin_b = F_at_candidate + float(np.vdot(s, d))
        lin_c = prev_at_cand + float(np.vdot(g, d))
        scale_a = 1.0 + abs(Fx) + abs(mn) + abs(mp)
        worst_a = max(worst_a, (mn - Fx) / scale_a, (mp - Fx) / scale_a)
        scale_b = 1.0 + abs(mn) + abs(F_at_candidate) + float(np.linalg.norm(s) * np.linalg.norm(d))
        worst_b = max(worst_b, (lin_b - mn) / scale_b)
        scale_c = 1.0 + abs(mn) + abs(prev_at_cand) + float(np.linalg.norm(g) * np.linalg.norm(d))
        worst_c = max(worst_c, (lin_c - mn) / scale_c)
    return ProbeReport(worst_a, worst_b, worst_c, len(points))
