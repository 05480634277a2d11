"""Reduced master problems over the spectral set {gamma >= 0, S psd, gamma + tr(S) <= rho}.

Both bundle methods reduce their proximal master problem to

    minimize   f(gamma, S) = v^T M v + m^T v
    subject to gamma >= 0, S psd (r x r), gamma + tr(S) <= rho,

with ``v = (gamma, vec(S))``. This module builds those quadratic programs
(after eliminating the free multiplier y for the primal method), solves
them, and maps solutions back to the master problem's variables.

The r x r blocks are kept as symmetric matrices: ``M12 = vec(M12_mat)^T``,
``m2 = vec(m2_mat)`` and the r^2 x r^2 block is stored in the factored form

    M22 = c * I + sum_ij vec(F_i) K_ij vec(F_j)^T,

which is how it arises in both reductions and keeps large ``r`` cheap.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InvalidInput, SubproblemStall
from .symkernel import apply_A, apply_At, inner, smat, svec, sym

# -------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class SubQp:
    """Quadratic program ``min v^T M v + m^T v`` over the spectral set.

    ``constant`` is not part of the objective returned by the solvers; it
    is the offset that turns the objective into ``2 * alpha`` times the
    master-problem value.
    """

    r: int
    M11: float
    M12_mat: np.ndarray
    m22_scale: float
    m22_factors: np.ndarray
    m22_core: np.ndarray
    m1: float
    m2_mat: np.ndarray
    rho: float
    constant: float = 0.0

    # dense views in the column-stacked vec convention -----------------
    @property
    def M12(self):
        return self.M12_mat.reshape(1, -1, order="F")

    @property
    def m2(self):
        return self.m2_mat.reshape(-1, order="F")

    @property
    def M22(self):
        r = self.r
        Fv = self.m22_factors.reshape(-1, r * r)
        # F_i are symmetric, so row-major and column-major vec coincide
        return self.m22_scale * np.eye(r * r) + Fv.T @ self.m22_core @ Fv

    @property
    def M(self):
        r2 = self.r * self.r
        out = np.empty((1 + r2, 1 + r2))
        out[0, 0] = self.M11
        out[0, 1:] = self.M12[0]
        out[1:, 0] = self.M12[0]
        out[1:, 1:] = self.M22
        return out

    @property
    def m(self):
        return np.concatenate([[self.m1], self.m2])

    # evaluation --------------------------------------------------------
    def _F_dot(self, S):
        return self.m22_factors.reshape(-1, self.r * self.r) @ S.ravel()

    def H22(self, S):
        """Symmetric part of ``mat(M22 vec(S))`` for symmetric ``S``."""
        w = self.m22_core @ self._F_dot(S)
        out = self.m22_scale * S
        if w.size:
            out = out + np.tensordot(w, self.m22_factors, axes=1)
        return out

    def objective(self, gamma, S):
        HS = self.H22(S)
        return float(
            self.M11 * gamma * gamma
            + 2.0 * gamma * inner(self.M12_mat, S)
            + inner(S, HS)
            + self.m1 * gamma
            + inner(self.m2_mat, S)
        )

    def gradient(self, gamma, S):
        """Gradient with respect to ``gamma`` and (symmetric) ``S``."""
        HS = self.H22(S)
        g_gamma = 2.0 * self.M11 * gamma + 2.0 * inner(self.M12_mat, S) + self.m1
        g_S = 2.0 * gamma * self.M12_mat + 2.0 * HS + self.m2_mat
        return float(g_gamma), sym(g_S)

    def norm_m(self):
        return float(np.sqrt(self.m1**2 + np.sum(self.m2_mat**2)))

    def hessian_bound(self):
        """Upper bound on the largest eigenvalue of ``M`` restricted to symmetric ``S``."""
        c = self.m22_scale
        F = self.m22_factors.reshape(-1, self.r * self.r)
        lam22 = c
        if F.shape[0]:
            G = F @ F.T
            w, U = np.linalg.eigh(0.5 * (G + G.T))
            root = (U * np.sqrt(np.clip(w, 0, None))) @ U.T
            inner_mat = root @ self.m22_core @ root
            lam22 += max(0.0, float(np.linalg.eigvalsh(0.5 * (inner_mat + inner_mat.T))[-1]))
        b = float(np.linalg.norm(self.M12_mat))
        block = np.array([[self.M11, b], [b, lam22]])
        return max(float(np.linalg.eigvalsh(block)[-1]), 0.0)

    @classmethod
    def from_dense(cls, M, m, rho, r, constant=0.0):
        """Build a SubQp from a dense ``(1 + r^2)``-order matrix and vector.

        Only the action on symmetric ``S`` matters, so off-symmetric parts
        of the blocks are dropped; objective values on the feasible set are
        unchanged.
        """
        M = np.asarray(M, dtype=float)
        m = np.asarray(m, dtype=float)
        r = int(r)
        r2 = r * r
        if M.shape != (1 + r2, 1 + r2) or m.shape != (1 + r2,):
            raise InvalidInput("dense SubQp blocks have inconsistent sizes")
        M = 0.5 * (M + M.T)
        M12_mat = sym(M[0, 1:].reshape(r, r, order="F"))
        m2_mat = sym(m[1:].reshape(r, r, order="F"))
        w, U = np.linalg.eigh(M[1:, 1:])
        keep = np.abs(w) > 1e-14 * max(1.0, np.max(np.abs(w)))
        Fs = np.stack([sym(U[:, i].reshape(r, r, order="F")) for i in np.flatnonzero(keep)]) if keep.any() else np.zeros((0, r, r))
        return cls(
            r=r,
            M11=float(M[0, 0]),
            M12_mat=M12_mat,
            m22_scale=0.0,
            m22_factors=Fs,
            m22_core=np.diag(w[keep]),
            m1=float(m[0]),
            m2_mat=m2_mat,
            rho=float(rho),
            constant=float(constant),
        )


@dataclass(frozen=True)
class SubqpSolution:
    """Solution of a SubQp and, once assembled, the matching master variables."""

    gamma: float
    S: np.ndarray
    objective: float
    W_star: np.ndarray = None
    y_star: np.ndarray = None
    kkt_residual: float = 0.0
    fw_gap: float = 0.0
    iterations: int = 0
    stalled: bool = False


@dataclass(frozen=True)
class SbmpRecovery:
    """Data needed to recover the eliminated multiplier y of the primal master problem."""

    q3: np.ndarray
    problem: object = field(repr=False)


# -------------------------------------------------------------------------
# feasible set


def _project_capped_simplex(x, rho):
    """Euclidean projection onto ``{x >= 0, sum(x) <= rho}``; also reports whether the sum is tight."""
    xp = np.clip(x, 0.0, None)
    if xp.sum() <= rho:
        return xp, False
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - rho
    idx = np.arange(1, x.size + 1)
    # the first index always qualifies in exact arithmetic; huge entries can lose it to roundoff
    k = np.nonzero(u - css / idx > 0)[0]
    k = k[-1] if k.size else 0
    theta = css[k] / (k + 1)
    out = np.clip(x - theta, 0.0, None)
    total = out.sum()
    if total > rho:
        # cancellation in x - theta for very large entries can leave the budget slightly violated
        out *= rho / total
    return out, True


def project_feasible(gamma, S, rho):
    """Projection of ``(gamma, S)`` onto the spectral set (Frobenius metric on S)."""
    w, U = np.linalg.eigh(sym(S))
    x, _ = _project_capped_simplex(np.concatenate([[gamma], w]), rho)
    S_new = (U * x[1:]) @ U.T
    return float(x[0]), sym(S_new)


def _project_with_face(gamma, S, rho):
    w, U = np.linalg.eigh(sym(S))
    x, tight = _project_capped_simplex(np.concatenate([[gamma], w]), rho)
    lam = x[1:]
    pos = lam > 0
    V = U[:, pos]
    T = np.diag(lam[pos])
    return float(x[0]), sym((U * lam) @ U.T), V, T, tight


def fw_gap(q, gamma, S, grad=None):
    """Frank-Wolfe gap ``<grad f, v> - min_{u feasible} <grad f, u>`` (zero exactly at optima)."""
    g_gamma, g_S = grad if grad is not None else q.gradient(gamma, S)
    lmin = float(np.linalg.eigvalsh(g_S)[0])
    return g_gamma * gamma + inner(g_S, S) - q.rho * min(0.0, g_gamma, lmin)


def kkt_residual(q, gamma, S, grad=None):
    """Norm of ``v - proj(v - grad f(v))``: zero exactly at optima."""
    g_gamma, g_S = grad if grad is not None else q.gradient(gamma, S)
    pg, pS = project_feasible(gamma - g_gamma, S - g_S, q.rho)
    return float(np.sqrt((gamma - pg) ** 2 + np.sum((S - pS) ** 2)))


# -------------------------------------------------------------------------
# analytical solver for r = 1


def solve_r1(M, m, rho):
    """Minimize ``v^T M v + m^T v`` over the triangle ``gamma, s >= 0, gamma + s <= rho``.

    Returns ``(gamma, s, objective)``. If the unconstrained minimizer
    ``-pinv(M) m / 2`` is feasible it is returned; otherwise the best of the
    minimizers along the three edges is, with ties resolved in the order
    gamma-axis, s-axis, hypotenuse.
    """
    M = np.asarray(M, dtype=float)
    m = np.asarray(m, dtype=float)
    if M.shape != (2, 2) or m.shape != (2,):
        raise InvalidInput("solve_r1 expects a 2x2 matrix and a 2-vector")
    if not rho > 0:
        raise InvalidInput("rho must be positive")
    M = 0.5 * (M + M.T)
    if np.linalg.eigvalsh(M)[0] < -1e-9:
        raise InvalidInput("solve_r1: M is not positive semidefinite")
    M11, M12, M22 = M[0, 0], M[0, 1], M[1, 1]
    m1, m2 = m

    def f(g, s):
        return float(M11 * g * g + 2 * M12 * g * s + M22 * s * s + m1 * g + m2 * s)

    Mp = np.linalg.pinv(M)
    if np.linalg.norm(M @ (Mp @ m) - m) <= 1e-12 * (1.0 + np.linalg.norm(m)):
        g, s = -0.5 * (Mp @ m)
        if g >= 0 and s >= 0 and g + s <= rho:
            return float(g), float(s), f(g, s)

    def edge(a, lin):
        # minimize a t^2 + lin t over [0, rho]
        if a > 0:
            return min(max(-lin / (2 * a), 0.0), rho)
        return 0.0 if lin >= 0 else rho

    g1 = edge(M11, m1)
    s2 = edge(M22, m2)
    den = 2 * M11 + 2 * M22 - 4 * M12
    if den > 0:
        phi = min(max((2 * rho * M22 - 2 * rho * M12 - m1 + m2) / den, 0.0), rho)
    else:
        slope = 2 * rho * M12 - 2 * rho * M22 + m1 - m2
        phi = 0.0 if slope >= 0 else rho
    cands = [(g1, 0.0), (0.0, s2), (phi, rho - phi)]
    best = None
    for g, s in cands:
        val = f(g, s)
        if best is None or val < best[2]:
            best = (float(g), float(s), val)
    return best


# -------------------------------------------------------------------------
# iterative solver for r > 1


def _face_data(q, V):
    FV = np.matmul(np.matmul(V.T, q.m22_factors), V) if q.m22_factors.shape[0] else np.zeros((0, V.shape[1], V.shape[1]))
    B = svec(FV)
    b12 = svec(V.T @ q.M12_mat @ V)
    gt = svec(V.T @ q.m2_mat @ V)
    return B, b12, gt


def _face_solve(q, V, gamma_free, budget_active, data=None):
    """Stationary point of f on the affine hull of a face of the feasible set.

    The face is ``S = V T V^T`` with T free symmetric, ``gamma`` free or
    fixed at zero, and the budget either an equality or ignored. Returns
    ``(gamma, T, mu)`` or ``None`` when the linear system is unusable.
    ``data`` may carry a precomputed ``_face_data(q, V)``.
    """
    k = V.shape[1]
    d = k * (k + 1) // 2
    B, b12, gt = _face_data(q, V) if data is None else data
    c = q.m22_scale
    K = q.m22_core
    a_t = svec(np.eye(k))
    if gamma_free:
        g = np.concatenate([[q.m1], gt])
        a = np.concatenate([[1.0], a_t])
    else:
        g = gt
        a = a_t
    D = g.size

    if c > 0 and D > 300:
        # Q = c I + U^T Khat U with a thin U; solve 2Q x = rhs by Woodbury
        if gamma_free:
            p = B.shape[0]
            U = np.zeros((2 + p, D))
            U[0, 0] = 1.0
            U[1, 1:] = b12
            U[2:, 1:] = B
            Kh = np.zeros((2 + p, 2 + p))
            Kh[0, 0] = q.M11 - c
            Kh[0, 1] = Kh[1, 0] = 1.0
            Kh[2:, 2:] = K
        else:
            U, Kh = B, K
        inner_mat = c * np.eye(U.shape[0]) + (U @ U.T) @ Kh
        try:
            lu = scipy.linalg.lu_factor(inner_mat, check_finite=False)
        except (ValueError, np.linalg.LinAlgError):
            return None

        def solve2Q(rhs):
            rhs = rhs / 2.0
            return (rhs - U.T @ (Kh @ scipy.linalg.lu_solve(lu, U @ rhs))) / c

        x_g = solve2Q(-g)
        if not budget_active:
            z, mu = x_g, 0.0
        else:
            x_a = solve2Q(-a)
            den = a @ x_a
            if den == 0:
                return None
            mu = (q.rho - a @ x_g) / den
            z = x_g + mu * x_a
    else:
        Qtt = B.T @ K @ B
        Qtt[np.diag_indices(d)] += c
        if gamma_free:
            Q = np.empty((D, D))
            Q[0, 0] = q.M11
            Q[0, 1:] = b12
            Q[1:, 0] = b12
            Q[1:, 1:] = Qtt
        else:
            Q = Qtt
        Q = Q + Q.T  # this is 2Q, symmetrized
        if budget_active:
            KKT = np.zeros((D + 1, D + 1))
            KKT[:D, :D] = Q
            KKT[:D, D] = a
            KKT[D, :D] = a
            rhs = np.concatenate([-g, [q.rho]])
        else:
            KKT, rhs = Q, -g
        try:
            sol = scipy.linalg.solve(KKT, rhs, assume_a="sym", check_finite=False)
            if not np.all(np.isfinite(sol)):
                raise np.linalg.LinAlgError
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning, ValueError):
            sol = np.linalg.lstsq(KKT, rhs, rcond=None)[0]
        if budget_active:
            z, mu = sol[:D], sol[D]
        else:
            z, mu = sol, 0.0
    if not np.all(np.isfinite(z)):
        return None
    gamma = float(z[0]) if gamma_free else 0.0
    T = smat(z[1:] if gamma_free else z, k)
    return gamma, T, float(mu)


def _max_step(T0, D, limit=1.0):
    """Largest tau in [0, limit] with ``T0 + tau D`` psd, for positive definite ``T0``."""
    if T0.shape[0] == 0:
        return limit
    try:
        L = np.linalg.cholesky(T0)
    except np.linalg.LinAlgError:
        return 0.0
    Li = scipy.linalg.solve_triangular(L, np.eye(L.shape[0]), lower=True)
    E = Li @ D @ Li.T
    lmin = float(np.linalg.eigvalsh(sym(E))[0])
    if lmin >= 0:
        return limit
    return min(limit, -1.0 / lmin)


class _Best:
    """Tracks the most accurate feasible point seen so far.

    Accuracy is the Frank-Wolfe gap or, with ``by_residual``, the
    projected-gradient residual. The gap is quadratic in the error of the
    eigenvectors of S near a low-rank optimum, so it stops discriminating
    long before the residual does. Points whose objective is clearly worse
    than the best one are ignored, so the returned point is both accurate
    and never worse than the origin.
    """

    def __init__(self, q, by_residual=False):
        self.q = q
        self.by_residual = by_residual
        self.f = np.inf
        self.gamma = 0.0
        self.S = None
        self.gap = np.inf
        self.key = np.inf
        self.f_low = np.inf

    def offer(self, gamma, S, f=None):
        q = self.q
        if f is None:
            f = q.objective(gamma, S)
        grad = q.gradient(gamma, S)
        gap = fw_gap(q, gamma, S, grad)
        key = kkt_residual(q, gamma, S, grad) if self.by_residual else gap
        self.f_low = min(self.f_low, f)
        # f - gap is a lower bound on the optimal value; prefer the tighter certificate
        slack = 1e-12 * (1.0 + abs(f))
        if key < self.key and f <= self.f_low + max(gap, self.gap if np.isfinite(self.gap) else 0.0) + slack:
            self.f, self.gamma, self.S, self.gap, self.key = f, gamma, S, gap, key
        elif f < self.f - max(self.gap, slack):
            self.f, self.gamma, self.S, self.gap, self.key = f, gamma, S, gap, key
        return f


def _clip_feasible(gamma, S, rho):
    # remove roundoff-level infeasibility from a face solution
    w, U = np.linalg.eigh(sym(S))
    w = np.clip(w, 0.0, None)
    gamma = max(gamma, 0.0)
    total = gamma + w.sum()
    if total > rho:
        gamma *= rho / total
        w *= rho / total
    return gamma, sym((U * w) @ U.T)


def _offer_face(q, best, V, gamma_free, budget_active, feas_tol, face=None):
    if face is None:
        face = _face_solve(q, V, gamma_free, budget_active)
    if face is None:
        return
    gz, Tz, mu = face
    if budget_active and mu < -feas_tol:
        return
    w = np.linalg.eigvalsh(Tz) if Tz.size else np.zeros(0)
    scale = 1.0 + max(abs(gz), np.max(np.abs(w), initial=0.0))
    if (w.size and w[0] < -feas_tol * scale) or gz < -feas_tol * scale:
        return
    if gz + w.sum() > q.rho * (1 + feas_tol):
        return
    gz, Sz = _clip_feasible(gz, V @ Tz @ V.T, q.rho)
    best.offer(gz, Sz)


def _polish(q, best, gamma, S, duals=None, feas_tol=1e-9):
    """Exact solves on the faces suggested by an approximate solution."""
    rho = q.rho
    lam, U = np.linalg.eigh(sym(S))
    lam, U = lam[::-1], U[:, ::-1]
    slack = rho - gamma - lam.sum()
    faces = set()
    if duals is not None:
        z_gamma, Z, mu = duals
        zd = np.einsum("ij,jk,ki->i", U.T, Z, U)
        faces.add((int(np.sum(lam > zd)), bool(gamma > z_gamma), bool(slack < mu)))
    top = max(1.0, float(lam[0]) if lam.size else 0.0, gamma)
    for delta in (1e-4, 1e-6, 1e-8, 1e-10):
        thr = delta * top
        faces.add((int(np.sum(lam > thr)), bool(gamma > thr), bool(slack < thr * rho)))
    for k, gfree, budget in sorted(faces):
        if k == 0 and not gfree:
            continue
        V = U[:, :k]
        _offer_face(q, best, V, gfree, budget, feas_tol)
        _offer_face(q, best, V, gfree, not budget, feas_tol)


def _svec_quadratic(q):
    """Dense ``(1 + d)``-order matrix and vector of the objective in (gamma, svec(S))."""
    r = q.r
    B, b12, gt = _face_data(q, np.eye(r))
    d = r * (r + 1) // 2
    Q = np.empty((1 + d, 1 + d))
    Q[0, 0] = q.M11
    Q[0, 1:] = b12
    Q[1:, 0] = b12
    Q[1:, 1:] = B.T @ q.m22_core @ B
    Q[1:, 1:][np.diag_indices(d)] += q.m22_scale
    return 0.5 * (Q + Q.T), np.concatenate([[q.m1], gt])


def _interior_point(q, tol):
    """Solve the SubQp with the Clarabel conic interior-point solver.

    Returns ``(gamma, S, duals, iterations)`` or ``None`` if the solver
    fails outright.
    """
    import clarabel
    import scipy.sparse as sparse

    r = q.r
    d = r * (r + 1) // 2
    Q, g = _svec_quadratic(q)
    # Clarabel stores triangles column by column; svec here goes row by row
    iu = np.triu_indices(r)
    pos = {(i, j): k for k, (i, j) in enumerate(zip(*iu))}
    order = np.array([pos[(i, j)] for j in range(r) for i in range(j + 1)])
    perm = np.concatenate([[0], 1 + order])
    Qp = Q[np.ix_(perm, perm)]
    gp = g[perm]
    P = sparse.csc_matrix(np.triu(2.0 * Qp))
    a = np.zeros(1 + d)
    a[0] = 1.0
    diag_pos = np.array([k for k, (i, j) in enumerate((i, j) for j in range(r) for i in range(j + 1)) if i == j])
    a[1 + diag_pos] = 1.0
    A = sparse.vstack(
        [
            sparse.csc_matrix(([-1.0], ([0], [0])), shape=(1, 1 + d)),
            sparse.csc_matrix(a[None]),
            sparse.hstack([sparse.csc_matrix((d, 1)), -sparse.identity(d)]),
        ]
    ).tocsc()
    b = np.concatenate([[0.0, q.rho], np.zeros(d)])
    cones = [clarabel.NonnegativeConeT(2), clarabel.PSDTriangleConeT(r)]
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.tol_ktratio = 1e-10
    settings.max_iter = 200
    settings.max_threads = 1
    try:
        res = clarabel.DefaultSolver(P, gp, A, b, cones, settings).solve()
    except Exception:  # noqa: BLE001 - any solver failure just disables this stage
        return None
    x = np.asarray(res.x)
    z = np.asarray(res.z)
    if x.size != 1 + d or not np.all(np.isfinite(x)):
        return None
    inv = np.empty_like(order)
    inv[order] = np.arange(d)

    def unpack(v):
        return smat(v[inv], r)

    gamma = float(x[0])
    S = unpack(x[1:])
    duals = (float(z[0]), unpack(z[2:]), float(z[1])) if z.size == 2 + d else None
    return gamma, S, duals, int(res.iterations)


def _gradient_rounds(q, best, gamma, S, rounds, feas_tol, done):
    """Projected-gradient steps, each followed by an exact solve on the exposed face."""
    rho = q.rho
    L = 2.0 * q.hessian_bound() * (1.0 + 1e-10) + 1e-300
    step = 1.0 / L
    it = 0
    for it in range(1, rounds + 1):
        if done():
            break
        g_gamma, g_S = q.gradient(gamma, S)
        gamma, S, V, T, tight = _project_with_face(gamma - step * g_gamma, S - step * g_S, rho)
        f_cur = best.offer(gamma, S)
        gamma_free = gamma > 0
        if V.shape[1] == 0 and not gamma_free:
            continue
        face = _face_solve(q, V, gamma_free, tight)
        if face is None:
            continue
        gz, Tz, _ = face
        # try the projection of the face minimizer first, then a step to the boundary
        gp, Sp = project_feasible(gz, V @ Tz @ V.T, rho)
        fp = q.objective(gp, Sp)
        tau = 1.0
        if gamma_free and gz < 0:
            tau = min(tau, gamma / (gamma - gz))
        if not tight:
            slack0 = rho - gamma - np.trace(T)
            slack1 = rho - gz - np.trace(Tz)
            if slack1 < 0:
                tau = min(tau, slack0 / (slack0 - slack1))
        tau = _max_step(T, Tz - T, tau)
        gb, Sb = _clip_feasible(gamma + tau * (gz - gamma), V @ (T + tau * (Tz - T)) @ V.T, rho)
        fb = q.objective(gb, Sb)
        if fp <= fb and fp <= f_cur:
            gamma, S = gp, Sp
            best.offer(gamma, S, fp)
        elif fb <= f_cur:
            gamma, S = gb, Sb
            best.offer(gamma, S, fb)
    return gamma, S, it


# the dense interior-point stage is skipped beyond this many svec(S) variables
_IPM_MAX_DIM = 500


def solve_subqp(q, tol=1e-10, max_iter=10000, fw_tol=None):
    """Solve a SubQp.

    ``r = 1`` is handled by :func:`solve_r1`. For larger ``r`` the solver
    proceeds in stages and stops as soon as the projected-gradient residual
    is at most ``tol * (1 + |m|)``, or, when ``fw_tol`` is given, as soon as
    the Frank-Wolfe gap (an objective-error bound) is at most ``fw_tol``:

    1. exact stationary points over the whole cone, which settle the
       common case of a full-rank optimal S;
    2. a few projected-gradient steps, each followed by an exact solve on
       the face the projection exposes;
    3. an interior-point solve (Clarabel) followed by exact solves on the
       faces it identifies;
    4. further projected-gradient rounds up to ``max_iter``.

    If the target is never met the best point is still returned when its
    projected-gradient residual is at most ``tol * (1 + |m|)``; otherwise
    :class:`SubproblemStall` is raised with that point attached.
    """
    if q.r < 1:
        raise InvalidInput("SubQp must have r >= 1")
    rho = q.rho
    if q.r == 1:
        M2 = np.array([[q.M11, q.M12_mat[0, 0]], [q.M12_mat[0, 0], q.M22[0, 0]]])
        g, s, val = solve_r1(M2, np.array([q.m1, q.m2_mat[0, 0]]), rho)
        S = np.array([[s]])
        grad = q.gradient(g, S)
        return SubqpSolution(
            gamma=g,
            S=S,
            objective=val,
            kkt_residual=kkt_residual(q, g, S, grad),
            fw_gap=fw_gap(q, g, S, grad),
        )

    r = q.r
    feas_tol = 1e-9
    best = _Best(q, by_residual=fw_tol is None)
    best.offer(0.0, np.zeros((r, r)), 0.0)

    res_tol = tol * (1.0 + q.norm_m())

    def done():
        if fw_tol is not None:
            return best.gap <= fw_tol
        return best.key <= res_tol

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        eye = np.eye(r)
        data = _face_data(q, eye)
        start = None
        for gfree in (True, False):
            for budget in (False, True):
                face = _face_solve(q, eye, gfree, budget, data)
                if face is None:
                    continue
                _offer_face(q, best, eye, gfree, budget, feas_tol, face=face)
                if start is None:
                    start = project_feasible(face[0], face[1], rho)
        if start is not None:
            best.offer(*start)
        iterations = 0
        if not done():
            gamma, S, it = _gradient_rounds(q, best, best.gamma, best.S, min(20, max_iter), feas_tol, done)
            iterations += it
        if not done() and r * (r + 1) // 2 <= _IPM_MAX_DIM:
            ipm = _interior_point(q, 1e-12)
            if ipm is not None:
                g_i, S_i, duals, it = ipm
                iterations += it
                g_c, S_c = _clip_feasible(g_i, S_i, rho)
                best.offer(g_c, S_c)
                _polish(q, best, g_c, S_c, duals, feas_tol)
        if not done():
            _, _, it = _gradient_rounds(q, best, best.gamma, best.S, max(max_iter - iterations, 0), feas_tol, done)
            iterations += it
            _polish(q, best, best.gamma, best.S, None, feas_tol)

    gamma, S = best.gamma, best.S
    grad = q.gradient(gamma, S)
    res = kkt_residual(q, gamma, S, grad)
    gap = fw_gap(q, gamma, S, grad)
    sol = SubqpSolution(
        gamma=gamma,
        S=S,
        objective=q.objective(gamma, S),
        kkt_residual=res,
        fw_gap=gap,
        iterations=iterations,
        stalled=(gap > fw_tol) if fw_tol is not None else (res > res_tol),
    )
    if sol.stalled and res > res_tol:
        raise SubproblemStall(
            f"subproblem not solved after {iterations} rounds (residual {res:.3e}, gap {gap:.3e})", best=sol
        )
    return sol


# -------------------------------------------------------------------------
# block construction


def _factor_blocks(P, A):
    """``P^T A_i P`` for every constraint matrix."""
    return np.matmul(np.matmul(P.T, A), P)


def build_sbmp_subqp(p, model, Omega, alpha):
    """Reduced master problem of the primal method at prox center ``Omega``.

    The multiplier y of the affine constraints is eliminated through the
    Gram matrix ``Q33``. Returns ``(SubQp, SbmpRecovery)``.
    """
    p.gram_chol  # raises RankDeficient early
    P, Wb, rho = model.P, model.W_bar, model.rho
    C = p.C
    q3 = -(2.0 * alpha * (p.b - apply_A(p, Omega)) + 2.0 * apply_A(p, C))
    z3 = p.gram_solve(q3)
    # projection of W_bar onto the orthogonal complement of range(A*)
    Wperp = Wb - apply_At(p, p.gram_solve(apply_A(p, Wb)))
    Gm = -2.0 * C + 2.0 * alpha * Omega - apply_At(p, z3)
    Fs = _factor_blocks(P, p.A)
    Fs = 0.5 * (Fs + np.swapaxes(Fs, 1, 2))
    core = -scipy.linalg.cho_solve(p.gram_chol, np.eye(p.m))
    const = inner(C, C) - 2.0 * alpha * inner(C, Omega) - 0.25 * float(q3 @ z3)
    q = SubQp(
        r=P.shape[1],
        M11=inner(Wperp, Wperp),
        M12_mat=sym(P.T @ Wperp @ P),
        m22_scale=1.0,
        m22_factors=Fs,
        m22_core=0.5 * (core + core.T),
        m1=inner(Wb, Gm),
        m2_mat=sym(P.T @ Gm @ P),
        rho=rho,
        constant=const,
    )
    return q, SbmpRecovery(q3=q3, problem=p)


def build_sbmd_subqp(p, model, omega, alpha):
    """Reduced master problem of the dual method at prox center ``omega``."""
    P, Wb, rho = model.P, model.W_bar, model.rho
    G = p.C - apply_At(p, omega)
    Lin = -2.0 * apply_At(p, p.b) + 2.0 * alpha * G
    AW = apply_A(p, Wb)
    Fs = _factor_blocks(P, p.A)
    Fs = 0.5 * (Fs + np.swapaxes(Fs, 1, 2))
    return SubQp(
        r=P.shape[1],
        M11=float(AW @ AW),
        M12_mat=sym(P.T @ apply_At(p, AW) @ P),
        m22_scale=0.0,
        m22_factors=Fs,
        m22_core=np.eye(p.m),
        m1=inner(Lin, Wb),
        m2_mat=sym(P.T @ Lin @ P),
        rho=rho,
        constant=float(p.b @ p.b) + 2.0 * alpha * float(p.b @ omega),
    )


def assemble_W(model, gamma, S):
    """``gamma * W_bar + P S P^T``."""
    return sym(gamma * model.W_bar + model.P @ S @ model.P.T)


def recover_y(rec, gamma, S, model=None, W_star=None):
    """Eliminated multiplier ``y = Q33^{-1}(-q3/2 - A(W_bar) gamma - A(P S P^T))``.

    Either the model or the assembled ``W_star`` must be supplied.
    """
    p = rec.problem
    if W_star is None:
        if model is None:
            if gamma == 0 and not np.any(S):
                return p.gram_solve(-0.5 * rec.q3)
            raise InvalidInput("recover_y needs the model or W_star")
        W_star = assemble_W(model, gamma, S)
    return p.gram_solve(-0.5 * rec.q3 - apply_A(p, W_star))


def recover_primal_candidate(Omega, alpha, W_star, y_star, p):
    """Candidate ``Omega + (W* - C + A*(y*)) / alpha``."""
    return sym(Omega + (W_star - p.C + apply_At(p, y_star)) / alpha)


def recover_dual_candidate(omega, alpha, W_star, p):
    """Candidate ``omega + (b - A(W*)) / alpha``."""
    return omega + (p.b - apply_A(p, W_star)) / alpha


def master_kkt_probe(p, model, sol, X, W_star=None):
    """Optimality certificate of a primal master-problem solution.

    Returns ``(attainment_gap, affine_residual, scale)`` where the gap is
    ``max_{W in model set} <W, -X> - <W*, -X>`` and the residual is
    ``|A(X) - b|``. The scale ``1 + rho * |X|_F`` bounds the size of the
    inner products involved.
    """
    W_star = assemble_W(model, sol.gamma, sol.S) if W_star is None else W_star
    negX = -X
    PtXP = model.P.T @ negX @ model.P
    lam = float(np.linalg.eigvalsh(sym(PtXP))[-1]) if PtXP.size else 0.0
    best = model.rho * max(0.0, inner(model.W_bar, negX), lam)
    gap = best - inner(W_star, negX)
    res = float(np.linalg.norm(apply_A(p, X) - p.b))
    return gap, res, 1.0 + model.rho * float(np.linalg.norm(X))
