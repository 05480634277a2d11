"""SDP data model, validation, file formats and primal/dual conversion.

The problems handled here are the standard pair

    (P)  minimize <C, X>    subject to  A(X) = b,  X psd
    (D)  maximize b^T y     subject to  C - A*(y) = Z,  Z psd

with dense symmetric ``C`` and ``A_1, ..., A_m``.
"""

import json
import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DegenerateConversion, InvalidInput, RankDeficient, UnsupportedFormat
from .symkernel import apply_A, apply_At, inner, smat, svec

SCHEMA_VERSION = 1

# relative asymmetry tolerated (and removed) when data enters an SdpProblem
_SYM_RTOL = 1e-10
# relative eigenvalue cutoff used to decide the numerical rank of the Gram matrix
_GRAM_RTOL = 1e-10


def _symmetrize(M, name):
    M = np.array(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise InvalidInput(f"{name} has non-finite entries")
    scale = 1.0 + np.max(np.abs(M), initial=0.0)
    asym = np.max(np.abs(M - np.swapaxes(M, -1, -2)), initial=0.0)
    if asym > _SYM_RTOL * scale:
        raise InvalidInput(f"{name} is not symmetric (max asymmetry {asym:.3e})")
    return 0.5 * (M + np.swapaxes(M, -1, -2))


class SdpProblem:
    """Data ``(C, A_1..A_m, b)`` of a standard-form SDP.

    ``A`` is stored as an ``(m, n, n)`` array. The Gram matrix
    ``Q33[i, j] = <A_i, A_j>`` and its Cholesky factor are computed on
    first use and cached.

    ``offset`` is nonzero only for problems produced by the conversion
    routines; the optimal value of the problem a conversion started from
    equals ``offset - (optimal value of this problem)``.
    """

    def __init__(self, C, A, b, offset=0.0):
        C = _symmetrize(C, "C")
        if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] < 1:
            raise InvalidInput(f"C must be a non-empty square matrix, got shape {C.shape}")
        n = C.shape[0]
        A = np.array(A, dtype=float)
        if A.ndim == 2 and A.shape == (n, n):
            A = A[None]
        if A.ndim != 3 or A.shape[1:] != (n, n) or A.shape[0] < 1:
            raise InvalidInput(f"A must have shape (m, {n}, {n}) with m >= 1, got {A.shape}")
        A = _symmetrize(A, "A")
        b = np.array(b, dtype=float).reshape(-1)
        if b.shape != (A.shape[0],):
            raise InvalidInput(f"b must have length m={A.shape[0]}, got {b.shape}")
        if not np.all(np.isfinite(b)):
            raise InvalidInput("b has non-finite entries")
        self.n = n
        self.m = A.shape[0]
        self.C = C
        self.A = A
        self.b = b
        self.A_flat = A.reshape(self.m, n * n)
        self.offset = float(offset)
        self._lock = threading.Lock()
        self._gram = None
        self._gram_chol = None

    def __repr__(self):
        return f"SdpProblem(n={self.n}, m={self.m})"

    @property
    def gram(self):
        """The Gram matrix ``Q33`` of the constraint matrices."""
        if self._gram is None:
            with self._lock:
                if self._gram is None:
                    G = self.A_flat @ self.A_flat.T
                    self._gram = 0.5 * (G + G.T)
        return self._gram

    @property
    def gram_chol(self):
        """Cached Cholesky factor of ``Q33``; raises RankDeficient if it fails."""
        if self._gram_chol is None:
            G = self.gram
            with self._lock:
                if self._gram_chol is None:
                    w = np.linalg.eigvalsh(G)
                    if w[0] <= _GRAM_RTOL * max(w[-1], 1e-300):
                        raise RankDeficient(
                            f"constraint Gram matrix is singular (min eig {w[0]:.3e}, max {w[-1]:.3e})"
                        )
                    self._gram_chol = scipy.linalg.cho_factor(G, lower=True)
        return self._gram_chol

    def gram_solve(self, v):
        """Solve ``Q33 x = v`` through the cached factorization."""
        return scipy.linalg.cho_solve(self.gram_chol, v)

    def least_norm_point(self):
        """The minimum-Frobenius-norm solution ``A*(Q33^{-1} b)`` of ``A(X) = b``."""
        return apply_At(self, self.gram_solve(self.b))

    def same_data(self, other):
        return (
            self.n == other.n
            and self.m == other.m
            and np.array_equal(self.C, other.C)
            and np.array_equal(self.A, other.A)
            and np.array_equal(self.b, other.b)
        )


@dataclass
class KnownSolution:
    """A primal-dual optimal triple together with the ranks of X* and Z*."""

    X_star: np.ndarray
    y_star: np.ndarray
    Z_star: np.ndarray
    rank_X: int
    rank_Z: int

    def residuals(self, p):
        """Feasibility, complementarity and PSD residuals of the triple for ``p``."""
        X, y, Z = self.X_star, self.y_star, self.Z_star
        return {
            "primal": float(np.linalg.norm(apply_A(p, X) - p.b)),
            "dual": float(np.linalg.norm(Z + apply_At(p, y) - p.C)),
            "complementarity": abs(inner(X, Z)),
            "min_eig_X": float(np.linalg.eigvalsh(X)[0]),
            "min_eig_Z": float(np.linalg.eigvalsh(Z)[0]),
        }


@dataclass
class ValidationReport:
    """Structural facts about an SdpProblem.

    ``constant_trace_primal`` is true when the identity lies in the span of
    the ``A_i``; every feasible X then has ``tr(X) == primal_trace``.
    ``constant_trace_dual`` is true when every ``A_i`` is traceless; every
    dual slack then has ``tr(Z) == dual_trace == tr(C)``.
    """

    n: int
    m: int
    gram_rank: int
    gram_min_eig: float
    independent: bool
    constant_trace_primal: bool
    primal_trace: float = None
    constant_trace_dual: bool = False
    dual_trace: float = None
    notes: list = field(default_factory=list)


def validate(p, rtol=_GRAM_RTOL):
    """Check linear independence of the constraints and detect constant-trace structure."""
    G = p.gram
    w = np.linalg.eigvalsh(G)
    wmax = max(float(w[-1]), 0.0)
    rank = int(np.sum(w > rtol * wmax)) if wmax > 0 else 0
    independent = rank == p.m
    notes = []
    if not independent:
        notes.append(f"constraint Gram matrix has rank {rank} < m={p.m}")

    n = p.n
    eye = np.eye(n)
    # least-squares representation of I in span{A_i}
    coef, *_ = np.linalg.lstsq(G, apply_A(p, eye), rcond=None)
    resid = np.linalg.norm(apply_At(p, coef) - eye)
    ct_primal = bool(resid <= 1e-9 * np.sqrt(n))
    k = float(coef @ p.b) if ct_primal else None

    traces = np.trace(p.A, axis1=1, axis2=2)
    scale = 1.0 + np.max(np.abs(p.A))
    ct_dual = bool(np.all(np.abs(traces) <= 1e-12 * n * scale))
    tz = float(np.trace(p.C)) if ct_dual else None
    return ValidationReport(
        n=n,
        m=p.m,
        gram_rank=rank,
        gram_min_eig=float(w[0]),
        independent=independent,
        constant_trace_primal=ct_primal,
        primal_trace=k,
        constant_trace_dual=ct_dual,
        dual_trace=tz,
        notes=notes,
    )


# ---------------------------------------------------------------------------
# SDPA sparse format


def _sdpa_numbers(line):
    for ch in "{}(),":
        line = line.replace(ch, " ")
    return line.split()


def read_sdpa(path):
    """Read a single-block SDPA sparse (``.dat-s``) file.

    SDPA stores ``min c^T x s.t. sum_i F_i x_i - F_0 psd`` and its dual
    ``max <F_0, Y> s.t. <F_i, Y> = c_i, Y psd``. The returned problem has
    ``C = -F_0``, ``A_i = F_i`` and ``b = c``, so its primal (P) is the
    SDPA dual with the objective negated and its dual (D) is the SDPA
    primal under ``y = -x``. Optimal values therefore differ in sign from
    the SDPA objective values.
    """
    with open(path) as fh:
        raw = fh.read().splitlines()
    lines = []
    for lineno, text in enumerate(raw, start=1):
        s = text.strip()
        if not s or s[0] in '"*':
            continue
        lines.append((lineno, s))
    if len(lines) < 4:
        raise InvalidInput(f"{path}: SDPA header is incomplete")

    def number(tok, lineno, kind=float):
        try:
            return kind(tok) if kind is float else int(tok)
        except ValueError:
            raise InvalidInput(f"{path}:{lineno}: cannot parse {tok!r}") from None

    lineno, s = lines[0]
    m = number(_sdpa_numbers(s)[0], lineno, int)
    lineno, s = lines[1]
    nblocks = number(_sdpa_numbers(s)[0], lineno, int)
    if m < 1:
        raise InvalidInput(f"{path}:{lineno}: m must be positive")
    if nblocks != 1:
        raise UnsupportedFormat(f"{path}: only single-block problems are supported (got {nblocks} blocks)")
    lineno, s = lines[2]
    sizes = [number(t, lineno, int) for t in _sdpa_numbers(s)]
    if len(sizes) < 1:
        raise InvalidInput(f"{path}:{lineno}: missing block size")
    if sizes[0] < 0:
        raise UnsupportedFormat(f"{path}:{lineno}: diagonal (LP) blocks are not supported")
    n = sizes[0]
    if n < 1:
        raise InvalidInput(f"{path}:{lineno}: block size must be positive")

    # the objective vector may span several lines
    cvals = []
    pos = 3
    while len(cvals) < m:
        if pos >= len(lines):
            raise InvalidInput(f"{path}: objective vector has fewer than {m} entries")
        lineno, s = lines[pos]
        cvals.extend(number(t, lineno) for t in _sdpa_numbers(s))
        pos += 1
    if len(cvals) != m:
        raise InvalidInput(f"{path}:{lineno}: objective vector has {len(cvals)} entries, expected {m}")

    F = np.zeros((m + 1, n, n))
    seen = set()
    for lineno, s in lines[pos:]:
        toks = _sdpa_numbers(s)
        if len(toks) != 5:
            raise InvalidInput(f"{path}:{lineno}: expected 'matno blkno i j value'")
        mat, blk, i, j = (number(t, lineno, int) for t in toks[:4])
        val = number(toks[4], lineno)
        if not 0 <= mat <= m:
            raise InvalidInput(f"{path}:{lineno}: matrix number {mat} out of range")
        if blk != 1:
            raise InvalidInput(f"{path}:{lineno}: block number {blk} out of range")
        if not (1 <= i <= n and 1 <= j <= n):
            raise InvalidInput(f"{path}:{lineno}: index ({i}, {j}) out of range")
        if i > j:
            raise InvalidInput(f"{path}:{lineno}: entry ({i}, {j}) is below the diagonal")
        if not np.isfinite(val):
            raise InvalidInput(f"{path}:{lineno}: non-finite value")
        if (mat, i, j) in seen:
            raise InvalidInput(f"{path}:{lineno}: duplicate entry ({mat}, {i}, {j})")
        seen.add((mat, i, j))
        F[mat, i - 1, j - 1] = val
        F[mat, j - 1, i - 1] = val
    return SdpProblem(-F[0], F[1:], np.array(cvals))


def write_sdpa(p, path):
    """Write ``p`` in SDPA sparse format using the mapping of :func:`read_sdpa`."""
    out = [str(p.m), "1", str(p.n), " ".join(format(v, ".17g") for v in p.b)]
    mats = [-p.C] + list(p.A)
    iu = np.triu_indices(p.n)
    for k, M in enumerate(mats):
        for i, j in zip(*iu):
            if M[i, j] != 0.0:
                out.append(f"{k} 1 {i + 1} {j + 1} {format(M[i, j] + 0.0, '.17g')}")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# JSON schema


def _upper(M):
    return M[np.triu_indices(M.shape[0])]


def _from_upper(vals, n, name):
    vals = np.asarray(vals, dtype=float)
    if vals.shape != (n * (n + 1) // 2,):
        raise InvalidInput(f"{name}: expected {n * (n + 1) // 2} upper-triangle entries, got {vals.shape}")
    M = np.zeros((n, n))
    iu = np.triu_indices(n)
    M[iu] = vals
    M[(iu[1], iu[0])] = vals
    return M


def _dump(obj):
    # JSON text with every float written to 17 significant digits
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_dump(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_dump(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return _dump(obj.tolist())
    if isinstance(obj, (bool, np.bool_)) or obj is None or isinstance(obj, str):
        return json.dumps(obj if not isinstance(obj, np.bool_) else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    x = float(obj)
    if not np.isfinite(x):
        raise InvalidInput("cannot serialize a non-finite number")
    s = format(x + 0.0, ".17g")
    if "." not in s and "e" not in s and "n" not in s:
        s += ".0"
    return s


def problem_to_dict(p, solution=None):
    d = {
        "schema_version": SCHEMA_VERSION,
        "n": p.n,
        "m": p.m,
        "C": _upper(p.C),
        "A": [_upper(Ai) for Ai in p.A],
        "b": p.b,
    }
    if p.offset != 0.0:
        d["offset"] = p.offset
    if solution is not None:
        d["solution"] = {
            "X_star": _upper(solution.X_star),
            "y_star": np.asarray(solution.y_star),
            "Z_star": _upper(solution.Z_star),
            "rank_X": int(solution.rank_X),
            "rank_Z": int(solution.rank_Z),
        }
    return d


def write_json(p, path, solution=None):
    """Write ``p`` (and optionally a KnownSolution) in the canonical JSON schema.

    Matrices are stored as their upper triangles in row-major order and
    every float is written with 17 significant digits, so reading the file
    back reproduces the data bit for bit.
    """
    text = _dump(problem_to_dict(p, solution)) + "\n"
    with open(path, "w") as fh:
        fh.write(text)


def problem_from_dict(d):
    """Inverse of :func:`problem_to_dict`; returns ``(problem, solution_or_None)``."""
    if not isinstance(d, dict):
        raise InvalidInput("problem JSON must be an object")
    try:
        n = d["n"]
        m = d["m"]
        C = d["C"]
        A = d["A"]
        b = d["b"]
    except KeyError as exc:
        raise InvalidInput(f"problem JSON is missing key {exc}") from None
    if not isinstance(n, int) or n < 1:
        raise InvalidInput(f"n must be a positive integer, got {n!r}")
    if not isinstance(m, int) or m < 1:
        raise InvalidInput(f"m must be a positive integer, got {m!r}")
    if not isinstance(A, list) or len(A) != m:
        raise InvalidInput(f"A must be a list of {m} matrices")
    if not isinstance(b, list) or len(b) != m:
        raise InvalidInput(f"b must be a list of length {m}")
    try:
        Cm = _from_upper(C, n, "C")
        Am = np.stack([_from_upper(a, n, f"A[{i}]") for i, a in enumerate(A)])
        bv = np.asarray(b, dtype=float)
    except (TypeError, ValueError) as exc:
        raise InvalidInput(f"problem JSON has malformed numeric data: {exc}") from None
    p = SdpProblem(Cm, Am, bv, offset=float(d.get("offset", 0.0)))
    sol = None
    if "solution" in d:
        s = d["solution"]
        try:
            sol = KnownSolution(
                X_star=_from_upper(s["X_star"], n, "X_star"),
                y_star=np.asarray(s["y_star"], dtype=float),
                Z_star=_from_upper(s["Z_star"], n, "Z_star"),
                rank_X=int(s["rank_X"]),
                rank_Z=int(s["rank_Z"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInput(f"malformed solution block: {exc}") from None
        if sol.y_star.shape != (m,):
            raise InvalidInput("solution y_star has the wrong length")
    return p, sol


def read_json_with_solution(path):
    """Read a problem file, returning ``(problem, KnownSolution or None)``."""
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}: invalid JSON ({exc})") from None
    return problem_from_dict(d)


def read_json(path):
    """Read a problem written by :func:`write_json`."""
    return read_json_with_solution(path)[0]


# ---------------------------------------------------------------------------
# conversion between (P) and (D)


def null_space_basis(p):
    """Orthonormal basis ``{N_i}`` of the orthogonal complement of span{A_i} in S^n.

    Orthonormality is in the trace inner product. Returns an array of shape
    ``(n(n+1)/2 - m, n, n)``.
    """
    if not validate(p).independent:
        raise RankDeficient("constraint matrices are linearly dependent")
    d = p.n * (p.n + 1) // 2
    if d - p.m <= 0:
        raise DegenerateConversion(
            f"the constraints determine X completely (m = n(n+1)/2 = {d}); nothing left to convert"
        )
    Asv = svec(p.A)  # m x d
    # complete QR of the constraint rows gives an orthonormal complement
    Q, _ = scipy.linalg.qr(Asv.T, mode="full")
    Nsv = Q[:, p.m:].T
    return smat(Nsv, p.n)


def convert_primal_to_dual(p):
    """Rewrite (P) as an inequality-form problem over the null space of A.

    Feasible points of (P) are ``X = X_p + sum_i u_i N_i`` with ``X_p`` the
    least-norm solution of ``A(X) = b``. The returned problem has
    ``C' = X_p``, ``A'_i = -N_i`` and ``b' = -N(C)``; its dual slack is the
    original X and the original optimal value is
    ``offset - (optimal value of the returned problem)``.
    """
    N = null_space_basis(p)
    Xp = p.least_norm_point()
    bprime = -(N.reshape(N.shape[0], -1) @ p.C.ravel())
    return SdpProblem(Xp, -N, bprime, offset=inner(p.C, Xp))


def convert_dual_to_primal(p):
    """Rewrite (D) as an equality-form problem in the slack ``Z``.

    The dual slacks are ``{Z : G(Z) = h}`` with ``G_i`` an orthonormal
    basis of the complement of span{A_i} and ``h = G(C)``. The cost is a
    feasible point ``X_f`` of ``A(X) = b`` (the least-norm one), since
    ``<X_f, C - A*(y)> = <X_f, C> - b^T y``. Returns
    ``(converted_problem, X_f)``; the original dual optimal value is
    ``offset - (optimal value of the returned problem)``.
    """
    G = null_space_basis(p)
    Xf = p.least_norm_point()
    h = G.reshape(G.shape[0], -1) @ p.C.ravel()
    return SdpProblem(Xf, G, h, offset=inner(p.C, Xf)), Xf
