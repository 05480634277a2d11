"""Test-instance construction: random SDPs with a known optimal pair and Max-Cut SDPs."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .problem import KnownSolution, SdpProblem
from .symkernel import apply_A, apply_At


@dataclass
class GeneratedInstance:
    """A random SDP together with the optimal triple it was built around.

    ``sigma_p = n - rank_X`` and ``sigma_d = n - rank_Z`` are the
    null-space dimensions of the optimal X* and Z*.
    """

    problem: SdpProblem
    solution: KnownSolution
    sigma_p: int
    sigma_d: int
    seed: int


def gen_random_sdp(n, m, r, seed):
    """Random SDP with a known strictly complementary optimal pair.

    An orthonormal basis U is drawn from the eigenvectors of a Gaussian
    symmetric matrix and paired with eigenvalues uniform in [0.5, 1.5]. The
    first ``r`` eigenpairs form X*, the remaining ``n - r`` form Z*, so
    ``X* Z* = 0`` and ``rank X* + rank Z* = n``. The constraint matrices are
    Gaussian symmetric with their trace removed, y* is standard normal, and
    then ``C = Z* + A*(y*)`` and ``b = A(X*)``.

    The same arguments always give bit-identical output.
    """
    n, m, r = int(n), int(m), int(r)
    if n < 2 or not 1 <= r < n:
        raise InvalidInput(f"need 1 <= r < n, got n={n}, r={r}")
    if m < 1:
        raise InvalidInput("m must be positive")
    if m > n * (n + 1) // 2 - 1:
        raise InvalidInput(f"m={m} is too large for traceless constraints of order {n}")
    rng = np.random.default_rng(seed)

    G = rng.standard_normal((n, n))
    _, U = np.linalg.eigh(G + G.T)
    sig = rng.uniform(0.5, 1.5, size=n)
    U1, U2 = U[:, :r], U[:, r:]
    X_star = (U1 * sig[:r]) @ U1.T
    Z_star = (U2 * sig[r:]) @ U2.T
    X_star = 0.5 * (X_star + X_star.T)
    Z_star = 0.5 * (Z_star + Z_star.T)

    A = rng.standard_normal((m, n, n))
    A = 0.5 * (A + np.swapaxes(A, 1, 2))
    tr = np.trace(A, axis1=1, axis2=2)
    A -= tr[:, None, None] * np.eye(n)[None] / n

    y_star = rng.standard_normal(m)
    shell = SdpProblem(np.zeros((n, n)), A, np.zeros(m))
    C = Z_star + apply_At(shell, y_star)
    b = apply_A(shell, X_star)
    problem = SdpProblem(C, A, b)
    # C was symmetrized on entry; keep Z* consistent with the stored C
    Z_star = problem.C - apply_At(problem, y_star)
    sol = KnownSolution(X_star=X_star, y_star=y_star, Z_star=Z_star, rank_X=r, rank_Z=n - r)
    return GeneratedInstance(problem=problem, solution=sol, sigma_p=n - r, sigma_d=r, seed=seed)


@dataclass
class Graph:
    """Undirected weighted graph with 0-based vertices and edges ``(i, j, w)``, ``i < j``."""

    n: int
    edges: list

    def __post_init__(self):
        if self.n < 1:
            raise InvalidInput("a graph needs at least one vertex")
        seen = set()
        clean = []
        for e in self.edges:
            i, j, w = int(e[0]), int(e[1]), float(e[2])
            if i == j:
                raise InvalidInput(f"self-loop at vertex {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise InvalidInput(f"edge ({i}, {j}) out of range for n={self.n}")
            if not np.isfinite(w):
                raise InvalidInput(f"edge ({i}, {j}) has a non-finite weight")
            if i > j:
                i, j = j, i
            if (i, j) in seen:
                raise InvalidInput(f"duplicate edge ({i}, {j})")
            seen.add((i, j))
            clean.append((i, j, w))
        self.edges = clean

    def laplacian(self):
        L = np.zeros((self.n, self.n))
        for i, j, w in self.edges:
            L[i, j] -= w
            L[j, i] -= w
            L[i, i] += w
            L[j, j] += w
        return L


def maxcut_sdp(g, sense="min"):
    """Max-Cut relaxation over ``{X psd, X_ii = 1}``.

    ``sense="min"`` gives ``min <L/4, X>``, whose optimum is 0 at the
    all-ones matrix for nonnegative weights. ``sense="max"`` gives the
    Goemans-Williamson bound ``max <L/4, X>`` written in standard form as
    ``min <-L/4, X>``; its optimal value is minus the bound.
    """
    if sense not in ("min", "max"):
        raise InvalidInput(f"sense must be 'min' or 'max', got {sense!r}")
    n = g.n
    A = np.zeros((n, n, n))
    A[np.arange(n), np.arange(n), np.arange(n)] = 1.0
    C = g.laplacian() / 4.0
    return SdpProblem(C if sense == "min" else -C, A, np.ones(n))


def read_graph(path):
    """Parse a Gset-style edge list: ``n m_edges`` then ``i j w`` lines, 1-based."""
    with open(path) as fh:
        rows = [(k, ln.split()) for k, ln in enumerate(fh, start=1) if ln.strip()]
    if not rows:
        raise InvalidInput(f"{path}: empty graph file")
    k, head = rows[0]
    try:
        n, n_edges = int(head[0]), int(head[1])
    except (ValueError, IndexError):
        raise InvalidInput(f"{path}:{k}: header must be 'n m_edges'") from None
    if n < 1 or n_edges < 0:
        raise InvalidInput(f"{path}:{k}: invalid header")
    edges = []
    seen = set()
    for k, toks in rows[1:]:
        if len(toks) not in (2, 3):
            raise InvalidInput(f"{path}:{k}: expected 'i j w'")
        try:
            i, j = int(toks[0]), int(toks[1])
            w = float(toks[2]) if len(toks) == 3 else 1.0
        except ValueError:
            raise InvalidInput(f"{path}:{k}: cannot parse edge") from None
        if not (1 <= i <= n and 1 <= j <= n):
            raise InvalidInput(f"{path}:{k}: vertex out of range 1..{n}")
        if i == j:
            raise InvalidInput(f"{path}:{k}: self-loop")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise InvalidInput(f"{path}:{k}: duplicate edge {key}")
        seen.add(key)
        edges.append((key[0] - 1, key[1] - 1, w))
    if len(edges) != n_edges:
        raise InvalidInput(f"{path}: header announces {n_edges} edges, found {len(edges)}")
    return Graph(n, edges)


def write_graph(g, path):
    with open(path, "w") as fh:
        fh.write(f"{g.n} {len(g.edges)}\n")
        for i, j, w in g.edges:
            fh.write(f"{i + 1} {j + 1} {format(w, '.17g')}\n")


def random_graph(n, density, seed, weights="uniform"):
    """Erdos-Renyi graph with edge probability ``density``.

    ``weights`` is ``"uniform"`` for weights uniform in [0.5, 1.5] or
    ``"unit"`` for all-ones weights.
    """
    rng = np.random.default_rng(seed)
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < density:
                w = rng.uniform(0.5, 1.5) if weights == "uniform" else 1.0
                edges.append((i, j, w))
    return Graph(n, edges)
