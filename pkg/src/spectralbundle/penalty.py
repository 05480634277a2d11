"""Exact-penalty objectives and rules for choosing the penalty weight rho."""

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .symkernel import apply_At, eig_sym, inner, top_eigpairs


class PenaltySource(enum.Enum):
    UserGiven = "user"
    FromKnownSolution = "from-solution"
    MaxCutPrimal = "maxcut-primal"
    MaxCutDual = "maxcut-dual"
    SosSphere = "sos-sphere"
    ConstantTrace = "constant-trace"


class Side(enum.Enum):
    Primal = "primal"
    Dual = "dual"


@dataclass(frozen=True)
class PenaltyConfig:
    """A penalty weight and where it came from."""

    rho: float
    source: PenaltySource = PenaltySource.UserGiven

    def __post_init__(self):
        if not (np.isfinite(self.rho) and self.rho > 0):
            raise InvalidInput(f"rho must be a positive finite number, got {self.rho}")


def _check_square(p, X, name):
    X = np.asarray(X, dtype=float)
    if X.shape != (p.n, p.n):
        raise InvalidInput(f"{name} must be {p.n}x{p.n}, got {X.shape}")
    return X


def eval_primal_penalized(p, rho, X, r=1):
    """Penalized primal objective ``<C, X> + rho * max(lambda_max(-X), 0)``.

    Returns ``(value, V, lam)`` where ``V`` holds the top ``r`` eigenvectors
    of ``-X`` (one column by default) and ``lam`` is ``lambda_max(-X)``.
    """
    X = _check_square(p, X, "X")
    lams, V = top_eigpairs(-X, r)
    lam = float(lams[0])
    return inner(p.C, X) + rho * max(lam, 0.0), V, lam


def eval_dual_penalized(p, rho, y, r=1):
    """Penalized dual objective ``-b^T y + rho * max(lambda_max(A*(y) - C), 0)``.

    Returns ``(value, V, lam)`` analogous to :func:`eval_primal_penalized`.
    """
    y = np.asarray(y, dtype=float)
    lams, V = top_eigpairs(apply_At(p, y) - p.C, r)
    lam = float(lams[0])
    return -float(p.b @ y) + rho * max(lam, 0.0), V, lam


def maxcut_rho_dual(n):
    """Penalty weight ``2n + 2`` for the dual Max-Cut SDP on ``n`` vertices."""
    if n < 1:
        raise InvalidInput("n must be positive")
    return 2 * n + 2


def maxcut_rho_primal(L):
    """Penalty weight for the primal Max-Cut SDP with graph Laplacian ``L``.

    Computed as ``2 * (tr(L)/4 - (n/4) * min(0, lambda_min(L))) + 2``.
    """
    L = np.asarray(L, dtype=float)
    n = L.shape[0]
    lmin = float(eig_sym(L).values[-1])
    return 2.0 * (0.25 * float(np.trace(L)) - 0.25 * n * min(0.0, lmin)) + 2.0


def sos_sphere_rho(k, R_bar):
    """Valid penalty ``(1 + R_bar)**k`` for degree-``k`` sphere-constrained SOS relaxations."""
    if k < 1 or R_bar < 0:
        raise InvalidInput("need k >= 1 and R_bar >= 0")
    return (1 + R_bar) ** k


def rho_from_known(sol, side):
    """Penalty weight derived from a known optimal pair.

    Primal penalization uses ``2 tr(Z*) + 2``, dual penalization uses
    ``2 tr(X*) + 2``. Both sit strictly above the traces of the
    corresponding optimal multipliers.
    """
    side = Side(side) if not isinstance(side, Side) else side
    if side is Side.Primal:
        return 2.0 * float(np.trace(sol.Z_star)) + 2.0
    return 2.0 * float(np.trace(sol.X_star)) + 2.0
