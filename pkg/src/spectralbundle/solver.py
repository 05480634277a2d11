"""Outer loops of the primal (SBMP) and dual (SBMD) spectral bundle methods."""

import csv
import enum
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .bundle_model import eval_model_dual, eval_model_primal, init_model, update_model
from .errors import InvalidInput, SubproblemStall
from .penalty import PenaltyConfig, eval_dual_penalized, eval_primal_penalized
from .subqp import (
    assemble_W,
    build_sbmd_subqp,
    build_sbmp_subqp,
    recover_dual_candidate,
    recover_primal_candidate,
    recover_y,
    solve_subqp,
)
from .symkernel import apply_A, apply_At, inner

HISTORY_COLUMNS = [
    "t", "objective", "model_value", "step", "alpha",
    "eta1", "eta2", "eta3", "eta4", "eta5", "wall_ns",
]


class Step(enum.Enum):
    Descent = "Descent"
    Null = "Null"
    AffineCorrection = "AffineCorrection"


class Status(enum.Enum):
    Converged = "Converged"
    MaxIter = "MaxIter"
    SubproblemStall = "SubproblemStall"
    Stopped = "Stopped"


@dataclass
class SolverConfig:
    """Parameters shared by both methods.

    ``rho`` may be a float or a :class:`PenaltyConfig`. ``subqp_target``
    is the accuracy, relative to ``1 + rho * |iterate|``, to which the inner
    maximization over the model set is solved each iteration.
    """

    r_p: int = 0
    r_c: int = 1
    rho: object = 1.0
    alpha0: float = 1.0
    beta: float = 0.4
    m_l: float = 0.001
    m_r: float = 0.7
    alpha_min: float = 1e-5
    alpha_max: float = 100.0
    N_min: int = 10
    tol: float = 1e-6
    max_iter: int = 1000
    seed: int = 0
    stall_limit: int = 5
    subqp_tol: float = 1e-10
    subqp_target: float = 1e-11
    subqp_max_iter: int = 10000

    def __post_init__(self):
        if isinstance(self.rho, PenaltyConfig):
            self.penalty = self.rho
        else:
            self.penalty = PenaltyConfig(float(self.rho))
        self.validate()

    @property
    def rho_value(self):
        return float(self.penalty.rho)

    def validate(self, n=None):
        if self.r_c < 1:
            raise InvalidInput("r_c must be at least 1")
        if self.r_p < 0:
            raise InvalidInput("r_p must be nonnegative")
        if n is not None and self.r_p + self.r_c > n:
            raise InvalidInput(f"r_p + r_c = {self.r_p + self.r_c} exceeds n = {n}")
        if not 0 < self.m_l < self.beta < self.m_r < 1:
            raise InvalidInput("need 0 < m_l < beta < m_r < 1")
        if not 0 < self.alpha_min <= self.alpha0 <= self.alpha_max:
            raise InvalidInput("need 0 < alpha_min <= alpha0 <= alpha_max")
        if self.N_min < 1 or self.max_iter < 1:
            raise InvalidInput("N_min and max_iter must be positive")
        if self.tol < 0:
            raise InvalidInput("tol must be nonnegative")

    def snapshot(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "rho"}
        d["rho"] = self.rho_value
        d["rho_source"] = self.penalty.source.value
        return d


@dataclass
class IterRecord:
    """One row of the convergence history.

    ``objective`` is the penalized objective at the prox center after the
    iteration and ``model_value`` the model value at the candidate.
    """

    t: int
    objective: float
    model_value: float
    step: Step
    alpha: float
    eta: tuple
    wall_ns: int

    def row(self):
        return [self.t, self.objective, self.model_value, self.step.value, self.alpha, *self.eta, self.wall_ns]


@dataclass
class IterState:
    """Everything a per-iteration callback may want to inspect.

    ``center`` is the prox center the iteration started from and ``record``
    the history row just written. A callback that returns a true value
    ends the run with status ``Stopped``.
    """

    t: int
    side: str
    problem: object
    model: object
    model_next: object
    sol: object
    center: object
    candidate: object
    F_candidate: float
    model_candidate: float
    subgradient: object
    alpha: float
    step: Step
    record: IterRecord = None


@dataclass
class SolveReport:
    status: Status
    history: list
    final_X: np.ndarray = None
    final_y: np.ndarray = None
    final_W: np.ndarray = None
    final_Z: np.ndarray = None
    config: dict = field(default_factory=dict)
    algorithm: str = ""

    @property
    def iterations(self):
        return len(self.history)

    def objectives(self):
        return np.array([h.objective for h in self.history])

    def etas(self):
        return np.array([h.eta for h in self.history]).reshape(-1, 5)

    def cost_gaps(self, f_star):
        """Relative gaps ``(F - f*) / |f*|`` (absolute when ``f* == 0``)."""
        return cost_gap(self.objectives(), f_star)

    def to_dict(self, include_iterates=True):
        d = {
            "schema_version": 1,
            "algorithm": self.algorithm,
            "status": self.status.value,
            "iterations": self.iterations,
            "config": self.config,
            "final_eta": list(self.history[-1].eta) if self.history else None,
            "final_objective": self.history[-1].objective if self.history else None,
        }
        if include_iterates:
            for name in ("final_X", "final_y", "final_W", "final_Z"):
                val = getattr(self, name)
                d[name] = None if val is None else np.asarray(val).tolist()
        return d


def cost_gap(values, f_star):
    values = np.asarray(values, dtype=float)
    if f_star == 0:
        return values - f_star
    return (values - f_star) / abs(f_star)


def write_history_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for h in report.history:
            w.writerow([_fmt(v) for v in h.row()])


def write_history_jsonl(report, path):
    with open(path, "w") as fh:
        for h in report.history:
            fh.write(json.dumps(dict(zip(HISTORY_COLUMNS, h.row()))) + "\n")


def read_history_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return []
    missing = set(HISTORY_COLUMNS) - set(rows[0])
    if missing:
        raise InvalidInput(f"{path}: history is missing columns {sorted(missing)}")
    return rows


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return v


# ---------------------------------------------------------------------------
# step rules


def descent_test(F_ref, model_at_cand, F_at_cand, beta):
    """True iff ``beta * (F_ref - model) <= F_ref - F_cand`` (ties count as descent)."""
    return beta * (F_ref - model_at_cand) <= F_ref - F_at_cand


def adapt_alpha(alpha, predicted_drop, actual_drop, consecutive_nulls, cfg):
    """Double alpha after a run of poor null steps, halve it after a very good step."""
    if cfg.m_l * predicted_drop >= actual_drop and consecutive_nulls >= cfg.N_min:
        return min(2.0 * alpha, cfg.alpha_max)
    if cfg.m_r * predicted_drop <= actual_drop:
        return max(alpha / 2.0, cfg.alpha_min)
    return alpha


def suboptimality(p, X, y, Z):
    """The five scaled optimality residuals.

    Primal and dual infeasibility, the magnitudes of the most negative
    eigenvalues of X and Z, and the relative duality gap.
    """
    nb = float(np.linalg.norm(p.b))
    nC = float(np.linalg.norm(p.C))
    eta1 = float(np.linalg.norm(apply_A(p, X) - p.b)) / (1.0 + nb)
    eta2 = abs(min(0.0, float(np.linalg.eigvalsh(X)[0])))
    eta3 = float(np.linalg.norm(apply_At(p, y) + Z - p.C)) / (1.0 + nC)
    eta4 = abs(min(0.0, float(np.linalg.eigvalsh(Z)[0])))
    pv = inner(p.C, X)
    dv = float(p.b @ y)
    eta5 = abs(pv - dv) / (1.0 + abs(pv) + abs(dv))
    return (eta1, eta2, eta3, eta4, eta5)


# ---------------------------------------------------------------------------
# outer loops


class _Loop:
    """Bookkeeping shared by both methods: alpha, null counter, stalls, history."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.alpha = float(cfg.alpha0)
        self.nulls = 0
        self.stalls = 0
        self.history = []
        self.start = time.perf_counter_ns()

    def solve(self, q, fw_tol):
        try:
            sol = solve_subqp(q, tol=self.cfg.subqp_tol, max_iter=self.cfg.subqp_max_iter, fw_tol=fw_tol)
            self.stalls = 0
            return sol, False
        except SubproblemStall as exc:
            self.stalls += 1
            return exc.best, True

    def classify(self, F_ref, model_val, F_cand, stalled, affine):
        if affine:
            return Step.AffineCorrection
        if not stalled and descent_test(F_ref, model_val, F_cand, self.cfg.beta):
            return Step.Descent
        return Step.Null

    def adapt(self, step, F_ref, model_val, F_cand):
        if step is Step.Descent:
            self.nulls = 0
        elif step is Step.Null:
            self.nulls += 1
        if step is Step.AffineCorrection:
            return
        self.alpha = adapt_alpha(self.alpha, F_ref - model_val, F_ref - F_cand, self.nulls, self.cfg)

    def record(self, t, objective, model_val, step, alpha, eta):
        rec = IterRecord(t, float(objective), float(model_val), step, float(alpha), tuple(eta),
                         time.perf_counter_ns() - self.start)
        self.history.append(rec)
        return rec


def sbmp_solve(p, cfg, Omega0=None, callback=None):
    """Primal spectral bundle method for ``min <C, X> s.t. A(X) = b, X psd``.

    Minimizes the exact penalty ``<C, X> + rho * max(lambda_max(-X), 0)``
    over the affine set. Each iteration solves the reduced master problem,
    recovers the multiplier y* and the candidate X*, applies the descent
    test, refreshes the model with the top ``r_c`` eigenvectors of ``-X*``
    and adapts alpha. When the initial point violates ``A(X) = b`` the
    first candidate is accepted unconditionally. The run stops when all
    five residuals at ``(Omega, y*, W*)`` are at most ``cfg.tol``.
    """
    cfg.validate(p.n)
    rho = cfg.rho_value
    Omega = np.eye(p.n) if Omega0 is None else np.array(Omega0, dtype=float)
    if Omega.shape != (p.n, p.n):
        raise InvalidInput("Omega0 has the wrong shape")
    model = init_model(-Omega, cfg.r_p, cfg.r_c, rho)
    F_Omega = eval_primal_penalized(p, rho, Omega)[0]
    start_infeasible = float(np.linalg.norm(apply_A(p, Omega) - p.b)) > 0.0
    loop = _Loop(cfg)
    status = Status.MaxIter
    X = y = W = None

    for t in range(cfg.max_iter):
        alpha = loop.alpha
        q, rec = build_sbmp_subqp(p, model, Omega, alpha)
        fw_tol = 2.0 * alpha * cfg.subqp_target * (1.0 + rho * float(np.linalg.norm(Omega)))
        sol, stalled = loop.solve(q, fw_tol)
        W = assemble_W(model, sol.gamma, sol.S)
        y = recover_y(rec, sol.gamma, sol.S, W_star=W)
        X = recover_primal_candidate(Omega, alpha, W, y, p)
        # one refinement step onto A(X) = b, keeping X = Omega + (W - C + A*y)/alpha
        dz = p.gram_solve(p.b - apply_A(p, X))
        X = X + apply_At(p, dz)
        y = y + alpha * dz
        sol = _with(sol, W_star=W, y_star=y)

        F_X, V, lam = eval_primal_penalized(p, rho, X, r=cfg.r_c)
        model_X = eval_model_primal(model, p, X)
        affine = t == 0 and start_infeasible
        step = loop.classify(F_Omega, model_X, F_X, stalled, affine)
        model_next = update_model(model, sol, V)
        loop.adapt(step, F_Omega, model_X, F_X)
        center = Omega
        if step is not Step.Null:
            Omega, F_Omega = X, F_X
        eta = suboptimality(p, Omega, y, W)
        record = loop.record(t, F_Omega, model_X, step, alpha, eta)
        if callback is not None:
            v = V[:, 0]
            sg = p.C - rho * np.outer(v, v) if lam > 0 else p.C.copy()
            state = IterState(t, "primal", p, model, model_next, sol, center, X, F_X, model_X, sg, alpha, step, record)
            if callback(state):
                status = Status.Stopped
                break
        model = model_next
        if max(eta) <= cfg.tol:
            status = Status.Converged
            break
        if loop.stalls >= cfg.stall_limit:
            status = Status.SubproblemStall
            break
    return SolveReport(
        status=status,
        history=loop.history,
        final_X=Omega,
        final_y=y,
        final_W=W,
        final_Z=W,
        config=cfg.snapshot(),
        algorithm="sbmp",
    )


def sbmd_solve(p, cfg, omega0=None, callback=None):
    """Dual spectral bundle method for ``max b^T y s.t. C - A*(y) psd``.

    Minimizes ``-b^T y + rho * max(lambda_max(A*(y) - C), 0)`` over all y.
    The candidate is ``omega + (b - A(W*)) / alpha`` and the model is
    refreshed with the top ``r_c`` eigenvectors of ``A*(y*) - C``. The run
    stops when all five residuals at ``(W*, omega, C - A*(omega))`` are at
    most ``cfg.tol``.
    """
    cfg.validate(p.n)
    rho = cfg.rho_value
    omega = np.zeros(p.m) if omega0 is None else np.array(omega0, dtype=float)
    if omega.shape != (p.m,):
        raise InvalidInput("omega0 has the wrong shape")
    model = init_model(apply_At(p, omega) - p.C, cfg.r_p, cfg.r_c, rho)
    F_omega = eval_dual_penalized(p, rho, omega)[0]
    loop = _Loop(cfg)
    status = Status.MaxIter
    W = None

    for t in range(cfg.max_iter):
        alpha = loop.alpha
        q = build_sbmd_subqp(p, model, omega, alpha)
        G = p.C - apply_At(p, omega)
        fw_tol = 2.0 * alpha * cfg.subqp_target * (1.0 + rho * float(np.linalg.norm(G)))
        sol, stalled = loop.solve(q, fw_tol)
        W = assemble_W(model, sol.gamma, sol.S)
        y = recover_dual_candidate(omega, alpha, W, p)
        sol = _with(sol, W_star=W, y_star=y)

        F_y, V, lam = eval_dual_penalized(p, rho, y, r=cfg.r_c)
        model_y = eval_model_dual(model, p, y)
        step = loop.classify(F_omega, model_y, F_y, stalled, False)
        model_next = update_model(model, sol, V)
        loop.adapt(step, F_omega, model_y, F_y)
        center = omega
        if step is Step.Descent:
            omega, F_omega = y, F_y
        Z = p.C - apply_At(p, omega)
        eta = suboptimality(p, W, omega, Z)
        record = loop.record(t, F_omega, model_y, step, alpha, eta)
        if callback is not None:
            v = V[:, 0]
            sg = -p.b + rho * apply_A(p, np.outer(v, v)) if lam > 0 else -p.b.copy()
            state = IterState(t, "dual", p, model, model_next, sol, center, y, F_y, model_y, sg, alpha, step, record)
            if callback(state):
                status = Status.Stopped
                break
        model = model_next
        if max(eta) <= cfg.tol:
            status = Status.Converged
            break
        if loop.stalls >= cfg.stall_limit:
            status = Status.SubproblemStall
            break
    return SolveReport(
        status=status,
        history=loop.history,
        final_X=W,
        final_y=omega,
        final_W=W,
        final_Z=p.C - apply_At(p, omega),
        config=cfg.snapshot(),
        algorithm="sbmd",
    )


def _with(sol, **kw):
    d = {k: getattr(sol, k) for k in sol.__dataclass_fields__}
    d.update(kw)
    return type(sol)(**d)


__all__ = [
    "SolverConfig", "IterRecord", "IterState", "SolveReport", "Step", "Status",
    "descent_test", "adapt_alpha", "suboptimality", "sbmp_solve", "sbmd_solve",
    "write_history_csv", "write_history_jsonl", "read_history_csv", "cost_gap",
]
