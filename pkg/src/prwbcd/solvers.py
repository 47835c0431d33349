"""Solvers for the projection robust Wasserstein (PRW) distance.

All four methods share the entropic max-min problem

    max_U  min_{pi in Pi(r, c)}  sum_ij pi_ij ||U^T (x_i - y_j)||^2 - eta H(pi)

* ``rbcd``  - block coordinate descent on the dual reformulation
  g(u, v, U) = sum_ij pi(u, v, U)_ij - r^T u - c^T v: one exact Sinkhorn step
  in u, one in v, one Riemannian gradient step in U per iteration.
* ``rabcd`` - as ``rbcd`` with row/column adaptive preconditioning of the
  U step.
* ``rgas``  - Riemannian gradient ascent on U, solving the entropic OT
  problem to tolerance at every iteration.
* ``ragas`` - ``rgas`` with the same adaptive preconditioning.

Step-size convention: ``SolverConfig.tau`` is the block-descent step. The
ascent baselines apply ``tau / eta`` to grad p(U) = Proj(2 V_pi U), which
gives them the same effective step on U as the descent methods.
"""
from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.spatial.distance import cdist

from . import stiefel
from .measures import ProblemInstance
from .transport import (
    DualPotentials,
    TransportPlan,
    logsumexp,
    projected_cost_matrix,
    round_to_polytope,
    sinkhorn_regot,
    sinkhorn_scaled,
)

ALGORITHMS = ("rbcd", "rabcd", "rgas", "ragas")
MODES = ("practical", "theory")
TRACE_FULL = 10_000
TRACE_STRIDE = 10
_TINY = 1e-280


class SolverError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    k: int = 2
    eta: float = 0.2
    tau: float = 0.005
    eps1: float = 0.1
    eps2: float = 0.1
    max_iter: int = 20_000
    retraction: str = "qr"
    mode: str = "practical"
    alpha: float = 1e-3
    beta: float = 0.8
    seed: int = 0
    L1: float | None = None
    L2: float | None = None
    # ascent baselines only
    inner_tol: float | None = None
    inner_max_iter: int = 20_000
    warm_start: bool = False
    deterministic: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not (self.eta > 0 and self.tau > 0):
            raise ValueError("eta and tau must be positive")
        if not self.eps1 >= self.eps2 > 0:
            raise ValueError(f"need eps1 >= eps2 > 0, got eps1={self.eps1}, eps2={self.eps2}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.retraction not in stiefel.RETRACTIONS:
            raise ValueError(f"retraction must be one of {stiefel.RETRACTIONS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not (0 < self.alpha < 1 and 0 < self.beta < 1):
            raise ValueError("alpha and beta must lie in (0, 1)")
        for name in ("L1", "L2", "inner_tol"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SolverConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> "SolverConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Parameters:
    """Step parameters actually used by a run."""

    eta: float
    tau: float
    rho: float
    L1: float
    L2: float
    descent_coef: float  # guaranteed U-step decrease per unit ||xi||^2 (theory mode)


@lru_cache(maxsize=64)
def _retraction_constants(method: str, d: int, k: int) -> tuple[float, float]:
    return stiefel.estimate_retraction_constants(method, d=d, k=k, samples=1000, seed=0)


def resolve_parameters(config: SolverConfig, instance: ProblemInstance, algorithm: str = "rbcd") -> Parameters:
    """eta and tau for a run; theory mode derives both from eps2, L1, L2 and ||C||_inf."""
    C = instance.cost_sup
    k = config.k
    if k > instance.d:
        raise ValueError(f"k={k} exceeds the ambient dimension d={instance.d}")
    if config.mode == "practical":
        eta, tau = config.eta, config.tau
    else:
        eta = config.eps2 / (4.0 * math.log(instance.n) + 2.0)
    if config.L1 is None or config.L2 is None:
        L1, L2 = _retraction_constants(config.retraction, instance.d, k)
        L1 = config.L1 if config.L1 is not None else L1
        L2 = config.L2 if config.L2 is not None else L2
    else:
        L1, L2 = config.L1, config.L2
    rho = 2.0 * C / eta + 4.0 * math.sqrt(k) * C**2 / eta**2
    if algorithm in ("rabcd", "ragas"):
        theory_tau = config.alpha * C / (8.0 * L2 * C / eta + 2.0 * rho * L1**2) if C > 0 else config.tau
        coef = config.alpha / (32.0 * C * L2 / eta + 8.0 * rho * L1**2) if C > 0 else 0.0
    else:
        theory_tau = 1.0 / (4.0 * L2 * C / eta + rho * L1**2) if C > 0 else config.tau
        coef = 1.0 / (8.0 * L2 * C / eta + 2.0 * rho * L1**2) if C > 0 else 0.0
    if config.mode == "theory":
        tau = theory_tau
    return Parameters(eta=eta, tau=tau, rho=rho, L1=L1, L2=L2, descent_coef=coef)


class Trace:
    """Per-iteration records; every iteration up to 10^4 entries, every 10th after."""

    def __init__(self):
        self.columns: dict[str, list] = {}
        self._rows = 0

    def wants(self, it: int) -> bool:
        return self._rows < TRACE_FULL or it % TRACE_STRIDE == 0

    def record(self, **values) -> None:
        for key, val in values.items():
            self.columns.setdefault(key, []).append(val)
        self._rows += 1

    def __len__(self) -> int:
        return self._rows

    def __getitem__(self, key: str) -> np.ndarray:
        return np.asarray(self.columns[key])

    def to_dict(self) -> dict:
        out = {}
        for key, vals in self.columns.items():
            out[key] = [v.tolist() if isinstance(v, np.ndarray) else v for v in vals]
        return out


@dataclass
class SolveResult:
    algorithm: str
    U_hat: np.ndarray
    pi_hat: TransportPlan
    prw_value: float
    potentials: DualPotentials
    iterations: int
    converged: bool
    g_final: float
    parameters: Parameters
    trace: Trace
    wall_time: float
    phase_times: dict = field(default_factory=dict)
    descent_violations: int = 0

    def to_dict(self, include_trace: bool = True) -> dict:
        out = {
            "algorithm": self.algorithm,
            "prw_value": self.prw_value,
            "iterations": self.iterations,
            "converged": self.converged,
            "g_final": self.g_final,
            "wall_ms": 1e3 * self.wall_time,
            "phase_ms": {k: 1e3 * v for k, v in self.phase_times.items()},
            "descent_violations": self.descent_violations,
            "parameters": dataclasses.asdict(self.parameters),
            "U_hat": self.U_hat.tolist(),
        }
        if include_trace:
            out["trace"] = self.trace.to_dict()
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw))


class _Clock:
    def __init__(self, *phases):
        self.totals = dict.fromkeys(phases, 0.0)
        self._t = time.perf_counter()

    def lap(self, phase: str) -> None:
        now = time.perf_counter()
        self.totals[phase] += now - self._t
        self._t = now


def _initial_point(instance: ProblemInstance, config: SolverConfig, U0) -> np.ndarray:
    if config.k > instance.d:
        raise ValueError(f"k={config.k} exceeds the ambient dimension d={instance.d}")
    if U0 is None:
        return stiefel.random_point(instance.d, config.k, config.seed)
    U = stiefel.as_stiefel(U0)
    if U.shape != (instance.d, config.k):
        raise ValueError(f"U0 has shape {U.shape}, expected {(instance.d, config.k)}")
    return U


def _vpi_u(X, Y, XU, YU, P) -> np.ndarray:
    row, col = P.sum(axis=1), P.sum(axis=0)
    return X.T @ (row[:, None] * XU - P @ YU) + Y.T @ (col[:, None] * YU - P.T @ XU)


def _count_increases(g: np.ndarray, slack: float = 1e-10) -> int:
    if g.size < 2:
        return 0
    return int(np.sum(np.diff(g) > slack * np.maximum(1.0, np.abs(g[:-1]))))


def _finish(algorithm, instance, U, u, v, eta, converged, iterations, params, trace, t0, clock, logK=None):
    if logK is None:
        XU, YU = instance.X @ U, instance.Y @ U
        logK = -cdist(XU, YU, metric="sqeuclidean") / eta
    plan = TransportPlan(log_pi=logK + u[:, None] + v[None, :])
    pi_hat = round_to_polytope(plan, instance.r, instance.c)
    M = -eta * logK
    prw = float(np.sum(M * pi_hat.pi))
    g_final = math.exp(logsumexp(plan.log_pi)) - float(instance.r @ u) - float(instance.c @ v)
    g_trace = trace["g"] if "g" in trace.columns else np.empty(0)
    return SolveResult(
        algorithm=algorithm,
        U_hat=U,
        pi_hat=pi_hat,
        prw_value=prw,
        potentials=DualPotentials(u, v),
        iterations=iterations,
        converged=converged,
        g_final=g_final,
        parameters=params,
        trace=trace,
        wall_time=time.perf_counter() - t0,
        phase_times=clock.totals,
        descent_violations=_count_increases(g_trace),
    )


def _sinkhorn_sweep(logK, u, v, r, c, log_r, log_c):
    """One exact u-minimization then one exact v-minimization of g.

    The plan is exponentiated once and rescaled in place; if a row or column
    sum underflows (or the plan overflows) the sweep reruns in log space.
    Returns (u, v, v_prev, plan, g before the sweep, row gap, column gap).
    """
    L = logK + u[:, None] + v[None, :]
    with np.errstate(over="ignore", under="ignore"):
        P = np.exp(L)
    row = P.sum(axis=1)
    fast = bool(np.all((row > _TINY) & np.isfinite(row)))
    if fast:
        g_start = float(row.sum()) - float(r @ u) - float(c @ v)
        P *= (r / row)[:, None]
        col = P.sum(axis=0)
        fast = bool(np.all((col > _TINY) & np.isfinite(col)))
    if fast:
        u_new = u + (log_r - np.log(row))
        v_new = v + (log_c - np.log(col))
        P *= (c / col)[None, :]
        return u_new, v_new, v, P, g_start, row - r, col - c
    log_row = logsumexp(L, axis=1)
    g_start = math.exp(logsumexp(log_row)) - float(r @ u) - float(c @ v)
    du = log_r - log_row
    L += du[:, None]
    log_col = logsumexp(L, axis=0)
    dv = log_c - log_col
    L += dv[None, :]
    return u + du, v + dv, v, np.exp(L), g_start, np.exp(log_row) - r, np.exp(log_col) - c


def _block_descent(instance, config, U0, adaptive: bool) -> SolveResult:
    algorithm = "rabcd" if adaptive else "rbcd"
    t0 = time.perf_counter()
    params = resolve_parameters(config, instance, algorithm)
    eta, tau = params.eta, params.tau
    X, Y, r, c = instance.X, instance.Y, instance.r, instance.c
    log_r, log_c = np.log(r), np.log(c)
    scale = instance.cost_sup if instance.cost_sup > 0 else 1.0
    marg_tol = config.eps2 / (8.0 * scale)
    grad_tol = config.eps1 / 4.0 if adaptive else config.eps1 / (4.0 * eta)
    d, k = instance.d, config.k

    U = _initial_point(instance, config, U0)
    u, v = log_r.copy(), log_c.copy()
    if adaptive:
        p, q = np.zeros(d), np.zeros(k)
        p_hat = np.full(d, config.alpha * scale**2)
        q_hat = np.full(k, config.alpha * scale**2)

    trace = Trace()
    clock = _Clock("cost", "sinkhorn", "gradient", "retraction")
    best_g, best_state = np.inf, None
    converged = False
    it = 0
    logK = None
    for it in range(config.max_iter):
        XU, YU = X @ U, Y @ U
        logK = -cdist(XU, YU, metric="sqeuclidean") / eta
        clock.lap("cost")

        u, v, v_prev, P, g_start, row_gap, col_gap = _sinkhorn_sweep(logK, u, v, r, c, log_r, log_c)
        clock.lap("sinkhorn")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise FloatingPointError(f"{algorithm}: non-finite potentials at iteration {it}; eta is too small")

        # (u^{t+1}, v^t, U^t) is the candidate output; its plan has unit mass
        g_cand = 1.0 - float(r @ u) - float(c @ v_prev)
        if g_cand < best_g:
            best_g, best_state = g_cand, (U, u, v_prev, logK)

        VU = _vpi_u(X, Y, XU, YU, P)
        if adaptive:
            G = stiefel.project_tangent(U, -2.0 * VU)
            G2 = G * G
            p = config.beta * p + (1.0 - config.beta) * G2.sum(axis=1) / k
            q = config.beta * q + (1.0 - config.beta) * G2.sum(axis=0) / d
            p_hat = np.maximum(p_hat, p)
            q_hat = np.maximum(q_hat, q)
            scaled = p_hat[:, None] ** -0.25 * G * q_hat[None, :] ** -0.25
            xi = stiefel.project_tangent(U, scaled) / eta
            stat_norm = float(np.linalg.norm(G))
        else:
            xi = stiefel.project_tangent(U, (-2.0 / eta) * VU)
            stat_norm = float(np.linalg.norm(xi))
        clock.lap("gradient")

        row_err = float(np.linalg.norm(row_gap))
        col_err = float(np.abs(col_gap).sum())
        if trace.wants(it):
            rec = dict(
                iteration=it,
                g=g_start,
                g_after_u=g_cand,
                g_after_v=1.0 - float(r @ u) - float(c @ v),
                grad_norm=stat_norm,
                xi_norm=float(np.linalg.norm(xi)),
                row_err=row_err,
                col_err=col_err,
                time=time.perf_counter() - t0,
            )
            if adaptive:
                rec.update(p_hat=p_hat.copy(), q_hat=q_hat.copy())
            trace.record(**rec)

        if stat_norm <= grad_tol and row_err <= marg_tol and col_err <= marg_tol:
            converged = True
            break
        try:
            U = stiefel.retract(U, -tau * xi, config.retraction)
        except stiefel.RetractionError as exc:
            raise SolverError(f"{algorithm}: degenerate retraction at iteration {it}; reduce tau") from exc
        clock.lap("retraction")

    if converged:
        return _finish(algorithm, instance, U, u, v_prev, eta, True, it + 1, params, trace, t0, clock, logK)
    U, u, v, logK = best_state
    return _finish(algorithm, instance, U, u, v, eta, False, config.max_iter, params, trace, t0, clock, logK)


def rbcd(instance: ProblemInstance, config: SolverConfig | None = None, U0=None) -> SolveResult:
    """Riemannian block coordinate descent.

    Each iteration: exact u- and v-minimization of g (one Sinkhorn sweep),
    then U <- Retr_U(-tau xi) with xi = Proj_U(-(2/eta) V_pi U). Stops when
    ||xi||_F <= eps1/(4 eta) and both marginal errors are <= eps2/(8 ||C||_inf),
    and returns Round(pi(u^{t+1}, v^t, U^t)).
    """
    return _block_descent(instance, config or SolverConfig(), U0, adaptive=False)


def rabcd(instance: ProblemInstance, config: SolverConfig | None = None, U0=None) -> SolveResult:
    """Adaptive variant of :func:`rbcd`.

    The U step is preconditioned by running row/column second moments of the
    Riemannian gradient G = Proj_U(-2 V_pi U) (clamped to be non-decreasing),
    and the run stops on ||G||_F <= eps1/4 plus the marginal tests.
    """
    return _block_descent(instance, config or SolverConfig(), U0, adaptive=True)


def _gradient_ascent(instance, config, U0, adaptive: bool) -> SolveResult:
    algorithm = "ragas" if adaptive else "rgas"
    t0 = time.perf_counter()
    params = resolve_parameters(config, instance, "rbcd" if not adaptive else "rabcd")
    eta = params.eta
    step = params.tau / eta
    X, Y, r, c = instance.X, instance.Y, instance.r, instance.c
    scale = instance.cost_sup if instance.cost_sup > 0 else 1.0
    inner_tol = config.inner_tol if config.inner_tol is not None else config.eps2 / (16.0 * scale)
    grad_tol = config.eps1 / 4.0
    d, k = instance.d, config.k

    U = _initial_point(instance, config, U0)
    if adaptive:
        p, q = np.zeros(d), np.zeros(k)
        p_hat = np.full(d, config.alpha * scale**2)
        q_hat = np.full(k, config.alpha * scale**2)

    trace = Trace()
    clock = _Clock("cost", "sinkhorn", "gradient", "retraction")
    best_g, best_state = np.inf, None
    converged = False
    pot = None
    it = 0
    for it in range(config.max_iter):
        XU, YU = X @ U, Y @ U
        M = cdist(XU, YU, metric="sqeuclidean")
        clock.lap("cost")
        inner = sinkhorn_regot(
            instance, M, eta, tol=inner_tol, max_iter=config.inner_max_iter,
            init=pot if config.warm_start else None,
        )
        clock.lap("sinkhorn")
        if not inner.converged:
            raise SolverError(
                f"{algorithm}: inner Sinkhorn did not reach l1 tolerance {inner_tol:.3g} within "
                f"{config.inner_max_iter} iterations at outer iteration {it} (violation {inner.violation:.3g})"
            )
        pot = inner.potentials
        u, v = pot.u, pot.v
        g = math.exp(logsumexp(inner.plan.log_pi)) - float(r @ u) - float(c @ v)
        if g < best_g:
            best_g, best_state = g, (U, u, v)

        P = inner.plan.pi
        G = stiefel.project_tangent(U, 2.0 * _vpi_u(X, Y, XU, YU, P))
        gnorm = float(np.linalg.norm(G))
        if adaptive:
            G2 = G * G
            p = config.beta * p + (1.0 - config.beta) * G2.sum(axis=1) / k
            q = config.beta * q + (1.0 - config.beta) * G2.sum(axis=0) / d
            p_hat = np.maximum(p_hat, p)
            q_hat = np.maximum(q_hat, q)
            direction = stiefel.project_tangent(U, p_hat[:, None] ** -0.25 * G * q_hat[None, :] ** -0.25)
        else:
            direction = G
        clock.lap("gradient")

        if trace.wants(it):
            row, col = P.sum(axis=1), P.sum(axis=0)
            rec = dict(
                iteration=it,
                g=g,
                grad_norm=gnorm,
                row_err=float(np.linalg.norm(row - r)),
                col_err=float(np.abs(col - c).sum()),
                inner_iterations=inner.iterations,
                time=time.perf_counter() - t0,
            )
            if adaptive:
                rec.update(p_hat=p_hat.copy(), q_hat=q_hat.copy())
            trace.record(**rec)

        if gnorm <= grad_tol:
            converged = True
            break
        try:
            U = stiefel.retract(U, step * direction, config.retraction)
        except stiefel.RetractionError as exc:
            raise SolverError(f"{algorithm}: degenerate retraction at iteration {it}; reduce tau") from exc
        clock.lap("retraction")

    if not converged:
        U, u, v = best_state
    iterations = it + 1 if converged else config.max_iter
    result = _finish(algorithm, instance, U, u, v, eta, converged, iterations, params, trace, t0, clock)
    # g is ascent-driven here; its monotonicity is not part of the method
    result.descent_violations = 0
    return result


def rgas(instance: ProblemInstance, config: SolverConfig | None = None, U0=None) -> SolveResult:
    """Riemannian gradient ascent with an entropic OT solve per iteration.

    The inner Sinkhorn runs to ``inner_tol`` (default eps2/(16 ||C||_inf), l1
    marginal error); the outer loop stops on ||grad p(U)||_F <= eps1/4.
    """
    return _gradient_ascent(instance, config or SolverConfig(), U0, adaptive=False)


def ragas(instance: ProblemInstance, config: SolverConfig | None = None, U0=None) -> SolveResult:
    """Adaptive variant of :func:`rgas`."""
    return _gradient_ascent(instance, config or SolverConfig(), U0, adaptive=True)


SOLVERS = {"rbcd": rbcd, "rabcd": rabcd, "rgas": rgas, "ragas": ragas}


def solve(instance: ProblemInstance, config: SolverConfig | None = None, algorithm: str = "rbcd", U0=None) -> SolveResult:
    try:
        fn = SOLVERS[algorithm]
    except KeyError:
        raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}") from None
    return fn(instance, config, U0)


@dataclass(frozen=True)
class StationarityReport:
    grad_norm: float
    primal_gap: float
    oracle_slack: float
    reference_eta: float
    oracle_iterations: int

    def certifies(self, eps1: float, eps2: float) -> bool:
        return self.grad_norm <= eps1 + self.oracle_slack and self.primal_gap <= eps2 + self.oracle_slack


def stationarity_report(
    instance: ProblemInstance,
    result: SolveResult,
    oracle_tol: float = 1e-3,
    max_iter: int = 200_000,
) -> StationarityReport:
    """Measure how far (pi_hat, U_hat) is from (eps1, eps2)-stationarity.

    ``grad_norm`` is ||Proj_U(2 V_pi U)||_F for the rounded plan. ``primal_gap``
    is f(pi_hat, U) minus an upper estimate of min_pi f(pi, U) from an entropic
    solve at eta_ref = oracle_tol ||C||_inf followed by rounding; the true gap
    exceeds the reported one by at most ``oracle_slack``.
    """
    U = result.U_hat
    P = result.pi_hat.pi
    XU, YU = instance.X @ U, instance.Y @ U
    G = stiefel.project_tangent(U, 2.0 * _vpi_u(instance.X, instance.Y, XU, YU, P))
    grad_norm = float(np.linalg.norm(G))
    M = projected_cost_matrix(instance, U)
    f_hat = float(np.sum(M * P))
    M_sup = float(M.max())
    if M_sup == 0.0:
        return StationarityReport(grad_norm, 0.0, 0.0, 0.0, 0)
    eta_ref = oracle_tol * (instance.cost_sup or M_sup)
    # 4 * tol * ||M||_inf <= eta_ref keeps the marginal part of the slack below eta_ref
    tol = oracle_tol / 4.0
    ref = sinkhorn_scaled(instance, M, eta_ref, tol=tol, max_iter=max_iter)
    if not ref.converged:
        raise SolverError(f"stationarity oracle did not converge (violation {ref.violation:.3g})")
    upper = float(np.sum(M * round_to_polytope(ref.plan, instance.r, instance.c).pi))
    gap = max(f_hat - upper, 0.0)
    slack = eta_ref * (2.0 * math.log(instance.n) + 1.0) + 4.0 * ref.violation * M_sup
    return StationarityReport(grad_norm, gap, slack, eta_ref, ref.iterations)
