"""Couplings, Sinkhorn blocks and the factorized second-moment operator.

The parameterized plan is

    pi(u, v, U)_ij = exp(-||U^T (x_i - y_j)||^2 / eta + u_i + v_j)

and everything here works with ``log pi`` so that small ``eta`` does not
overflow or underflow; exponentials are taken only where a dense plan is
actually needed (the V_pi U product and rounding).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.spatial.distance import cdist

from .measures import ProblemInstance

PLAN_EXPORT_MAX_N = 1000
ABSORB_LOG = 50.0
SCALE_FLOOR = 1e-250


class PlanSizeError(ValueError):
    pass


def logsumexp(A: np.ndarray, axis=None) -> np.ndarray:
    m = np.max(A, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(A - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return out.reshape(())[()]
    return np.squeeze(out, axis=axis)


@dataclass(frozen=True, eq=False)
class DualPotentials:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64).reshape(-1)
        v = np.asarray(self.v, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise FloatingPointError("non-finite dual potentials")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def zeros(cls, n: int) -> "DualPotentials":
        return cls(np.zeros(n), np.zeros(n))

    @classmethod
    def from_marginals(cls, r, c) -> "DualPotentials":
        # pi = diag(r) exp(-M/eta) diag(c) has total mass <= 1 for any M >= 0
        return cls(np.log(r), np.log(c))


class TransportPlan:
    """Nonnegative n x n coupling, optionally carrying its log-representation."""

    def __init__(self, pi=None, log_pi=None):
        if pi is None and log_pi is None:
            raise ValueError("need pi or log_pi")
        if log_pi is not None:
            log_pi = np.asarray(log_pi, dtype=np.float64)
            if np.any(np.isnan(log_pi)) or np.any(log_pi == np.inf):
                raise FloatingPointError("plan overflow: eta is too small for the scale of the data")
        if pi is not None:
            pi = np.asarray(pi, dtype=np.float64)
            if pi.ndim != 2:
                raise ValueError("plan must be a matrix")
            if not np.all(np.isfinite(pi)) or np.any(pi < 0):
                raise ValueError("plan entries must be finite and nonnegative")
        self._pi = pi
        self.log_pi = log_pi

    @property
    def pi(self) -> np.ndarray:
        if self._pi is None:
            with np.errstate(over="raise"):
                self._pi = np.exp(self.log_pi)
        return self._pi

    @property
    def shape(self) -> tuple[int, int]:
        return (self.log_pi if self.log_pi is not None else self._pi).shape

    def mass(self) -> float:
        if self.log_pi is not None:
            return float(np.exp(logsumexp(self.log_pi)))
        return float(self._pi.sum())

    def __array__(self, dtype=None, copy=None):
        return self.pi if dtype is None else self.pi.astype(dtype)


def _dense(plan) -> np.ndarray:
    return plan.pi if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)


def projected_cost_matrix(instance: ProblemInstance, U: np.ndarray) -> np.ndarray:
    """M_ij = ||U^T x_i - U^T y_j||^2 from the projected clouds, O(ndk + n^2 k)."""
    return cdist(instance.X @ U, instance.Y @ U, metric="sqeuclidean")


class PlanContext:
    """Instance, subspace and regularization that define pi(., ., U)."""

    def __init__(self, instance: ProblemInstance, U: np.ndarray, eta: float):
        if eta <= 0:
            raise ValueError("eta must be positive")
        self.instance = instance
        self.U = U
        self.eta = float(eta)

    @cached_property
    def M(self) -> np.ndarray:
        return projected_cost_matrix(self.instance, self.U)

    @cached_property
    def log_kernel(self) -> np.ndarray:
        return -self.M / self.eta


def log_plan(ctx: PlanContext, pot: DualPotentials) -> np.ndarray:
    return ctx.log_kernel + pot.u[:, None] + pot.v[None, :]


def plan_from_potentials(ctx: PlanContext, pot: DualPotentials) -> TransportPlan:
    return TransportPlan(log_pi=log_plan(ctx, pot))


def marginals(plan) -> tuple[np.ndarray, np.ndarray]:
    """Row sums pi 1 and column sums pi^T 1."""
    if isinstance(plan, TransportPlan) and plan.log_pi is not None:
        return np.exp(logsumexp(plan.log_pi, axis=1)), np.exp(logsumexp(plan.log_pi, axis=0))
    P = _dense(plan)
    return P.sum(axis=1), P.sum(axis=0)


def u_update(ctx: PlanContext, pot: DualPotentials) -> DualPotentials:
    """Exact minimization of g in u: afterwards the row marginal equals r."""
    log_row = logsumexp(log_plan(ctx, pot), axis=1)
    if not np.all(np.isfinite(log_row)):
        raise FloatingPointError("zero row marginal; upstream overflow or underflow")
    return DualPotentials(pot.u + np.log(ctx.instance.r) - log_row, pot.v)


def v_update(ctx: PlanContext, pot: DualPotentials) -> DualPotentials:
    """Exact minimization of g in v: afterwards the column marginal equals c."""
    log_col = logsumexp(log_plan(ctx, pot), axis=0)
    if not np.all(np.isfinite(log_col)):
        raise FloatingPointError("zero column marginal; upstream overflow or underflow")
    return DualPotentials(pot.u, pot.v + np.log(ctx.instance.c) - log_col)


def vpi_apply(instance: ProblemInstance, plan, U: np.ndarray) -> np.ndarray:
    """V_pi U with V_pi = sum_ij pi_ij (x_i - y_j)(x_i - y_j)^T, never forming V_pi.

    Uses V_pi U = X^T diag(pi 1) XU - X^T pi YU - Y^T pi^T XU + Y^T diag(pi^T 1) YU.
    """
    P = _dense(plan)
    X, Y = instance.X, instance.Y
    XU, YU = X @ U, Y @ U
    row, col = P.sum(axis=1), P.sum(axis=0)
    return X.T @ (row[:, None] * XU - P @ YU) + Y.T @ (col[:, None] * YU - P.T @ XU)


def vpi_dense(instance: ProblemInstance, plan) -> np.ndarray:
    """Materialized d x d V_pi. Debug path for cross-checking, d <= 50."""
    if instance.d > 50:
        raise ValueError("vpi_dense is a debug path limited to d <= 50")
    P = _dense(plan)
    Z = instance.X[:, None, :] - instance.Y[None, :, :]
    return np.einsum("ij,ija,ijb->ab", P, Z, Z)


def objective_g(ctx: PlanContext, pot: DualPotentials) -> float:
    """g(u, v, U) = sum_ij pi(u, v, U)_ij - r^T u - c^T v."""
    mass = math.exp(logsumexp(log_plan(ctx, pot)))
    r, c = ctx.instance.r, ctx.instance.c
    return mass - float(r @ pot.u) - float(c @ pot.v)


def transport_value(instance: ProblemInstance, plan, U: np.ndarray) -> float:
    """f(pi, U) = <M, pi> with M the projected cost."""
    return float(np.sum(projected_cost_matrix(instance, U) * _dense(plan)))


def entropy(plan) -> float:
    """Shifted entropy H(pi) = -sum_ij (pi_ij log pi_ij - pi_ij), with 0 log 0 = 0."""
    if isinstance(plan, TransportPlan) and plan.log_pi is not None:
        P, L = plan.pi, plan.log_pi
        mask = P > 0
        return float(-np.sum(P[mask] * (L[mask] - 1.0)))
    P = _dense(plan)
    if np.any(P < 0):
        raise ValueError("entropy of a plan with negative entries")
    mask = P > 0
    return float(-np.sum(P[mask] * (np.log(P[mask]) - 1.0)))


def round_to_polytope(plan, r, c) -> TransportPlan:
    """Repair a nonnegative matrix to exact marginals (r, c).

    Rows are scaled down to at most r, then columns to at most c, and the
    leftover mass is added back as a rank-one correction. The l1 change is at
    most 2 (||pi 1 - r||_1 + ||pi^T 1 - c||_1).
    """
    P = _dense(plan)
    r = np.asarray(r, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if np.any(P < 0) or P.sum() <= 0:
        raise ValueError("rounding needs a nonnegative plan with positive mass")
    row = P.sum(axis=1)
    x = np.minimum(np.divide(r, row, out=np.ones_like(r), where=row > 0), 1.0)
    P1 = x[:, None] * P
    col = P1.sum(axis=0)
    y = np.minimum(np.divide(c, col, out=np.ones_like(c), where=col > 0), 1.0)
    P2 = P1 * y[None, :]
    err_r = np.maximum(r - P2.sum(axis=1), 0.0)
    err_c = np.maximum(c - P2.sum(axis=0), 0.0)
    s = err_r.sum()
    if s == 0.0:
        # the 0/0 correction term has limit zero
        return TransportPlan(pi=P2)
    return TransportPlan(pi=P2 + np.outer(err_r, err_c) / s)


class RegOTResult(NamedTuple):
    plan: TransportPlan
    potentials: DualPotentials
    converged: bool
    iterations: int
    violation: float


def _healthy(*arrays) -> bool:
    return all(np.all(np.isfinite(x) & (x > SCALE_FLOOR) & (x < 1.0 / SCALE_FLOOR)) for x in arrays)


def sinkhorn_regot(
    instance: ProblemInstance,
    M: np.ndarray,
    eta: float,
    tol: float = 1e-9,
    max_iter: int = 100_000,
    init: DualPotentials | None = None,
) -> RegOTResult:
    """Entropic OT  min_{pi in Pi(r, c)} <M, pi> - eta H(pi)  by stabilized Sinkhorn.

    Scaling vectors (a, b) act on the kernel exp(-M/eta + u + v) and are
    absorbed into the log potentials (u, v) once they drift past
    ``ABSORB_LOG``; if a scaling under- or overflows the sweep is redone in
    log space. Stops once ||pi 1 - r||_1 + ||pi^T 1 - c||_1 <= tol. On
    hitting ``max_iter`` the iterate with the smallest violation is returned
    with ``converged=False``.
    """
    if eta <= 0 or tol <= 0:
        raise ValueError("eta and tol must be positive")
    r, c = instance.r, instance.c
    log_r, log_c = np.log(r), np.log(c)
    logK = -np.asarray(M, dtype=np.float64) / eta
    pot = init if init is not None else DualPotentials.from_marginals(r, c)
    u, v = pot.u.copy(), pot.v.copy()
    n = r.shape[0]
    a, b = np.ones(n), np.ones(n)
    K = np.exp(logK + u[:, None] + v[None, :])
    best = (np.inf, u, v)
    converged = False
    it = 0
    while True:
        Kb = K @ b
        row = a * Kb
        scaled = _healthy(Kb, row)
        if not scaled:
            u, v = u + np.log(a), v + np.log(b)
            a, b = np.ones(n), np.ones(n)
            row = np.exp(logsumexp(logK + u[:, None] + v[None, :], axis=1))
        err = float(np.abs(row - r).sum())
        if it == 0:
            col = np.exp(logsumexp(logK + (u + np.log(a))[:, None] + (v + np.log(b))[None, :], axis=0))
            err += float(np.abs(col - c).sum())
        if err < best[0]:
            best = (err, u + np.log(a), v + np.log(b))
        if it > 0 and err <= tol:
            converged = True
            break
        if it >= max_iter:
            break
        if scaled:
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                a_new = r / Kb
                KTa = K.T @ a_new
                b_new = c / KTa
            scaled = _healthy(a_new, KTa, b_new)
            if scaled:
                a, b = a_new, b_new
        if not scaled:
            # log-domain sweep, then rebuild the kernel around the new potentials
            u, v = u + np.log(a), v + np.log(b)
            u = u + log_r - logsumexp(logK + u[:, None] + v[None, :], axis=1)
            v = v + log_c - logsumexp(logK + u[:, None] + v[None, :], axis=0)
            a, b = np.ones(n), np.ones(n)
            K = np.exp(logK + u[:, None] + v[None, :])
        elif max(np.abs(np.log(a)).max(), np.abs(np.log(b)).max()) > ABSORB_LOG:
            u, v = u + np.log(a), v + np.log(b)
            a, b = np.ones(n), np.ones(n)
            K = np.exp(logK + u[:, None] + v[None, :])
        it += 1
    if converged:
        u, v = u + np.log(a), v + np.log(b)
    else:
        err, u, v = best
    pot = DualPotentials(u, v)
    plan = TransportPlan(log_pi=logK + u[:, None] + v[None, :])
    return RegOTResult(plan, pot, converged, it, err)


def sinkhorn_scaled(
    instance: ProblemInstance,
    M: np.ndarray,
    eta: float,
    tol: float = 1e-9,
    max_iter: int = 100_000,
    factor: float = 4.0,
) -> RegOTResult:
    """:func:`sinkhorn_regot` at a small ``eta`` via a geometric eta schedule.

    Starts at eta_0 = max(eta, ||M||_inf / 4) and divides by ``factor`` until
    ``eta`` is reached, warm-starting each stage from the previous dual
    variables rescaled to the new eta (eta u is the eta-free dual). The
    intermediate stages only need to be rough; the last one runs to ``tol``.
    ``iterations`` counts all stages and ``max_iter`` caps the last stage.
    """
    if factor <= 1:
        raise ValueError("factor must exceed 1")
    M_sup = float(np.max(M)) if np.size(M) else 0.0
    stages = []
    e = max(eta, M_sup / 4.0)
    while e > eta * factor:
        stages.append(e)
        e /= factor
    pot, total = None, 0
    prev = None
    for e in stages:
        init = None if pot is None else DualPotentials(pot.u * prev / e, pot.v * prev / e)
        res = sinkhorn_regot(instance, M, e, tol=max(tol, 1e-3), max_iter=max_iter, init=init)
        pot, prev, total = res.potentials, e, total + res.iterations
    init = None if pot is None else DualPotentials(pot.u * prev / eta, pot.v * prev / eta)
    res = sinkhorn_regot(instance, M, eta, tol=tol, max_iter=max_iter, init=init)
    return res._replace(iterations=total + res.iterations)


def export_plan_csv(plan, path) -> None:
    """Write the dense plan as (row, col, value) triples; refused above n = 1000."""
    P = _dense(plan)
    if max(P.shape) > PLAN_EXPORT_MAX_N:
        raise PlanSizeError(f"plan is {P.shape[0]}x{P.shape[1]}; dense export is limited to n <= {PLAN_EXPORT_MAX_N}")
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "value"])
        for i, j in np.ndindex(P.shape):
            w.writerow([i, j, repr(float(P[i, j]))])
