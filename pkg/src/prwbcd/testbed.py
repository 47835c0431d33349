"""Synthetic instances with known answers, exact oracles and error metrics."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .measures import DiscreteMeasure, ProblemInstance
from .transport import round_to_polytope, sinkhorn_scaled

ORACLE_MAX_N = 8


@dataclass(frozen=True)
class GroundTruth:
    wasserstein_sq: float
    U_star: np.ndarray | None
    k_star: int


def hypercube_map(X: np.ndarray, k_star: int) -> np.ndarray:
    """T(x) = x + 2 sign(x) * (e_1 + ... + e_{k*})."""
    Y = np.array(X, dtype=np.float64, copy=True)
    Y[:, :k_star] += 2.0 * np.sign(Y[:, :k_star])
    return Y


def gen_fragmented_hypercube(n: int, d: int, k_star: int, seed=None) -> tuple[ProblemInstance, GroundTruth]:
    """Uniform samples on [-1, 1]^d against an independent sample pushed through T.

    The population measures have W^2 = 4 k*, attained along span(e_1..e_{k*}).
    """
    if n < 1 or not 1 <= k_star <= d:
        raise ValueError(f"need n >= 1 and 1 <= k_star <= d, got n={n}, d={d}, k_star={k_star}")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(n, d))
    Y = hypercube_map(rng.uniform(-1.0, 1.0, size=(n, d)), k_star)
    truth = GroundTruth(4.0 * k_star, np.eye(d)[:, :k_star], k_star)
    return ProblemInstance.from_arrays(X, Y), truth


def gen_wishart_gaussian(n: int, d: int, k_star: int, noise_sigma: float = 0.0, seed=None) -> ProblemInstance:
    """Samples from N(0, A1 A1^T) and N(0, A2 A2^T), A_i a d x k* Gaussian matrix.

    Both covariances are rank k*, so the noise-free clouds live in k*-dim
    subspaces. The clean samples are drawn before the noise, so for a fixed
    seed every ``noise_sigma`` perturbs the same clean clouds.
    """
    if n < 1 or not 1 <= k_star <= d:
        raise ValueError(f"need n >= 1 and 1 <= k_star <= d, got n={n}, d={d}, k_star={k_star}")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    A1 = rng.standard_normal((d, k_star))
    A2 = rng.standard_normal((d, k_star))
    X = rng.standard_normal((n, k_star)) @ A1.T
    Y = rng.standard_normal((n, k_star)) @ A2.T
    noise_x = rng.standard_normal((n, d))
    noise_y = rng.standard_normal((n, d))
    if noise_sigma > 0:
        X = X + noise_sigma * noise_x
        Y = Y + noise_sigma * noise_y
    return ProblemInstance.from_arrays(X, Y)


class Assignment(NamedTuple):
    value: float
    permutation: tuple


def permutation_ot_oracle(cost) -> Assignment:
    """Exact OT value for uniform marginals by enumerating all n! permutations.

    Returns (1/n) min_sigma sum_i cost[i, sigma(i)] and the minimizing sigma.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ValueError("cost must be square")
    if n > ORACLE_MAX_N:
        raise ValueError(f"permutation oracle is limited to n <= {ORACLE_MAX_N}, got n={n}")
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    totals = cost[np.arange(n), perms].sum(axis=1)
    best = int(np.argmin(totals))
    return Assignment(float(totals[best]) / n, tuple(int(j) for j in perms[best]))


class ReferenceOT(NamedTuple):
    value: float
    gap_bound: float
    eta: float
    converged: bool


def reference_wasserstein(
    instance: ProblemInstance,
    rel_eta: float = 1e-3,
    tol: float | None = None,
    max_iter: int = 200_000,
) -> ReferenceOT:
    """W^2 estimate <C, Round(pi_eta)> with pi_eta the entropic plan at eta = rel_eta ||C||_inf.

    ``gap_bound`` bounds value - W^2 from above: eta (2 log n + 1) for the
    entropy plus 4 ||C||_inf times the final l1 marginal error.
    """
    if not 0 < rel_eta <= 1e-2:
        raise ValueError("rel_eta must lie in (0, 1e-2]")
    C = instance.cost_matrix()
    c_sup = instance.cost_sup
    if c_sup == 0.0:
        return ReferenceOT(0.0, 0.0, 0.0, True)
    eta = rel_eta * c_sup
    tol = rel_eta / 4.0 if tol is None else tol
    res = sinkhorn_scaled(instance, C, eta, tol=tol, max_iter=max_iter)
    plan = round_to_polytope(res.plan, instance.r, instance.c)
    value = float(np.sum(C * plan.pi))
    bound = eta * (2.0 * math.log(instance.n) + 1.0) + 4.0 * res.violation * c_sup
    return ReferenceOT(value, bound, eta, res.converged)


def subspace_error(U_hat: np.ndarray, U_star: np.ndarray) -> float:
    """||U_hat U_hat^T - U* U*^T||_F without forming d x d matrices."""
    U_hat = np.asarray(U_hat, dtype=np.float64)
    U_star = np.asarray(U_star, dtype=np.float64)
    if U_hat.shape[0] != U_star.shape[0]:
        raise ValueError(f"dimension mismatch: {U_hat.shape[0]} vs {U_star.shape[0]}")
    cross = np.linalg.norm(U_hat.T @ U_star) ** 2
    return math.sqrt(max(U_hat.shape[1] + U_star.shape[1] - 2.0 * cross, 0.0))


def relative_error(noisy: float, clean: float) -> float:
    return (noisy - clean) / clean


def identical_instance(points) -> ProblemInstance:
    mu = DiscreteMeasure.uniform(points)
    return ProblemInstance(mu, mu)
