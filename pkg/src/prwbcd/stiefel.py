"""Primitives on the Stiefel manifold St(d, k) = {U in R^{d x k} : U^T U = I_k}.

Points and tangent vectors are plain ``(d, k)`` float arrays; ``as_stiefel``
and ``is_tangent`` do the validation where it matters.
"""
from __future__ import annotations

import numpy as np

ORTHO_TOL = 1e-10
REPAIR_TOL = 1e-6
RETRACTIONS = ("qr", "polar")


class RetractionError(ArithmeticError):
    """QR factor lost rank: the step is degenerate and tau should shrink."""


def orthonormality_error(U: np.ndarray) -> float:
    k = U.shape[1]
    return float(np.linalg.norm(U.T @ U - np.eye(k)))


def _qr_positive(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Q, R = np.linalg.qr(A)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s, R * s[:, None]


def as_stiefel(U, tol: float = REPAIR_TOL) -> np.ndarray:
    """Validate ``U`` as a point of St(d, k).

    Matrices within ``tol`` (Frobenius) of orthonormal are re-orthonormalized
    via the polar factor; anything further away is rejected.
    """
    U = np.array(U, dtype=np.float64)
    if U.ndim == 1:
        U = U[:, None]
    d, k = U.shape
    if k > d:
        raise ValueError(f"St(d, k) needs k <= d, got d={d}, k={k}")
    err = orthonormality_error(U)
    if err > tol:
        raise ValueError(f"matrix is not orthonormal: ||U^T U - I||_F = {err:.3e}")
    if err > ORTHO_TOL * 1e-2:
        W, _, Vt = np.linalg.svd(U, full_matrices=False)
        U = W @ Vt
    return U


def sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def project_tangent(U: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Orthogonal projection of ``G`` onto the tangent space at ``U``: G - U sym(U^T G)."""
    if U.shape != G.shape:
        raise ValueError(f"shape mismatch: U is {U.shape}, G is {G.shape}")
    return G - U @ sym(U.T @ G)


def is_tangent(U: np.ndarray, xi: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    S = xi.T @ U + U.T @ xi
    return bool(np.linalg.norm(S) <= tol * max(1.0, np.linalg.norm(xi)))


def retract(U: np.ndarray, xi: np.ndarray, method: str = "qr") -> np.ndarray:
    """Map the tangent vector ``xi`` at ``U`` back onto the manifold.

    ``qr`` takes the Q factor of U + xi with R forced to a positive diagonal;
    ``polar`` takes the orthogonal polar factor of U + xi.
    """
    if U.shape != xi.shape:
        raise ValueError(f"shape mismatch: U is {U.shape}, xi is {xi.shape}")
    A = U + xi
    if method == "qr":
        Q, R = _qr_positive(A)
        diag = np.abs(np.diag(R))
        if diag.size and diag.min() <= 1e-12 * max(1.0, diag.max()):
            raise RetractionError("rank-deficient QR factor in retraction; shrink the step size")
        return Q
    if method == "polar":
        W, _, Vt = np.linalg.svd(A, full_matrices=False)
        return W @ Vt
    raise ValueError(f"unknown retraction {method!r}; expected one of {RETRACTIONS}")


def random_point(d: int, k: int, seed=None) -> np.ndarray:
    """Haar-distributed point of St(d, k) from the QR of a Gaussian matrix."""
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d, got d={d}, k={k}")
    rng = np.random.default_rng(seed)
    Q, _ = _qr_positive(rng.standard_normal((d, k)))
    return Q


def random_tangent(U: np.ndarray, rng: np.random.Generator, norm: float | None = None) -> np.ndarray:
    xi = project_tangent(U, rng.standard_normal(U.shape))
    size = np.linalg.norm(xi)
    if norm is not None and size > 0:  # St(1, 1) has a zero tangent space
        xi *= norm / size
    return xi


def estimate_retraction_constants(
    method: str = "qr",
    d: int = 6,
    k: int = 2,
    samples: int = 1000,
    max_norm: float = 1.0,
    seed: int = 0,
) -> tuple[float, float]:
    """Empirical (L1, L2) with ||R_U(xi) - U|| <= L1 ||xi|| and ||R_U(xi) - U - xi|| <= L2 ||xi||^2.

    Maxima over random ``(U, xi)`` with ``||xi||_F`` drawn uniformly in ``(0, max_norm]``.
    L1 starts at 1, its small-step limit, which also covers the zero tangent
    space of St(1, 1).
    """
    rng = np.random.default_rng(seed)
    L1, L2 = 1.0, 0.0
    for _ in range(samples):
        U = random_point(d, k, rng)
        t = max_norm * (1.0 - rng.random())
        xi = random_tangent(U, rng, norm=t)
        R = retract(U, xi, method)
        if not np.any(xi):
            continue
        L1 = max(L1, np.linalg.norm(R - U) / t)
        L2 = max(L2, np.linalg.norm(R - U - xi) / t**2)
    return float(L1), float(L2)
