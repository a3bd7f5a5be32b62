"""Dense linear-algebra primitives: Lyapunov solve, SPD checks, left inverse, norms.

Problem sizes in this package are tiny (n <= 8), so the Lyapunov equation is
solved through its Kronecker (vectorized) form, which is easy to audit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SYMMETRY_TOL = 1e-10
SYMMETRY_REPAIR_TOL = 1e-8
RANK_TOL = 1e-10
MAX_LYAPUNOV_DIM = 8


class MatrixError(ValueError):
    """Raised when a matrix fails a structural precondition."""


class RankError(MatrixError):
    """Input matrix does not have full column rank."""


def as_matrix(M) -> np.ndarray:
    A = np.atleast_2d(np.asarray(M, dtype=float))
    if A.ndim != 2:
        raise MatrixError(f"expected a 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise MatrixError("matrix has non-finite entries")
    return A


def _check_symmetric(A: np.ndarray, tol: float = SYMMETRY_TOL) -> None:
    if A.shape[0] != A.shape[1]:
        raise MatrixError(f"matrix must be square, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A))))
    if np.max(np.abs(A - A.T)) > tol * scale:
        raise MatrixError("matrix is not symmetric")


@dataclass(frozen=True)
class SpdCertificate:
    """A symmetric positive definite matrix together with its smallest eigenvalue."""

    matrix: np.ndarray
    min_eigenvalue: float

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def certify_spd(M) -> SpdCertificate:
    """Check that ``M`` is symmetric positive definite and wrap it."""
    A = as_matrix(M)
    _check_symmetric(A)
    lam_min = min_eigenvalue_sym(A)
    if lam_min <= 0.0:
        raise MatrixError(f"matrix is not positive definite (min eigenvalue {lam_min:g})")
    A = 0.5 * (A + A.T)
    A.setflags(write=False)
    return SpdCertificate(A, lam_min)


def _unwrap(M) -> np.ndarray:
    return M.matrix if isinstance(M, SpdCertificate) else as_matrix(M)


def spectral_norm(M) -> float:
    """Largest singular value."""
    return float(np.linalg.norm(as_matrix(M), 2))


def min_eigenvalue_sym(M) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    A = as_matrix(M)
    _check_symmetric(A)
    return float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])


def solve_lyapunov(lam, H) -> np.ndarray:
    """Solve ``(-lam)^T P + P (-lam) + H = 0`` for symmetric ``P``.

    Both arguments must be SPD (either ``SpdCertificate`` instances or raw
    arrays, which are certified here).
    """
    L = certify_spd(_unwrap(lam)).matrix
    Hm = certify_spd(_unwrap(H)).matrix
    n = L.shape[0]
    if Hm.shape != L.shape:
        raise MatrixError(f"dimension mismatch: lam is {L.shape}, H is {Hm.shape}")
    if n > MAX_LYAPUNOV_DIM:
        raise MatrixError(f"Kronecker Lyapunov solve limited to n <= {MAX_LYAPUNOV_DIM}")
    A = -L
    eye = np.eye(n)
    # column-major vec: vec(A^T P) = (I kron A^T) vec P, vec(P A) = (A^T kron I) vec P
    K = np.kron(eye, A.T) + np.kron(A.T, eye)
    p = np.linalg.solve(K, -Hm.reshape(-1, order="F"))
    P = p.reshape((n, n), order="F")
    asym = np.max(np.abs(P - P.T))
    if asym > SYMMETRY_REPAIR_TOL * max(1.0, float(np.max(np.abs(P)))):
        raise MatrixError(f"Lyapunov solution is not symmetric (asymmetry {asym:g})")
    P = 0.5 * (P + P.T)
    if min_eigenvalue_sym(P) <= 0.0:
        raise MatrixError("Lyapunov solution is not positive definite")
    return P


def lyapunov_residual(lam, H, P) -> float:
    L, Hm = _unwrap(lam), _unwrap(H)
    return float(np.linalg.norm((-L).T @ P + P @ (-L) + Hm, 2))


def decay_envelope(lam, H) -> tuple[float, float, float]:
    """Constants bounding ``||exp(-lam t)|| <= D exp(-tau_e t)``.

    Returns ``(D, tau_e, ||P||)`` with ``D = sqrt(||P|| ||P^-1||)`` and
    ``tau_e = lambda_min(H) / (2 ||P||)``.
    """
    Hc = certify_spd(_unwrap(H))
    P = solve_lyapunov(lam, Hc)
    p_norm = spectral_norm(P)
    p_inv_norm = spectral_norm(np.linalg.inv(P))
    D = max(1.0, float(np.sqrt(p_norm * p_inv_norm)))
    tau_e = Hc.min_eigenvalue / (2.0 * p_norm)
    return D, tau_e, p_norm


def left_pseudo_inverse(g) -> np.ndarray:
    """``(g^T g)^-1 g^T`` for a full-column-rank ``g``."""
    G = as_matrix(g)
    if G.shape[0] < G.shape[1]:
        raise RankError(f"input matrix {G.shape} has more columns than rows")
    s = np.linalg.svd(G, compute_uv=False)
    if s[-1] <= RANK_TOL * s[0]:
        raise RankError(f"input matrix is rank deficient (singular values {s})")
    return np.linalg.solve(G.T @ G, G.T)
