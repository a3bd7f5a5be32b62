"""Nominal models, matched/unmatched splitting and the composite control law."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .matrix_core import left_pseudo_inverse


@dataclass(frozen=True)
class InputPolytope:
    """Admissible inputs ``{u : A u <= b}``."""

    A: np.ndarray
    b: np.ndarray
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    @classmethod
    def box(cls, lower, upper) -> "InputPolytope":
        lo = np.atleast_1d(np.asarray(lower, float))
        hi = np.atleast_1d(np.asarray(upper, float))
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError(f"invalid box bounds {lo}, {hi}")
        m = lo.size
        A = np.vstack([np.eye(m), -np.eye(m)])
        b = np.concatenate([hi, -lo])
        return cls(A, b, lo, hi)

    @property
    def m(self) -> int:
        return self.A.shape[1]

    def contains(self, u, tol: float = 1e-9) -> bool:
        return bool(np.all(self.A @ np.atleast_1d(u) <= self.b + tol))

    def clip(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, float))
        if self.lower is None:
            return u
        return np.clip(u, self.lower, self.upper)

    def shifted_rows(self, offset) -> tuple[np.ndarray, np.ndarray]:
        """Rows ``(a_i, b_i)`` encoding ``ubar - offset in U`` as ``a_i ubar + b_i >= 0``."""
        offset = np.atleast_1d(np.asarray(offset, float))
        return -self.A, self.b + self.A @ offset


@dataclass(frozen=True)
class NominalModel:
    """The designer's control-affine model ``x_dot = f_hat(x) + g_hat(x) u``."""

    n: int
    m: int
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    input_set: InputPolytope

    def drift(self, x) -> np.ndarray:
        return np.asarray(self.f(np.asarray(x, float)), float).reshape(self.n)

    def input_matrix(self, x) -> np.ndarray:
        return np.asarray(self.g(np.asarray(x, float)), float).reshape(self.n, self.m)

    def pinv(self, x) -> np.ndarray:
        return left_pseudo_inverse(self.input_matrix(x))

    def __call__(self, x, u) -> np.ndarray:
        return self.drift(x) + self.input_matrix(x) @ np.atleast_1d(u)


@dataclass(frozen=True)
class Decomposition:
    matched: np.ndarray
    unmatched: np.ndarray
    theta: np.ndarray


def decompose(model: NominalModel, x, delta) -> Decomposition:
    """Split ``delta`` into the part in range(g_hat) and its orthogonal complement."""
    g = model.input_matrix(x)
    g_pinv = left_pseudo_inverse(g)
    delta = np.asarray(delta, float).reshape(model.n)
    theta = g_pinv @ delta
    matched = g @ theta
    return Decomposition(matched, delta - matched, theta)


def orthogonality_residual(model: NominalModel, x, unmatched) -> float:
    return float(np.max(np.abs(model.input_matrix(x).T @ unmatched)))


def composite_control(model: NominalModel, x, u_bar, delta_hat) -> np.ndarray:
    """``u = u_bar - g_hat^dagger(x) delta_hat``; set membership is the caller's job."""
    return np.atleast_1d(np.asarray(u_bar, float)) - model.pinv(x) @ np.asarray(delta_hat, float)


def residual_uncertainty(f, g, f_hat, g_hat, x, u) -> np.ndarray:
    """Compound model error ``(f - f_hat)(x) + (g - g_hat)(x) u``."""
    x = np.asarray(x, float)
    u = np.atleast_1d(np.asarray(u, float))
    n = x.size
    dg = np.asarray(g(x), float).reshape(n, -1) - np.asarray(g_hat(x), float).reshape(n, -1)
    return np.asarray(f(x), float) - np.asarray(f_hat(x), float) + dg @ u
