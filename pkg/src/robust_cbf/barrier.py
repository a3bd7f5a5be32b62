"""Barrier functions and the affine / conic constraint rows of the safety filters.

Every builder returns rows in the form ``a @ u_bar + b >= 0`` over the filter's
decision variable ``u_bar``. With ``compensate=True`` the applied input is the
composite ``u = u_bar - g_hat^dagger(x) delta_hat``; with ``compensate=False``
the matched cancellation term is dropped and ``u = u_bar``.

Only relative-degree-two chains are supported for the high-order case.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .uncertainty import NominalModel

ZERO_TOL = 1e-12


class GateViolation(ValueError):
    """The ISS-composed filter requires ``2 sigma_V mu_e - sigma_V alpha_h / 2 > 0``."""


@dataclass(frozen=True)
class LinearClassK:
    gain: float

    def __post_init__(self):
        if not (np.isfinite(self.gain) and self.gain > 0):
            raise ValueError(f"class-K gain must be finite and positive, got {self.gain}")

    def __call__(self, value):
        return self.gain * value


@dataclass(frozen=True)
class BarrierSpec:
    h: Callable[[np.ndarray], float]
    grad_h: Callable[[np.ndarray], np.ndarray]
    alpha: LinearClassK


@dataclass(frozen=True)
class HocbfChain:
    """Relative-degree-two chain ``phi_0 = h``, ``phi_1 = Psi + grad_h @ delta``.

    ``psi(x) = L_f h(x) + alpha1 * h(x)`` is the uncertainty-free part of
    ``phi_1``; ``F`` is the Hessian of ``h`` (the state Jacobian of the gradient
    multiplying ``delta`` in ``phi_1``).
    """

    base: BarrierSpec
    alpha1: LinearClassK
    alpha_r: LinearClassK
    psi: Callable[[np.ndarray], float]
    grad_psi: Callable[[np.ndarray], np.ndarray]
    F: Callable[[np.ndarray], np.ndarray]
    F_g_identically_zero: bool
    r: int = 2

    def __post_init__(self):
        if self.r != 2:
            raise NotImplementedError("only relative degree 2 chains are supported")


@dataclass(frozen=True)
class AffineConstraintRow:
    a: np.ndarray
    b: float

    def value(self, u_bar) -> float:
        return float(self.a @ np.atleast_1d(u_bar) + self.b)


@dataclass(frozen=True)
class ConeTerm:
    """``scale * ||M u_bar + v||``, the left side of the conic HOCBF condition."""

    scale: float
    M: np.ndarray
    v: np.ndarray

    def value(self, u_bar) -> float:
        return float(self.scale * np.linalg.norm(self.M @ np.atleast_1d(u_bar) + self.v))

    @property
    def is_constant(self) -> bool:
        return self.scale == 0.0 or float(np.max(np.abs(self.M), initial=0.0)) <= ZERO_TOL


def _offset(model: NominalModel, x, delta_hat, compensate: bool) -> np.ndarray:
    if not compensate:
        return np.zeros(model.m)
    return model.pinv(x) @ delta_hat


def _grad(fn, x, n) -> np.ndarray:
    return np.asarray(fn(x), float).reshape(n)


def cbf_constraint_nominal(spec: BarrierSpec, model: NominalModel, x) -> AffineConstraintRow:
    x = np.asarray(x, float)
    dh = _grad(spec.grad_h, x, model.n)
    a = dh @ model.input_matrix(x)
    b = dh @ model.drift(x) + spec.alpha(spec.h(x))
    return AffineConstraintRow(a, float(b))


def ue_cbf_constraint(spec: BarrierSpec, model: NominalModel, x, delta_hat, e_bar: float,
                      compensate: bool = True) -> AffineConstraintRow:
    """Estimate-corrected CBF row, tightened by ``||grad h|| * e_bar``."""
    if e_bar < 0:
        raise ValueError(f"e_bar must be non-negative, got {e_bar}")
    x = np.asarray(x, float)
    delta_hat = np.asarray(delta_hat, float)
    dh = _grad(spec.grad_h, x, model.n)
    Lgh = dh @ model.input_matrix(x)
    w = _offset(model, x, delta_hat, compensate)
    b = (dh @ model.drift(x) - Lgh @ w + dh @ delta_hat
         - np.linalg.norm(dh) * e_bar + spec.alpha(spec.h(x)))
    return AffineConstraintRow(Lgh, float(b))


def gate_margin(sigma_v: float, mu_e: float, alpha_h: float) -> float:
    return 2.0 * sigma_v * mu_e - sigma_v * alpha_h / 2.0


def check_gate(sigma_v: float, mu_e: float, alpha_h: float) -> float:
    if sigma_v <= 0 or alpha_h <= 0:
        raise GateViolation(f"sigma_V and alpha_h must be positive (got {sigma_v}, {alpha_h})")
    E = gate_margin(sigma_v, mu_e, alpha_h)
    if E <= 0:
        raise GateViolation(
            f"gate margin {E:g} <= 0: estimator rate 4*mu_e = {4 * mu_e:g} must exceed alpha_h = {alpha_h:g}"
        )
    return E


def ue_iss_cbf_constraint(spec: BarrierSpec, model: NominalModel, x, delta_hat, sigma_v: float,
                          alpha_h: float, mu_e: float, gamma_val: float,
                          compensate: bool = True) -> AffineConstraintRow:
    """CBF row robust to estimation error through the estimator's ISS Lyapunov function.

    Uses ``alpha_h`` as the linear class-K gain; ``spec.alpha`` is ignored.
    """
    E = check_gate(sigma_v, mu_e, alpha_h)
    x = np.asarray(x, float)
    delta_hat = np.asarray(delta_hat, float)
    dh = _grad(spec.grad_h, x, model.n)
    Lgh = dh @ model.input_matrix(x)
    w = _offset(model, x, delta_hat, compensate)
    b = (dh @ model.drift(x) - Lgh @ w + dh @ delta_hat + alpha_h * spec.h(x)
         - (dh @ dh) / (4.0 * E) - sigma_v * gamma_val)
    return AffineConstraintRow(Lgh, float(b))


def hocbf_chain_eval(chain: HocbfChain, model: NominalModel, x) -> tuple[float, float]:
    x = np.asarray(x, float)
    return float(chain.base.h(x)), float(chain.psi(x))


def hocbf_constraint_nominal(chain: HocbfChain, model: NominalModel, x) -> AffineConstraintRow:
    """Plain HOCBF row ``L_f Psi + L_g Psi u >= -alpha_r(Psi)``."""
    x = np.asarray(x, float)
    dpsi = _grad(chain.grad_psi, x, model.n)
    a = dpsi @ model.input_matrix(x)
    b = dpsi @ model.drift(x) + chain.alpha_r(chain.psi(x))
    return AffineConstraintRow(a, float(b))


def omega(chain: HocbfChain, x, delta_hat, e_bar: float) -> float:
    if e_bar < 0:
        raise ValueError(f"e_bar must be non-negative, got {e_bar}")
    x = np.asarray(x, float)
    F_norm = np.linalg.norm(np.atleast_2d(chain.F(x)), 2)
    dpsi = np.asarray(chain.grad_psi(x), float)
    return float(np.linalg.norm(dpsi) * e_bar
                 + F_norm * np.linalg.norm(delta_hat) * e_bar
                 + F_norm * e_bar**2)


def ue_hocbf_terms(chain: HocbfChain, model: NominalModel, x, delta_hat, e_bar: float,
                   delta_l: float, compensate: bool = True) -> tuple[AffineConstraintRow, ConeTerm]:
    """Affine part and cone term of the robust HOCBF condition.

    The condition reads ``row.a @ u_bar + row.b >= cone.value(u_bar)``.
    """
    if e_bar < 0 or delta_l < 0:
        raise ValueError(f"e_bar and delta_l must be non-negative, got {e_bar}, {delta_l}")
    x = np.asarray(x, float)
    dhat = np.asarray(delta_hat, float).reshape(model.n)
    f = model.drift(x)
    g = model.input_matrix(x)
    F = np.asarray(chain.F(x), float).reshape(model.n, model.n)
    dh = _grad(chain.base.grad_h, x, model.n)
    dpsi = _grad(chain.grad_psi, x, model.n)
    w = _offset(model, x, dhat, compensate)
    Lgpsi = dpsi @ g
    drift_est = f - g @ w + dhat  # state velocity estimate with u_bar = 0
    dh_norm = np.linalg.norm(dh)

    a = Lgpsi + g.T @ F @ dhat
    b = (dpsi @ f - Lgpsi @ w + dpsi @ dhat
         + drift_est @ F @ dhat
         - dh_norm * delta_l
         - omega(chain, x, dhat, e_bar)
         + chain.alpha_r(chain.psi(x) + dh @ dhat - dh_norm * e_bar))
    cone = ConeTerm(float(e_bar), F.T @ g, F.T @ drift_est)
    return AffineConstraintRow(a, float(b)), cone


def ue_hocbf_qp_row(chain: HocbfChain, model: NominalModel, x, delta_hat, e_bar: float,
                    delta_l: float, compensate: bool = True) -> AffineConstraintRow:
    """Robust HOCBF row for chains with ``F(x) g_hat(x) == 0``, where the cone is constant."""
    if not chain.F_g_identically_zero:
        raise ValueError("UE-HOCBF-QP requires F(x) g_hat(x) == 0; use the SOCP filter")
    row, cone = ue_hocbf_terms(chain, model, x, delta_hat, e_bar, delta_l, compensate)
    return AffineConstraintRow(row.a, row.b - cone.value(np.zeros(model.m)))
