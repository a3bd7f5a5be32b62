"""Uncertainty estimator with analytic error and output envelopes.

The estimator runs on an auxiliary state ``xi``::

    delta_hat = lam @ x - xi
    xi_dot    = lam @ (f_hat(x) + g_hat(x) u + delta_hat)

and is initialized with ``xi(t0) = lam @ x(t0)`` so that ``delta_hat(t0) = 0``.
The estimation error ``e = delta - delta_hat`` obeys ``e_dot = delta_dot - lam e``,
which gives the closed-form envelopes computed below.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matrix_core import SpdCertificate, certify_spd, decay_envelope, spectral_norm


@dataclass(frozen=True)
class ErrorEnvelope:
    D: float
    tau_e: float
    P_norm: float
    delta_b: float
    delta_l: float

    def __post_init__(self):
        if self.D < 1.0 or self.tau_e <= 0.0 or self.P_norm <= 0.0:
            raise ValueError(f"invalid envelope constants {self}")

    @property
    def transient_coefficient(self) -> float:
        # negative when delta_l * ||P|| dominates; the bound is still evaluated as written
        return self.D * (self.delta_b - 2.0 * self.delta_l * self.P_norm)

    @property
    def steady_state(self) -> float:
        return 2.0 * self.D * self.P_norm * self.delta_l


@dataclass(frozen=True)
class EstimatorConfig:
    """Estimator gain ``lam``, Lyapunov weight ``H`` and uncertainty bounds."""

    lam: SpdCertificate
    H: SpdCertificate
    delta_b: float
    delta_l: float
    envelope: ErrorEnvelope = field(init=False, repr=False)

    def __post_init__(self):
        lam = self.lam if isinstance(self.lam, SpdCertificate) else certify_spd(self.lam)
        H = self.H if isinstance(self.H, SpdCertificate) else certify_spd(self.H)
        if lam.n != H.n:
            raise ValueError(f"lam is {lam.n}x{lam.n} but H is {H.n}x{H.n}")
        for name in ("delta_b", "delta_l"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "H", H)
        D, tau_e, p_norm = decay_envelope(lam, H)
        object.__setattr__(
            self, "envelope", ErrorEnvelope(D, tau_e, p_norm, float(self.delta_b), float(self.delta_l))
        )

    @classmethod
    def diagonal(cls, lam_diag, h_diag, delta_b: float, delta_l: float) -> "EstimatorConfig":
        return cls(np.diag(np.asarray(lam_diag, float)), np.diag(np.asarray(h_diag, float)), delta_b, delta_l)

    @property
    def n(self) -> int:
        return self.lam.n

    @property
    def lam_norm(self) -> float:
        return spectral_norm(self.lam.matrix)


@dataclass(frozen=True)
class EstimatorState:
    xi: np.ndarray
    t_start: float


def _vec(v, n: int, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != (n,):
        raise ValueError(f"{name} must have length {n}, got shape {np.shape(v)}")
    return a


def init_estimator(cfg: EstimatorConfig, x0, t0: float = 0.0) -> EstimatorState:
    x0 = _vec(x0, cfg.n, "x0")
    return EstimatorState(cfg.lam.matrix @ x0, float(t0))


def estimate(state: EstimatorState, lam, x) -> np.ndarray:
    L = lam.matrix if isinstance(lam, SpdCertificate) else np.asarray(lam, float)
    x = _vec(x, L.shape[0], "x")
    return L @ x - _vec(state.xi, L.shape[0], "xi")


def estimator_derivative(lam, f_hat, g_hat, u, delta_hat) -> np.ndarray:
    L = lam.matrix if isinstance(lam, SpdCertificate) else np.asarray(lam, float)
    n = L.shape[0]
    G = np.asarray(g_hat, float).reshape(n, -1)
    u = np.asarray(u, float).reshape(-1)
    return L @ (_vec(f_hat, n, "f_hat") + G @ u + _vec(delta_hat, n, "delta_hat"))


def error_bound(env: ErrorEnvelope, t_elapsed: float) -> float:
    """Upper bound on ``||e(t)||`` at ``t_elapsed`` seconds after initialization."""
    if t_elapsed < 0:
        raise ValueError(f"t_elapsed must be non-negative, got {t_elapsed}")
    return env.transient_coefficient * np.exp(-env.tau_e * t_elapsed) + env.steady_state


def output_bound(env: ErrorEnvelope, lam_norm: float, t_elapsed: float) -> float:
    """Upper bound on ``||delta_hat(t)||``."""
    if t_elapsed < 0:
        raise ValueError(f"t_elapsed must be non-negative, got {t_elapsed}")
    return 2.0 * env.D * env.delta_b * lam_norm * env.P_norm * (-np.expm1(-env.tau_e * t_elapsed))


def iss_gains(lam, delta_l: float) -> tuple[float, float]:
    """ISS decay gain ``mu_e`` and the steady-state gain ``gamma(delta_l)``."""
    cert = lam if isinstance(lam, SpdCertificate) else certify_spd(lam)
    lam_min = cert.min_eigenvalue
    return lam_min / 4.0, delta_l**2 / (2.0 * lam_min)


def eiss_certificate(e0_norm: float, delta_l: float, P_norm: float) -> bool:
    """Sufficient condition for exponential ISS of the error dynamics."""
    return e0_norm > 2.0 * delta_l * P_norm
