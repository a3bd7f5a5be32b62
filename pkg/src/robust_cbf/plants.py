"""Bundled systems: the slipping unicycle, the uncertain elastic actuator and a
small synthetic plant whose HOCBF needs the conic filter.

Each plant provides its nominal model, the true dynamics (nominal plus the
injected uncertainty), a desired controller and its barrier.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .barrier import BarrierSpec, HocbfChain, LinearClassK
from .uncertainty import InputPolytope, NominalModel


# ---------------------------------------------------------------------------
# smooth time profiles


def smoothstep(s):
    """Cubic ramp 0 -> 1 on [0, 1] and its derivative with respect to ``s``."""
    s = min(max(float(s), 0.0), 1.0)
    return s * s * (3.0 - 2.0 * s), 6.0 * s * (1.0 - s)


@dataclass(frozen=True)
class Pulse:
    """``amplitude`` switched on over [t_on, t_on + ramp] and off over [t_off - ramp, t_off].

    An optional sinusoidal modulation ``1 + depth * sin(freq * t + phase)``
    multiplies the envelope.
    """

    amplitude: float = 0.0
    t_on: float = 0.0
    t_off: float = np.inf
    ramp: float = 1.0
    depth: float = 0.0
    freq: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if self.ramp <= 0:
            raise ValueError(f"ramp must be positive, got {self.ramp}")
        if self.t_off - self.t_on < 2 * self.ramp:
            raise ValueError("pulse is shorter than its two ramps")

    def _envelope(self, t: float) -> tuple[float, float]:
        up, dup = smoothstep((t - self.t_on) / self.ramp)
        if np.isfinite(self.t_off):
            down, ddown = smoothstep((self.t_off - t) / self.ramp)
        else:
            down, ddown = 1.0, 0.0
        return up * down, (dup * down - up * ddown) / self.ramp

    def __call__(self, t: float) -> float:
        return self.value_and_rate(t)[0]

    def value_and_rate(self, t: float) -> tuple[float, float]:
        env, denv = self._envelope(t)
        mod = 1.0 + self.depth * np.sin(self.freq * t + self.phase)
        dmod = self.depth * self.freq * np.cos(self.freq * t + self.phase)
        return self.amplitude * env * mod, self.amplitude * (denv * mod + env * dmod)

    @property
    def peak(self) -> float:
        return abs(self.amplitude) * (1.0 + abs(self.depth))


# ---------------------------------------------------------------------------
# unicycle


@dataclass(frozen=True)
class UnicycleParams:
    tau: float = 1.0
    xi_theta: float = 0.1
    K_v: float = 1.0
    K_omega: float = 1.2
    goal: tuple = (1.0, 1.5)
    v_max: float = 0.5
    omega_max: float = 0.5

    def __post_init__(self):
        if self.tau < 0 or self.xi_theta < 0:
            raise ValueError("tau and xi_theta must be non-negative")
        if self.v_max <= 0 or self.omega_max <= 0:
            raise ValueError("input limits must be positive")


@dataclass(frozen=True)
class SlipProfile:
    """Slip angle ``beta``, yaw slip ``d_theta`` and longitudinal slip ``d_xB`` as functions of time."""

    beta: Pulse = Pulse()
    d_theta: Pulse = Pulse()
    d_xB: Pulse = Pulse()

    def at(self, t: float):
        """``((beta, d_theta, d_xB), (beta_dot, d_theta_dot, d_xB_dot))``."""
        vals = [p.value_and_rate(t) for p in (self.beta, self.d_theta, self.d_xB)]
        return tuple(v[0] for v in vals), tuple(v[1] for v in vals)


def unicycle_g(x) -> np.ndarray:
    th = x[2]
    return np.array([[np.cos(th), 0.0], [np.sin(th), 0.0], [0.0, 1.0]])


def unicycle_model(params: UnicycleParams) -> NominalModel:
    box = InputPolytope.box([-params.v_max, -params.omega_max], [params.v_max, params.omega_max])
    return NominalModel(3, 2, lambda x: np.zeros(3), unicycle_g, box)


def unicycle_nominal(x, u) -> np.ndarray:
    return unicycle_g(np.asarray(x, float)) @ np.asarray(u, float)


def unicycle_delta(x, u, beta: float, d_theta: float, d_xB: float) -> np.ndarray:
    th = float(x[2])
    v = float(np.atleast_1d(u)[0])
    gam = th + beta
    return np.array([
        v * (np.cos(gam) - np.cos(th)) - d_xB * np.cos(th),
        v * (np.sin(gam) - np.sin(th)) - d_xB * np.sin(th),
        d_theta,
    ])


def unicycle_delta_rate(x, u, slip: SlipProfile, t: float) -> np.ndarray:
    """Time derivative of the slip term along the true flow with ``u`` held."""
    (beta, d_th, d_xb), (dbeta, dd_th, dd_xb) = slip.at(t)
    x = np.asarray(x, float)
    u = np.atleast_1d(np.asarray(u, float))
    th, v = float(x[2]), float(u[0])
    th_dot = float(u[1]) + d_th
    gam, gam_dot = th + beta, th_dot + dbeta
    return np.array([
        -v * (np.sin(gam) * gam_dot - np.sin(th) * th_dot) - dd_xb * np.cos(th) + d_xb * np.sin(th) * th_dot,
        v * (np.cos(gam) * gam_dot - np.cos(th) * th_dot) - dd_xb * np.sin(th) - d_xb * np.cos(th) * th_dot,
        dd_th,
    ])


def unicycle_actual(x, u, slip: SlipProfile, t: float) -> np.ndarray:
    (beta, d_th, d_xb), _ = slip.at(t)
    return unicycle_nominal(x, u) + unicycle_delta(x, u, beta, d_th, d_xb)


def unicycle_goal_controller(params: UnicycleParams, x) -> np.ndarray:
    x = np.asarray(x, float)
    dx, dy = params.goal[0] - x[0], params.goal[1] - x[1]
    dist = float(np.hypot(dx, dy))
    if dist <= 1e-9:
        # limit convention at the goal
        return np.array([0.0, -params.K_omega * np.sin(x[2])])
    return np.array([params.K_v * dist, params.K_omega * dy / dist - params.K_omega * np.sin(x[2])])


def unicycle_edge_cbf(params: UnicycleParams, alpha: float = 1.0) -> BarrierSpec:
    tau, xi = params.tau, params.xi_theta
    return BarrierSpec(
        h=lambda x: float(x[1] + xi * np.sin(x[2]) + tau),
        grad_h=lambda x: np.array([0.0, 1.0, xi * np.cos(x[2])]),
        alpha=LinearClassK(alpha),
    )


# ---------------------------------------------------------------------------
# elastic actuator


@dataclass(frozen=True)
class ActuatorParams:
    M: float = 0.5
    g_bar: float = 9.81
    I_L: float = 0.5
    J_m: float = 0.1
    k: float = 0.25
    L: float = 0.04
    u_max: float = 0.2 * 9.81
    c_q: float = -2.0
    lambda_V: float = 10.0
    x4d: float = 0.0

    def __post_init__(self):
        for name in ("M", "I_L", "J_m", "k"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.u_max < 0:
            raise ValueError("u_max must be non-negative")


def _load_torque(p: ActuatorParams, x) -> float:
    return p.M * p.g_bar * p.L * np.sin(x[0]) - p.k * (x[0] - x[2])


def actuator_f_hat(p: ActuatorParams, x) -> np.ndarray:
    x = np.asarray(x, float)
    return np.array([x[1], _load_torque(p, x) / p.I_L, x[3], p.k * (x[0] - x[2]) / p.J_m])


def actuator_g_hat(p: ActuatorParams, x=None) -> np.ndarray:
    return np.array([[0.0], [0.0], [0.0], [1.0 / p.J_m]])


def actuator_delta(p: ActuatorParams, x, u) -> np.ndarray:
    """``delta_f(x) + delta_g(x) u`` of the true actuator."""
    x = np.asarray(x, float)
    u = float(np.atleast_1d(u)[0])
    return np.array([
        0.0,
        -_load_torque(p, x) / (3.0 * p.I_L) + 0.1,
        0.0,
        p.k * (x[0] - x[2]) / (4.0 * p.J_m) - 0.2 + u / (4.0 * p.J_m),
    ])


def actuator_dynamics(p: ActuatorParams, x, u, actual: bool) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, float))
    xdot = actuator_f_hat(p, x) + actuator_g_hat(p) @ u
    if actual:
        xdot = xdot + actuator_delta(p, x, u)
    return xdot


def actuator_actual_f(p: ActuatorParams, x) -> np.ndarray:
    return actuator_f_hat(p, x) + actuator_delta(p, x, 0.0)


def actuator_actual_g(p: ActuatorParams, x=None) -> np.ndarray:
    return np.array([[0.0], [0.0], [0.0], [1.25 / p.J_m]])


def actuator_model(p: ActuatorParams) -> NominalModel:
    box = InputPolytope.box([-p.u_max], [p.u_max])
    return NominalModel(4, 1, lambda x: actuator_f_hat(p, x), lambda x: actuator_g_hat(p), box)


def actuator_clf_controller(p: ActuatorParams, x) -> np.ndarray:
    """Min-norm CLF controller for ``V = (x4 - x4d)^2``."""
    x = np.asarray(x, float)
    err = x[3] - p.x4d
    V = err**2
    LfV = 2.0 * err * p.k * (x[0] - x[2]) / p.J_m
    LgV = 2.0 * err / p.J_m
    vs = LfV + p.lambda_V * V
    if vs <= 0.0:
        return np.zeros(1)
    return np.array([-vs * LgV / LgV**2])


def actuator_barrier(p: ActuatorParams, alpha1: float) -> BarrierSpec:
    cq = p.c_q
    return BarrierSpec(
        h=lambda x: float(x[1] - cq * x[2]),
        grad_h=lambda x: np.array([0.0, 1.0, -cq, 0.0]),
        alpha=LinearClassK(alpha1),
    )


def actuator_hocbf_chain(p: ActuatorParams, alpha1: float = 2.0, alpha2: float = 2.0) -> HocbfChain:
    base = actuator_barrier(p, alpha1)
    cq, a1 = p.c_q, alpha1

    def psi(x):
        x = np.asarray(x, float)
        return float(_load_torque(p, x) / p.I_L - cq * x[3] + a1 * (x[1] - cq * x[2]))

    def grad_psi(x):
        x = np.asarray(x, float)
        return np.array([
            (p.M * p.g_bar * p.L * np.cos(x[0]) - p.k) / p.I_L,
            a1,
            p.k / p.I_L - a1 * cq,
            -cq,
        ])

    return HocbfChain(base, LinearClassK(alpha1), LinearClassK(alpha2), psi, grad_psi,
                      F=lambda x: np.zeros((4, 4)), F_g_identically_zero=True)


# ---------------------------------------------------------------------------
# synthetic plant for the conic filter
#
#   f_hat = [x2, 0],  g_hat = [-x2, 1]^T,  h = 1 - x1 - x2^2 / 2
#
# grad h = [-1, -x2] is orthogonal to g_hat, so the input first appears in the
# second derivative (L_g L_f h = -1), and the Hessian of h is diag(0, -1), for
# which F g_hat = [0, -1] never vanishes.


@dataclass(frozen=True)
class SyntheticParams:
    u_max: float = 4.0
    x1_target: float = 2.0
    kp: float = 1.0
    kd: float = 1.5
    d_amp: float = 0.6
    d_freq: float = 1.0
    d_phase: float = 0.0
    d_ramp: float = 1.0


def synthetic_f_hat(x) -> np.ndarray:
    return np.array([x[1], 0.0])


def synthetic_g_hat(x) -> np.ndarray:
    return np.array([[-x[1]], [1.0]])


def synthetic_disturbance(p: SyntheticParams) -> Callable[[float], tuple[float, float]]:
    """``t -> (d(t), d_dot(t))``: a sinusoid of amplitude ``d_amp`` behind a smooth ramp."""
    pulse = Pulse(p.d_amp, 0.0, np.inf, p.d_ramp, 0.0)

    def d(t: float):
        env, denv = pulse.value_and_rate(t)
        s, c = np.sin(p.d_freq * t + p.d_phase), np.cos(p.d_freq * t + p.d_phase)
        # biased positive so the disturbance keeps pushing toward the boundary
        return env * 0.5 * (1.0 + s), denv * 0.5 * (1.0 + s) + env * 0.5 * p.d_freq * c

    return d


def synthetic_model(p: SyntheticParams) -> NominalModel:
    return NominalModel(2, 1, synthetic_f_hat, synthetic_g_hat, InputPolytope.box([-p.u_max], [p.u_max]))


def synthetic_controller(p: SyntheticParams, x) -> np.ndarray:
    """PD law driving ``x1`` toward a target beyond the barrier."""
    return np.array([-p.kp * (x[0] - p.x1_target) - p.kd * x[1]])


def synthetic_socp_plant(p: SyntheticParams = SyntheticParams(), alpha1: float = 1.0, alpha2: float = 1.0):
    """``(model, chain, disturbance)`` for the synthetic plant."""
    base = BarrierSpec(
        h=lambda x: float(1.0 - x[0] - 0.5 * x[1] ** 2),
        grad_h=lambda x: np.array([-1.0, -x[1]]),
        alpha=LinearClassK(alpha1),
    )

    def psi(x):
        return float(-x[1] + alpha1 * (1.0 - x[0] - 0.5 * x[1] ** 2))

    def grad_psi(x):
        return np.array([-alpha1, -1.0 - alpha1 * x[1]])

    chain = HocbfChain(base, LinearClassK(alpha1), LinearClassK(alpha2), psi, grad_psi,
                       F=lambda x: np.array([[0.0, 0.0], [0.0, -1.0]]), F_g_identically_zero=False)
    return synthetic_model(p), chain, synthetic_disturbance(p)
