"""Fixed-step closed-loop simulation with the estimator in the loop.

At every control step the harness reads the state, forms the estimate, builds
and solves the filter program, applies the (compensated) input with a
zero-order hold and integrates the plant and the estimator state together with
RK4. Traces record every plotted quantity; metrics summarize a trace.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from . import estimator as est
from .barrier import BarrierSpec, HocbfChain
from .estimator import EstimatorConfig
from .filters import (HOCBF_FILTERS, FilterSettings, build_program, constraint_margin,
                      relax_program, solve_program)
from .solvers import DEFAULT_TOLERANCES, SolverTolerances
from .uncertainty import NominalModel, decompose, orthogonality_residual

VIOLATION_TOL = 1e-3
BOUND_TOL = 1e-6


class SimulationError(RuntimeError):
    pass


class FilterFailure(SimulationError):
    """The filter program had no solution; carries the trace up to the failing step."""

    def __init__(self, message: str, trace: "SimTrace", step: int, time: float):
        super().__init__(message)
        self.trace = trace
        self.step = step
        self.time = time


@dataclass
class Plant:
    """Everything the harness needs to close the loop around one system."""

    name: str
    model: NominalModel
    actual: Callable  # (t, x, u) -> x_dot of the true system
    delta: Callable  # (t, x, u) -> true compound uncertainty
    controller: Callable  # x -> desired input
    barrier: BarrierSpec
    chain: Optional[HocbfChain] = None
    tracking_error: Optional[Callable] = None  # x -> scalar, integrated as tracking cost
    x0: Optional[np.ndarray] = None


@dataclass
class ScenarioConfig:
    plant: Plant
    estimator: EstimatorConfig
    filter: FilterSettings
    rate: float
    duration: float
    substeps: int = 10
    x0: Optional[np.ndarray] = None
    seed: int = 0
    x0_jitter: float = 0.0
    slack: bool = False
    slack_weight: float = 1e6
    tolerances: SolverTolerances = DEFAULT_TOLERANCES

    def __post_init__(self):
        if not (self.rate > 0 and self.duration > 0 and self.substeps >= 1):
            raise ValueError("rate, duration and substeps must be positive")
        if self.filter.name in HOCBF_FILTERS and self.plant.chain is None:
            raise ValueError(f"filter {self.filter.name} needs a plant with an HOCBF chain")
        if self.estimator.n != self.plant.model.n:
            raise ValueError("estimator dimension does not match the plant")

    @property
    def steps(self) -> int:
        return int(round(self.duration * self.rate))

    def initial_state(self) -> np.ndarray:
        x0 = self.x0 if self.x0 is not None else self.plant.x0
        if x0 is None:
            raise ValueError("no initial state given")
        x0 = np.array(x0, float).reshape(self.plant.model.n)
        if self.x0_jitter > 0:
            rng = np.random.default_rng(self.seed)
            x0 = x0 + rng.uniform(-self.x0_jitter, self.x0_jitter, x0.size)
        return x0


# ---------------------------------------------------------------------------
# integration


def integrate_rk4(derivative, z0, t0: float, dt: float, substeps: int = 1) -> np.ndarray:
    """Classical RK4 over ``substeps`` equal slices of ``[t0, t0 + dt]``."""
    if dt <= 0 or substeps < 1:
        raise ValueError("dt must be positive and substeps >= 1")
    z = np.array(z0, float)
    h = dt / substeps
    t = t0
    for _ in range(substeps):
        k1 = derivative(t, z)
        k2 = derivative(t + h / 2, z + h / 2 * k1)
        k3 = derivative(t + h / 2, z + h / 2 * k2)
        k4 = derivative(t + h, z + h * k3)
        z = z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(z)):
            raise SimulationError(f"non-finite state after RK4 slice ending at t={t + h:.6g}")
        t += h
    return z


# ---------------------------------------------------------------------------
# traces


@dataclass
class SimTrace:
    t: np.ndarray
    x: np.ndarray
    u_desired: np.ndarray
    u_bar: np.ndarray
    u_applied: np.ndarray
    delta: np.ndarray
    delta_hat: np.ndarray
    e_norm: np.ndarray
    e_bar: np.ndarray
    delta_hat_bound: np.ndarray
    h: np.ndarray
    psi: np.ndarray
    h_v: np.ndarray
    solver_status: list
    objective: np.ndarray
    # diagnostics kept in memory only (not part of the CSV schema)
    kkt: Optional[np.ndarray] = None
    margin: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.t)

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.u_bar.shape[1]


_VECTOR_COLUMNS = ("x", "u_desired", "u_bar", "u_applied", "delta", "delta_hat")
_SCALAR_COLUMNS = ("e_norm", "e_bar", "delta_hat_bound", "h", "psi", "h_v")


def csv_header(n: int, m: int) -> list[str]:
    cols = ["t"]
    for name in _VECTOR_COLUMNS:
        cols += [f"{name}_{i}" for i in range(n if name in ("x", "delta", "delta_hat") else m)]
    return cols + list(_SCALAR_COLUMNS) + ["solver_status", "objective"]


def _fmt(v: float) -> str:
    if math.isnan(v):
        return ""
    return "%.17g" % v


def export_csv(trace: SimTrace, path) -> None:
    """Write the trace with a fixed header; missing values are empty fields.

    ``h_v`` uses the true estimation error and is a simulation-only diagnostic.
    """
    try:
        with open(path, "w", newline="", encoding="ascii") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(csv_header(trace.n, trace.m))
            for k in range(len(trace)):
                row = [_fmt(trace.t[k])]
                for name in _VECTOR_COLUMNS:
                    row += [_fmt(v) for v in getattr(trace, name)[k]]
                row += [_fmt(getattr(trace, name)[k]) for name in _SCALAR_COLUMNS]
                row += [trace.solver_status[k], _fmt(trace.objective[k])]
                w.writerow(row)
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc


def read_csv(path) -> SimTrace:
    try:
        with open(path, newline="", encoding="ascii") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"cannot read trace from {path}: {exc}") from exc
    header, body = rows[0], rows[1:]
    n = sum(1 for c in header if c.startswith("x_"))
    m = sum(1 for c in header if c.startswith("u_bar_"))
    if header != csv_header(n, m):
        raise ValueError(f"{path}: unexpected CSV header")
    idx = {c: i for i, c in enumerate(header)}

    def num(s):
        return float(s) if s != "" else math.nan

    def col(name):
        return np.array([num(r[idx[name]]) for r in body])

    def mat(name, k):
        return np.column_stack([col(f"{name}_{i}") for i in range(k)]) if body else np.zeros((0, k))

    dims = {"x": n, "delta": n, "delta_hat": n}
    return SimTrace(
        t=col("t"),
        **{name: mat(name, dims.get(name, m)) for name in _VECTOR_COLUMNS},
        **{name: col(name) for name in _SCALAR_COLUMNS},
        solver_status=[r[idx["solver_status"]] for r in body],
        objective=col("objective"),
    )


class _Recorder:
    def __init__(self):
        self.rows: dict[str, list] = {f.name: [] for f in fields(SimTrace)}

    def add(self, **kw):
        for k, v in kw.items():
            self.rows[k].append(v)

    def trace(self) -> SimTrace:
        r = self.rows
        out = {}
        for f in fields(SimTrace):
            vals = r[f.name]
            out[f.name] = list(vals) if f.name == "solver_status" else np.array(vals, float)
        return SimTrace(**out)


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class Metrics:
    samples: int
    min_h: float
    first_violation_time: Optional[float]
    bound_violation_count: int
    output_bound_violation_count: int
    infeasible_steps: int
    relaxed_steps: int
    max_delta_norm: float
    max_delta_hat: float
    max_delta_hat_excess: float
    max_e_norm: float
    e_bar_below_initial_error: bool
    h_v_initial_ok: bool
    tracking_cost: float = math.nan
    max_orthogonality_residual: float = math.nan
    mean_kkt: float = math.nan
    max_kkt: float = math.nan

    @property
    def safe(self) -> bool:
        return self.first_violation_time is None

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def format(self) -> str:
        lines = []
        for k, v in self.as_dict().items():
            if isinstance(v, float):
                v = "%.17g" % v
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def compute_metrics(trace: SimTrace, plant: Optional[Plant] = None) -> Metrics:
    """Aggregate a trace; ``plant`` enables tracking cost and the orthogonality check."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    h = trace.h
    viol = np.nonzero(h < -VIOLATION_TOL)[0]
    dh_norm = np.linalg.norm(trace.delta_hat, axis=1)
    finite = np.isfinite(trace.e_norm)
    status = trace.solver_status
    tracking = ortho = math.nan
    if plant is not None:
        t = trace.t
        if plant.tracking_error is not None:
            err = np.array([plant.tracking_error(xk) for xk in trace.x])
            tracking = float(np.sum(0.5 * (err[1:] + err[:-1]) * np.diff(t))) if len(t) > 1 else 0.0
        ores = [orthogonality_residual(plant.model, xk, decompose(plant.model, xk, dk).unmatched)
                for xk, dk in zip(trace.x, trace.delta)]
        ortho = float(max(ores))
    kkt_mean = kkt_max = math.nan
    if trace.kkt is not None:
        k = trace.kkt[np.isfinite(trace.kkt)]
        if k.size:
            kkt_mean, kkt_max = float(k.mean()), float(k.max())
    return Metrics(
        samples=len(trace),
        min_h=float(np.nanmin(h)),
        first_violation_time=float(trace.t[viol[0]]) if viol.size else None,
        bound_violation_count=int(np.sum(trace.e_norm[finite] > trace.e_bar[finite] + BOUND_TOL)),
        output_bound_violation_count=int(np.sum(dh_norm > trace.delta_hat_bound + BOUND_TOL)),
        infeasible_steps=sum(s in ("Infeasible", "MaxIterations", "Relaxed") for s in status),
        relaxed_steps=sum(s == "Relaxed" for s in status),
        max_delta_norm=float(np.max(np.linalg.norm(trace.delta, axis=1))),
        max_delta_hat=float(np.max(dh_norm)),
        max_delta_hat_excess=float(np.max(dh_norm - trace.delta_hat_bound)),
        max_e_norm=float(np.nanmax(trace.e_norm)),
        e_bar_below_initial_error=bool(trace.e_bar[0] < trace.e_norm[0]),
        h_v_initial_ok=bool(trace.h_v[0] >= 0.0),
        tracking_cost=tracking,
        max_orthogonality_residual=ortho,
        mean_kkt=kkt_mean,
        max_kkt=kkt_max,
    )


# ---------------------------------------------------------------------------
# closed loop


def run_scenario(cfg: ScenarioConfig) -> tuple[SimTrace, Metrics]:
    plant, model, ecfg, fs = cfg.plant, cfg.plant.model, cfg.estimator, cfg.filter
    n = model.n
    lam = ecfg.lam.matrix
    env = ecfg.envelope
    lam_norm = ecfg.lam_norm
    dt = 1.0 / cfg.rate
    N = cfg.steps
    hocbf = fs.name in HOCBF_FILTERS

    x = cfg.initial_state()
    state = est.init_estimator(ecfg, x, 0.0)
    xi = state.xi.copy()
    rec = _Recorder()

    for k in range(N + 1):
        t = k * dt
        dhat = est.estimate(est.EstimatorState(xi, 0.0), lam, x)
        kd = np.atleast_1d(np.asarray(plant.controller(x), float))
        eb = est.error_bound(env, t)
        ob = est.output_bound(env, lam_norm, t)

        prog = build_program(fs, model, plant.barrier, plant.chain, x, kd, dhat, eb)
        if prog is None:
            ubar, status, obj, kkt, margin = kd.copy(), "Unfiltered", 0.0, 0.0, math.nan
        else:
            res = solve_program(prog, cfg.tolerances)
            status = res.status.value
            if res.optimal:
                ubar, obj, kkt = res.u, res.objective, res.kkt_residual
            elif cfg.slack:
                rres = solve_program(relax_program(prog, cfg.slack_weight), cfg.tolerances)
                if not rres.optimal:
                    raise SimulationError(f"relaxed filter program failed at t={t:.6g}: {rres.status.value}")
                ubar, status, kkt = rres.u[: model.m], "Relaxed", rres.kkt_residual
                obj = float(np.sum((ubar - kd) ** 2))
            else:
                ubar = np.full(model.m, math.nan)
                obj = kkt = math.nan
            margin = constraint_margin(prog, ubar) if np.all(np.isfinite(ubar)) else math.nan

        failed = not np.all(np.isfinite(ubar))
        if failed:
            u_app = np.full(model.m, math.nan)
            delta = np.asarray(plant.delta(t, x, np.zeros(model.m)), float)
        else:
            u = ubar - model.pinv(x) @ dhat if fs.compensating else ubar
            # clipping is a no-op for filtered inputs; it bounds the unfiltered case
            u_app = model.input_set.clip(u)
            delta = np.asarray(plant.delta(t, x, u_app), float)
        e = delta - dhat
        e_sq = float(e @ e)
        rec.add(t=t, x=x.copy(), u_desired=kd, u_bar=np.array(ubar, float), u_applied=u_app,
                delta=delta, delta_hat=dhat, e_norm=math.sqrt(e_sq), e_bar=eb, delta_hat_bound=ob,
                h=plant.barrier.h(x), psi=plant.chain.psi(x) if hocbf else math.nan,
                h_v=plant.barrier.h(x) - fs.sigma_v * 0.5 * e_sq,
                solver_status=status, objective=obj, kkt=kkt, margin=margin)
        if failed:
            trace = rec.trace()
            raise FilterFailure(f"{fs.name} program {status} at t={t:.6g} (step {k})", trace, k, t)
        if k == N:
            break

        def deriv(tt, z, u_app=u_app):
            xx, xxi = z[:n], z[n:]
            xdot = np.asarray(plant.actual(tt, xx, u_app), float)
            dh = lam @ xx - xxi
            return np.concatenate([xdot, lam @ (model(xx, u_app) + dh)])

        z = integrate_rk4(deriv, np.concatenate([x, xi]), t, dt, cfg.substeps)
        x, xi = z[:n], z[n:]

    trace = rec.trace()
    return trace, compute_metrics(trace, plant)


def audit_uncertainty_bounds(trace: SimTrace, plant: Plant, h: float = 1e-6) -> tuple[float, float]:
    """Largest ``||delta||`` and ``||d delta / dt||`` along a trace.

    The rate is the derivative along the true flow with the sampled input held
    (central difference in time and state), so zero-order-hold input jumps do
    not count as rates.
    """
    max_norm = max_rate = 0.0
    for t, x, u in zip(trace.t, trace.x, trace.u_applied):
        if not np.all(np.isfinite(u)):
            continue
        xdot = np.asarray(plant.actual(t, x, u), float)
        d0 = np.asarray(plant.delta(t, x, u), float)
        dp = np.asarray(plant.delta(t + h, x + h * xdot, u), float)
        dm = np.asarray(plant.delta(t - h, x - h * xdot, u), float)
        max_norm = max(max_norm, float(np.linalg.norm(d0)))
        max_rate = max(max_rate, float(np.linalg.norm((dp - dm) / (2 * h))))
    return max_norm, max_rate
