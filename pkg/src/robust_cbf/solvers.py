"""Small dense solvers for the per-step safety-filter programs.

``solve_filter_qp`` projects the desired input onto a polyhedron with a dual
active-set method (Goldfarb-Idnani, identity Hessian). It starts from the
unconstrained minimizer, so it needs no feasible starting point and detects an
empty polyhedron when a violated row cannot be made active.

``solve_filter_socp`` handles one second-order cone row on top of the affine rows.
The quadratic cost goes into epigraph form with the rotated cone
``||[2 (u - k_d); rho - 1]|| <= rho + 1`` and the resulting linear-objective SOCP
is solved by a log-barrier interior-point method with a phase-I start.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .barrier import AffineConstraintRow, ConeTerm


@dataclass(frozen=True)
class SolverTolerances:
    feasibility: float = 1e-9
    kkt: float = 1e-6
    gap: float = 1e-9
    barrier_reduction: float = 0.2
    max_interior_iterations: int = 200
    max_centering_steps: int = 50
    centering: float = 1e-10
    slack_weight: float = 1e6


DEFAULT_TOLERANCES = SolverTolerances()


class SolveStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITERATIONS = "MaxIterations"


@dataclass(frozen=True)
class QpSpec:
    """Minimize ``sum_j weights_j (u_j - center_j)^2`` subject to ``a @ u + b >= 0`` for every row."""

    center: np.ndarray
    rows: Sequence[AffineConstraintRow] = ()
    input_rows: Sequence[AffineConstraintRow] = ()
    weights: Optional[np.ndarray] = None

    @property
    def m(self) -> int:
        return int(np.atleast_1d(self.center).size)

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        all_rows = list(self.rows) + list(self.input_rows)
        if not all_rows:
            return np.zeros((0, self.m)), np.zeros(0)
        A = np.vstack([np.atleast_1d(r.a).reshape(1, self.m) for r in all_rows])
        b = np.array([r.b for r in all_rows], dtype=float)
        return A, b


@dataclass(frozen=True)
class SocpSpec:
    """QP data plus ``cone.value(u) <= row.a @ u + row.b``."""

    qp: QpSpec
    row: AffineConstraintRow
    cone: ConeTerm


@dataclass
class SolveResult:
    status: SolveStatus
    u: Optional[np.ndarray]
    objective: float
    kkt_residual: float
    iterations: int = 0
    violated_row: Optional[int] = None
    multipliers: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


def input_rows_from(A: np.ndarray, b: np.ndarray) -> list[AffineConstraintRow]:
    return [AffineConstraintRow(np.array(A[i], float), float(b[i])) for i in range(A.shape[0])]


# ---------------------------------------------------------------------------
# QP: dual active set


def _dual_active_set(c, N, r, tol, max_pivots):
    """min 0.5 ||x - c||^2  s.t.  N x >= r.  Returns (status, x, lam, pivots, violated_row)."""
    k, m = N.shape
    x = c.copy()
    active: list[int] = []
    lam = np.zeros(0)
    pivots = 0
    while True:
        slack = N @ x - r
        viol = np.full(k, np.inf)
        for i in range(k):
            if i not in active:
                viol[i] = slack[i]
        if k == 0 or viol.min() >= -tol:
            full = np.zeros(k)
            full[active] = lam
            return SolveStatus.OPTIMAL, x, full, pivots, None
        p = int(np.argmin(viol))  # most violated; argmin breaks ties on lowest index
        lam_p = 0.0
        while True:
            n_p = N[p]
            if active:
                Na = N[active].T
                r_dir = np.linalg.solve(Na.T @ Na, Na.T @ n_p)
                z = n_p - Na @ r_dir
            else:
                r_dir = np.zeros(0)
                z = n_p.copy()
            t1, drop = np.inf, None
            for j, idx in enumerate(active):
                if r_dir[j] > 1e-14:
                    ratio = lam[j] / r_dir[j]
                    if ratio < t1 or (ratio == t1 and idx < active[drop]):
                        t1, drop = ratio, j
            zz = float(z @ n_p)
            if np.linalg.norm(z) <= 1e-12 * max(1.0, np.linalg.norm(n_p)):
                t2 = np.inf
            else:
                t2 = -(n_p @ x - r[p]) / zz
            t = min(t1, t2)
            if not np.isfinite(t):
                full = np.zeros(k)
                full[active] = lam
                return SolveStatus.INFEASIBLE, x, full, pivots, p
            pivots += 1
            if pivots > max_pivots:
                full = np.zeros(k)
                full[active] = lam
                return SolveStatus.MAX_ITERATIONS, x, full, pivots, None
            if np.isfinite(t2):
                x = x + t * z
            lam = lam - t * r_dir
            lam_p += t
            if t2 <= t1:
                active.append(p)
                lam = np.append(lam, lam_p)
                break
            del active[drop]
            lam = np.delete(lam, drop)


def _kkt_residual(c, N, r, x, lam) -> float:
    if N.shape[0] == 0:
        return float(np.linalg.norm(x - c))
    slack = N @ x - r
    stationarity = np.linalg.norm((x - c) - N.T @ lam)
    return float(max(stationarity, max(0.0, -slack.min()), np.max(np.abs(lam * slack)),
                     max(0.0, -lam.min())))


def solve_filter_qp(spec: QpSpec, tol: SolverTolerances = DEFAULT_TOLERANCES) -> SolveResult:
    """Exact Euclidean (optionally weighted) projection of ``spec.center`` onto the rows' polyhedron."""
    center = np.atleast_1d(np.asarray(spec.center, float))
    m = center.size
    sw = np.ones(m) if spec.weights is None else np.sqrt(np.asarray(spec.weights, float))
    A, b = spec.stacked()
    # y = sqrt(W) u turns the weighted projection into a Euclidean one
    N = A / sw
    c = sw * center
    status, y, lam, pivots, bad = _dual_active_set(c, N, -b, tol.feasibility, 10 * (m + A.shape[0]))
    u = y / sw
    obj = float(np.sum((y - c) ** 2))
    kkt = _kkt_residual(c, N, -b, y, lam)
    if status is not SolveStatus.OPTIMAL:
        return SolveResult(status, None, obj, kkt, pivots, bad, lam)
    return SolveResult(status, u, obj, kkt, pivots, None, 2.0 * lam)


# ---------------------------------------------------------------------------
# SOCP: log-barrier interior point on the epigraph form


@dataclass(frozen=True)
class _Affine:
    a: np.ndarray
    b: float

    def value(self, z):
        return self.a @ z + self.b

    def barrier(self, z):
        s = self.value(z)
        if s <= 0:
            return None
        return -np.log(s), -self.a / s, np.outer(self.a, self.a) / s**2


@dataclass(frozen=True)
class _Soc:
    """``||Y z + y0|| <= w @ z + w0`` with barrier ``-log((w z + w0)^2 - ||Y z + y0||^2)``."""

    w: np.ndarray
    w0: float
    Y: np.ndarray
    y0: np.ndarray

    def barrier(self, z):
        s = self.w @ z + self.w0
        y = self.Y @ z + self.y0
        q = s * s - y @ y
        if s <= 0 or q <= 0:
            return None
        dq = (2.0 * s) * self.w - 2.0 * (y @ self.Y)
        gq = dq / q
        return -np.log(q), -gq, gq[:, None] * gq[None, :] - self._d2q / q

    @property
    def _d2q(self):
        d2q = self.__dict__.get("_d2q_cache")
        if d2q is None:
            d2q = 2.0 * np.outer(self.w, self.w) - 2.0 * self.Y.T @ self.Y
            self.__dict__["_d2q_cache"] = d2q
        return d2q


    def max_step(self, z, dz) -> float:
        # q(t) = (w(z + t dz) + w0)^2 - ||Y(z + t dz) + y0||^2 and the linear part must stay positive
        step = np.inf
        s0, s1 = self.w @ z + self.w0, self.w @ dz
        y0, y1 = self.Y @ z + self.y0, self.Y @ dz
        if s1 < 0:
            step = -s0 / s1
        qa, qb, qc = s1 * s1 - y1 @ y1, 2.0 * (s0 * s1 - y0 @ y1), s0 * s0 - y0 @ y0
        return min([step] + _positive_roots(qa, qb, qc))


@dataclass(frozen=True)
class _Quad:
    """``||Y z + y0||^2 <= w @ z + w0`` with barrier ``-log(w z + w0 - ||Y z + y0||^2)``.

    Same set as the rotated cone of the epigraph, but without the cancellation in
    ``(rho + 1)^2 - (rho - 1)^2`` when rho is large.
    """

    w: np.ndarray
    w0: float
    Y: np.ndarray
    y0: np.ndarray

    def barrier(self, z):
        y = self.Y @ z + self.y0
        q = self.w @ z + self.w0 - y @ y
        if q <= 0:
            return None
        gq = (self.w - 2.0 * (y @ self.Y)) / q
        return -np.log(q), -gq, gq[:, None] * gq[None, :] + (2.0 / q) * (self.Y.T @ self.Y)

    def max_step(self, z, dz) -> float:
        y0, y1 = self.Y @ z + self.y0, self.Y @ dz
        qa, qb, qc = -(y1 @ y1), self.w @ dz - 2.0 * (y0 @ y1), self.w @ z + self.w0 - y0 @ y0
        return min([np.inf] + _positive_roots(qa, qb, qc))


class _BarrierSet:
    """All barrier terms of one program: affine rows stacked, cones kept separately."""

    def __init__(self, terms):
        aff = [t for t in terms if isinstance(t, _Affine)]
        self.cones = [t for t in terms if not isinstance(t, _Affine)]
        nz = (aff[0].a if aff else self.cones[0].w).size
        self.A = np.array([t.a for t in aff], float).reshape(len(aff), nz)
        self.b = np.array([t.b for t in aff], float)

    def eval(self, z):
        s = self.A @ z + self.b
        if np.any(s <= 0):
            return None
        val = float(-np.sum(np.log(s)))
        As = self.A / s[:, None]
        g = -np.sum(As, axis=0)
        H = As.T @ As
        for cone in self.cones:
            out = cone.barrier(z)
            if out is None:
                return None
            val += out[0]
            g = g + out[1]
            H = H + out[2]
        return val, g, H

    def max_step(self, z, dz) -> float:
        """Largest step keeping every term strictly inside its domain (inf if unbounded)."""
        step = np.inf
        s = self.A @ z + self.b
        ds = self.A @ dz
        neg = ds < 0
        if np.any(neg):
            step = float(np.min(-s[neg] / ds[neg]))
        for c in self.cones:
            step = min(step, c.max_step(z, dz))
        return step


def _positive_roots(a, b, c):
    """Positive real roots of ``a t^2 + b t + c`` (stable form)."""
    if abs(a) < 1e-300:
        return [-c / b] if b != 0 and -c / b > 0 else []
    disc = b * b - 4.0 * a * c
    if disc < 0:
        return []
    q = -0.5 * (b + np.copysign(np.sqrt(disc), b))
    roots = [q / a] + ([c / q] if q != 0 else [])
    return [r for r in roots if r > 0]


def _barrier_eval(terms, z):
    return _BarrierSet(terms).eval(z)


def _initial_weight(bs, cost, z) -> float:
    """The t that best balances ``t * cost`` against the barrier gradient at ``z``.

    Keeps the first centering short when the objective is far from order one.
    """
    _, g, H = bs.eval(z)
    try:
        Hc, Hg = np.linalg.solve(H, np.column_stack([cost, g])).T
    except np.linalg.LinAlgError:
        return 1.0
    t = -(cost @ Hg) / (cost @ Hc)
    return float(np.clip(t, 1e-12, 1e6)) if np.isfinite(t) else 1.0


def _barrier_minimize(cost, terms, z0, degree, tol, stop=None):
    """Path-following barrier method. Returns (z, converged, newton_steps, gap)."""
    bs = _BarrierSet(terms)
    z = z0.copy()
    t = _initial_weight(bs, cost, z)
    steps = 0
    while True:
        # centering; at large t the Newton decrement stalls near machine precision,
        # so a capped or stalled centering still advances t
        inner = 0
        while inner < tol.max_centering_steps:
            val, g, H = bs.eval(z)
            grad = t * cost + g
            try:
                dz = -np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                dz = -np.linalg.lstsq(H, grad, rcond=None)[0]
            dec2 = float(-grad @ dz)
            if dec2 / 2.0 <= tol.centering or not np.isfinite(dec2):
                break
            steps += 1
            inner += 1
            if steps > tol.max_interior_iterations:
                return z, False, steps, degree / t
            f0 = t * cost @ z + val
            step = min(1.0, 0.99 * bs.max_step(z, dz))
            slack = 1e-13 * max(1.0, abs(f0))
            # Newton directions can be huge when a barrier is nearly flat, so the
            # smallest admissible step is relative to the first trial
            floor = step * 2.0**-30
            while step >= floor:
                z_new = z + step * dz
                ev_new = bs.eval(z_new)
                if ev_new is not None and t * cost @ z_new + ev_new[0] <= f0 - 0.25 * step * dec2 + slack:
                    break
                step *= 0.5
            if step < floor:
                break
            z = z_new
            if stop is not None and stop(z):
                return z, True, steps, degree / t
        # the gap bound is relative once the objective exceeds one
        if degree / t < tol.gap * max(1.0, abs(float(cost @ z))):
            return z, True, steps, degree / t
        t /= tol.barrier_reduction


def epigraph_residual(u, center, rho) -> float:
    """``rho + 1 - ||[2 (u - center); rho - 1]||``; non-negative iff ``||u - center||^2 <= rho``."""
    d = 2.0 * (np.atleast_1d(u) - np.atleast_1d(center))
    return float(rho + 1.0 - np.linalg.norm(np.append(d, rho - 1.0)))


def _cone_soc(row: AffineConstraintRow, cone: ConeTerm, m: int, nz: int, sigma_col: Optional[int]):
    w = np.zeros(nz)
    w[:m] = row.a
    if sigma_col is not None:
        w[sigma_col] = 1.0
    Y = np.zeros((cone.M.shape[0], nz))
    Y[:, :m] = cone.scale * cone.M
    return _Soc(w, float(row.b), Y, cone.scale * np.asarray(cone.v, float))


def _unscale(row: AffineConstraintRow, sw) -> AffineConstraintRow:
    return AffineConstraintRow(np.asarray(row.a, float) / sw, row.b)


def solve_filter_socp(spec: SocpSpec, tol: SolverTolerances = DEFAULT_TOLERANCES) -> SolveResult:
    qp = spec.qp
    m = qp.m
    cone = spec.cone
    if cone.is_constant:
        const_row = AffineConstraintRow(spec.row.a, spec.row.b - cone.value(np.zeros(m)))
        return solve_filter_qp(replace(qp, rows=list(qp.rows) + [const_row]), tol)

    # the affine relaxation (cone dropped, a u + b >= 0 kept) bounds the SOCP from below
    relaxed = solve_filter_qp(replace(qp, rows=list(qp.rows) + [spec.row]), tol)
    if not relaxed.optimal:
        return relaxed
    if cone.value(relaxed.u) <= spec.row.value(relaxed.u) + tol.feasibility:
        return relaxed

    if qp.weights is not None and not np.all(np.asarray(qp.weights, float) == 1.0):
        # unit weights after z = sqrt(w) u; large slack weights otherwise ruin the epigraph scaling
        sw = np.sqrt(np.asarray(qp.weights, float))
        scaled = SocpSpec(QpSpec(sw * np.asarray(qp.center, float), [_unscale(r, sw) for r in qp.rows],
                                 [_unscale(r, sw) for r in qp.input_rows]),
                          _unscale(spec.row, sw), ConeTerm(cone.scale, np.asarray(cone.M, float) / sw, cone.v))
        res = solve_filter_socp(scaled, tol)
        return replace(res, u=None if res.u is None else res.u / sw)

    center = np.atleast_1d(np.asarray(qp.center, float))
    A, b = qp.stacked()

    # phase I: z = (u, sigma), minimize sigma
    nz = m + 1
    terms1 = [_Affine(np.append(A[i], 1.0), float(b[i])) for i in range(A.shape[0])]
    terms1.append(_cone_soc(spec.row, cone, m, nz, sigma_col=m))
    terms1.append(_Affine(np.append(np.zeros(m), 1.0), 1.0))  # sigma >= -1 keeps phase I bounded
    u0 = relaxed.u
    # a wide box on u as well: directions along which every barrier term grows (a free slack
    # column, say) would otherwise make phase I unbounded below
    radius = 1e3 * (1.0 + float(np.max(np.abs(np.concatenate([center, u0])))))
    for j in range(m):
        e = np.zeros(nz)
        e[j] = 1.0
        terms1 += [_Affine(e, radius), _Affine(-e, radius)]
    sigma0 = max(0.0, cone.value(u0) - spec.row.value(u0), float(-(A @ u0 + b).min(initial=0.0))) + 1.0
    cost1 = np.append(np.zeros(m), 1.0)
    z1, converged1, steps1, _ = _barrier_minimize(cost1, terms1, np.append(u0, sigma0), len(terms1) + 1,
                                                  tol, stop=lambda z: z[m] < -1e-6)
    if z1[m] >= -1e-12:
        if not converged1:
            return SolveResult(SolveStatus.MAX_ITERATIONS, None, np.inf, np.inf, steps1)
        return SolveResult(SolveStatus.INFEASIBLE, None, np.inf, np.inf, steps1, violated_row=len(qp.rows))
    u_start = z1[:m]

    # phase II: z = (u, rho), minimize rho
    terms2 = [_Affine(np.append(A[i], 0.0), float(b[i])) for i in range(A.shape[0])]
    terms2.append(_cone_soc(spec.row, cone, m, nz, sigma_col=None))
    # epigraph ||u - center||^2 <= rho
    Y = np.hstack([np.eye(m), np.zeros((m, 1))])
    w = np.zeros(nz)
    w[m] = 1.0
    terms2.append(_Quad(w, 0.0, Y, -center))
    # walk from the phase I point toward the relaxed optimum while staying strictly inside
    feasible = _BarrierSet(terms2[:-1])
    d = np.append(relaxed.u - u_start, 0.0)
    reach = feasible.max_step(np.append(u_start, 0.0), d)
    u_start = u_start + 0.999 * min(1.0, reach) * d[:m]
    rho0 = 2.0 * float(np.sum((u_start - center) ** 2)) + 1.0
    cost2 = np.append(np.zeros(m), 1.0)
    degree = A.shape[0] + 3
    z2, converged, steps2, gap = _barrier_minimize(cost2, terms2, np.append(u_start, rho0), degree, tol)
    u = z2[:m]
    obj = float(np.sum((u - center) ** 2))
    steps = steps1 + steps2
    if not converged:
        return SolveResult(SolveStatus.MAX_ITERATIONS, None, obj, gap, steps)
    return SolveResult(SolveStatus.OPTIMAL, u, obj, gap, steps)


# ---------------------------------------------------------------------------
# opt-in slack relaxation


def relax_qp(spec: QpSpec, weight: float) -> QpSpec:
    """Append a slack ``s >= 0`` to every barrier row (input rows stay hard); cost ``weight * s^2``."""
    m = spec.m
    rows = [AffineConstraintRow(np.append(r.a, 1.0), r.b) for r in spec.rows]
    rows.append(AffineConstraintRow(np.append(np.zeros(m), 1.0), 0.0))
    inputs = [AffineConstraintRow(np.append(r.a, 0.0), r.b) for r in spec.input_rows]
    base_w = np.ones(m) if spec.weights is None else np.asarray(spec.weights, float)
    return QpSpec(np.append(spec.center, 0.0), rows, inputs, np.append(base_w, weight))


def relax_socp(spec: SocpSpec, weight: float) -> SocpSpec:
    qp = relax_qp(spec.qp, weight)
    cone = spec.cone
    M = np.hstack([cone.M, np.zeros((cone.M.shape[0], 1))])
    return SocpSpec(qp, AffineConstraintRow(np.append(spec.row.a, 1.0), spec.row.b),
                    ConeTerm(cone.scale, M, cone.v))
