"""Per-step safety-filter programs assembled from the barrier rows.

``build_program`` turns a filter name plus the current state, estimate and
error bound into a :class:`QpSpec` or :class:`SocpSpec`; ``solve_program``
dispatches to the matching solver.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import barrier as B
from .barrier import BarrierSpec, HocbfChain
from .solvers import (DEFAULT_TOLERANCES, QpSpec, SocpSpec, SolveResult, SolverTolerances,
                      input_rows_from, relax_qp, relax_socp, solve_filter_qp, solve_filter_socp)
from .uncertainty import NominalModel

FILTERS = ("none", "cbf_qp", "hocbf_qp", "ue_cbf_qp", "ue_iss_cbf_qp", "ue_hocbf_qp", "ue_hocbf_socp")
ROBUST_FILTERS = frozenset({"ue_cbf_qp", "ue_iss_cbf_qp", "ue_hocbf_qp", "ue_hocbf_socp"})
HOCBF_FILTERS = frozenset({"hocbf_qp", "ue_hocbf_qp", "ue_hocbf_socp"})

Program = Union[QpSpec, SocpSpec]


def normalize_filter(name: str) -> str:
    key = name.strip().lower().replace("-", "_")
    if key not in FILTERS:
        raise ValueError(f"unknown filter {name!r}; choose from {', '.join(FILTERS)}")
    return key


@dataclass(frozen=True)
class FilterSettings:
    name: str
    compensate: bool = True
    alpha_h: float = 1.0
    sigma_v: float = 1.0
    mu_e: float = 0.0
    gamma_val: float = 0.0
    delta_l: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "name", normalize_filter(self.name))
        if self.name == "ue_iss_cbf_qp":
            B.check_gate(self.sigma_v, self.mu_e, self.alpha_h)

    @property
    def robust(self) -> bool:
        return self.name in ROBUST_FILTERS

    @property
    def compensating(self) -> bool:
        return self.robust and self.compensate


def build_program(settings: FilterSettings, model: NominalModel, barrier: BarrierSpec,
                  chain: Optional[HocbfChain], x, k_d, delta_hat, e_bar: float) -> Optional[Program]:
    """Program over ``u_bar``; ``None`` for the unfiltered case."""
    name = settings.name
    if name == "none":
        return None
    if name in HOCBF_FILTERS and chain is None:
        raise ValueError(f"filter {name} needs a relative-degree-two chain")
    x = np.asarray(x, float)
    delta_hat = np.asarray(delta_hat, float)
    comp = settings.compensating
    offset = model.pinv(x) @ delta_hat if comp else np.zeros(model.m)
    inputs = input_rows_from(*model.input_set.shifted_rows(offset))
    center = np.atleast_1d(np.asarray(k_d, float))

    if name == "cbf_qp":
        row = B.cbf_constraint_nominal(barrier, model, x)
    elif name == "hocbf_qp":
        row = B.hocbf_constraint_nominal(chain, model, x)
    elif name == "ue_cbf_qp":
        row = B.ue_cbf_constraint(barrier, model, x, delta_hat, e_bar, comp)
    elif name == "ue_iss_cbf_qp":
        row = B.ue_iss_cbf_constraint(barrier, model, x, delta_hat, settings.sigma_v, settings.alpha_h,
                                      settings.mu_e, settings.gamma_val, comp)
    elif name == "ue_hocbf_qp":
        row = B.ue_hocbf_qp_row(chain, model, x, delta_hat, e_bar, settings.delta_l, comp)
    else:  # ue_hocbf_socp
        row, cone = B.ue_hocbf_terms(chain, model, x, delta_hat, e_bar, settings.delta_l, comp)
        return SocpSpec(QpSpec(center, (), inputs), row, cone)
    return QpSpec(center, (row,), inputs)


def solve_program(prog: Program, tol: SolverTolerances = DEFAULT_TOLERANCES) -> SolveResult:
    if isinstance(prog, SocpSpec):
        return solve_filter_socp(prog, tol)
    return solve_filter_qp(prog, tol)


def relax_program(prog: Program, weight: float) -> Program:
    if isinstance(prog, SocpSpec):
        return relax_socp(prog, weight)
    return relax_qp(prog, weight)


def constraint_margin(prog: Program, u_bar) -> float:
    """Smallest slack of the barrier condition at ``u_bar`` (input rows excluded)."""
    u_bar = np.atleast_1d(u_bar)
    if isinstance(prog, SocpSpec):
        return prog.row.value(u_bar) - prog.cone.value(u_bar)
    if not prog.rows:
        return np.inf
    return min(r.value(u_bar) for r in prog.rows)
