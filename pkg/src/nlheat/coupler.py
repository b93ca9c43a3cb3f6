"""Explicit Robin-Dirichlet partitioned driver for the coupled problem.

One time step, in order: (a) extract the Robin datum from the previous
local solution, (b) backward-Euler solve of the nonlocal subproblem with
that datum, (c) trace the new nonlocal solution onto the local interface
nodes, (d) backward-Euler solve of the local subproblem with those
Dirichlet values.  The local data lags by one step, which is what makes
the scheme explicit (and what the Robin coefficient stabilizes).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fem as fem_mod
from . import nonlocal_heat as nl_mod
from .cases import ManufacturedCase
from .geometry import COLLAR_DIRICHLET
from .linalg import sparse_factor
from .transfer import TransferOperators, robin_loading

DIVERGENCE_LIMIT = 1e12


class CouplingError(RuntimeError):
    pass


@dataclass
class CoupledSystem:
    nlsys: nl_mod.NonlocalSystem
    femsys: fem_mod.FemSystem
    ops: TransferOperators
    beta: float
    dt: float
    rload: object = None
    lu_nl: object = None
    lu_l: object = None

    def __post_init__(self):
        if self.rload is None:
            self.rload = robin_loading(self.ops, self.beta)
        if self.lu_nl is None:
            self.lu_nl = sparse_factor(self.nlsys.matrix(self.dt, self.beta))
        if self.lu_l is None:
            self.lu_l = sparse_factor(fem_mod.step_matrix(self.femsys, self.dt))

    def with_beta(self, beta: float) -> "CoupledSystem":
        return CoupledSystem(
            nlsys=self.nlsys, femsys=self.femsys, ops=self.ops,
            beta=beta, dt=self.dt, lu_l=self.lu_l,
        )


@dataclass
class CoupledState:
    u_nl: np.ndarray
    u_l: np.ndarray
    t: float
    k: int


def initial_state(system: CoupledSystem, case: ManufacturedCase | None) -> CoupledState:
    nl_pts = system.nlsys.cloud.points
    l_pts = system.femsys.mesh.nodes
    if case is None:
        return CoupledState(np.zeros(len(nl_pts)), np.zeros(len(l_pts)), 0.0, 0)
    return CoupledState(
        np.asarray(case.u_ic(nl_pts[:, 0], nl_pts[:, 1]), float),
        np.asarray(case.u_ic(l_pts[:, 0], l_pts[:, 1]), float),
        0.0, 0,
    )


def coupled_step(system: CoupledSystem, state: CoupledState,
                 case: ManufacturedCase | None) -> CoupledState:
    """Advance one step; with case=None the data are homogeneous."""
    nlsys = system.nlsys
    femsys = system.femsys
    dt = system.dt
    t_next = state.t + dt
    pts = nlsys.cloud.points

    # (a) Robin datum from the lagged local solution
    rhs_nl = system.rload @ state.u_l
    # nonlocal load and previous-state terms
    active = np.ones(nlsys.n, dtype=bool)
    active[nlsys.dirichlet] = False
    if case is not None:
        f_all = case.f_nl(pts[:, 0], pts[:, 1], t_next)
        rhs_nl[active] += (nlsys.mass * f_all)[active]
        xd = pts[nlsys.dirichlet]
        rhs_nl[nlsys.dirichlet] = case.u_dirichlet_nl(xd[:, 0], xd[:, 1], t_next)
    else:
        rhs_nl[nlsys.dirichlet] = 0.0
    rhs_nl[active] += (nlsys.mass * state.u_nl)[active] / dt

    # (b) nonlocal solve
    try:
        u_nl = system.lu_nl.solve(rhs_nl)
    except RuntimeError as exc:
        raise CouplingError(f"step (b) nonlocal solve failed: {exc}") from exc

    # (c) Dirichlet trace onto the interface nodes
    ivals = (system.ops.sigma2 @ u_nl)[femsys.interface_nodes]

    # (d) local solve
    if case is not None:
        load = fem_mod.load_vector(femsys.mesh, case.f_l, t_next)
        xd = femsys.mesh.nodes[femsys.dirichlet_nodes]
        dvals = np.asarray(case.u_dirichlet_l(xd[:, 0], xd[:, 1], t_next), float)
    else:
        load = np.zeros(femsys.n)
        dvals = np.zeros(len(femsys.dirichlet_nodes))
    rhs_l = femsys.mass @ state.u_l / dt + load
    rhs_l[femsys.interface_nodes] = ivals
    rhs_l[femsys.dirichlet_nodes] = dvals
    try:
        u_l = system.lu_l.solve(rhs_l)
    except RuntimeError as exc:
        raise CouplingError(f"step (d) local solve failed: {exc}") from exc

    return CoupledState(u_nl=u_nl, u_l=u_l, t=t_next, k=state.k + 1)


@dataclass
class RunReport:
    h: float
    delta: float
    dt: float
    beta: float
    err_inf_nl: float
    err_inf_l: float
    err_l2_nl: float
    err_l2_l: float
    diverged: bool
    diverged_step: int = -1
    state: CoupledState = field(default=None, repr=False)


def run_coupled(system: CoupledSystem, case: ManufacturedCase, t_final: float,
                keep_state: bool = False) -> RunReport:
    """Advance to t_final and compare with the analytic local limits.

    Divergence (non-finite state or magnitude beyond 1e12) is a reportable
    outcome: errors come back NaN with the flag raised.
    """
    dt = system.dt
    n_steps = int(round(t_final / dt))
    if abs(n_steps * dt - t_final) > 1e-9 * t_final:
        raise CouplingError(f"dt={dt} does not divide t_final={t_final}")
    state = initial_state(system, case)
    diverged = False
    dstep = -1
    for _ in range(n_steps):
        state = coupled_step(system, state, case)
        m = max(np.abs(state.u_nl).max(initial=0.0), np.abs(state.u_l).max(initial=0.0))
        if not np.isfinite(m) or m > DIVERGENCE_LIMIT:
            diverged = True
            dstep = state.k
            break

    cloud = system.nlsys.cloud
    mesh = system.femsys.mesh
    h = cloud.h
    nan = float("nan")
    if diverged:
        return RunReport(h, cloud.delta, dt, system.beta, nan, nan, nan, nan,
                         True, dstep, state if keep_state else None)
    mask = cloud.labels != COLLAR_DIRICHLET
    ex_nl = case.u0(cloud.points[:, 0], cloud.points[:, 1], state.t)
    e_nl = np.abs(state.u_nl - ex_nl)[mask]
    ex_l = case.u_l(mesh.nodes[:, 0], mesh.nodes[:, 1], state.t)
    e_l = state.u_l - ex_l
    l2_nl = float(np.sqrt(np.sum(e_nl**2) * h * h))
    l2_l = float(np.sqrt(e_l @ (system.femsys.mass @ e_l)))
    return RunReport(
        h=h, delta=cloud.delta, dt=dt, beta=system.beta,
        err_inf_nl=float(e_nl.max()), err_inf_l=float(np.abs(e_l).max()),
        err_l2_nl=l2_nl, err_l2_l=l2_l, diverged=False,
        state=state if keep_state else None,
    )
