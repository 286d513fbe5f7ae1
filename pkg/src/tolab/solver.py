"""Minimisers of the discrete energy.

``solve_pdas`` is a primal-dual active-set iteration over the partition of the
thin nodes into P (flux pinned to lam_plus), N (flux pinned to -lam_minus) and
Z (value pinned to 0). ``solve_fista`` is an accelerated, Jacobi-scaled
proximal gradient method with adaptive restart; PDAS falls back to it when a
partition repeats.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .energy import (
    DiscreteEnergy,
    energy_value,
    flux_residual,
    interior_residual,
    prox_thin,
    stiffness_matrix,
)
from .grid import Field, Grid

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class CyclingError(SolverError):
    pass


@dataclass(frozen=True)
class SolveOptions:
    kkt_tol: float = 1e-8
    max_outer_iters: int = 200
    linear_solver: str = "direct"  # or "cg"
    cg_rtol: float = 1e-10
    fallback: bool = True
    fista_tol: float = 1e-11
    fista_max_iters: int = 200_000
    energy_rtol: float = 1e-14
    move_tol: float = 1e-2  # fraction of kkt_tol used as slack when moving Z nodes

    def __post_init__(self):
        if min(self.kkt_tol, self.cg_rtol, self.fista_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if self.linear_solver not in ("direct", "cg"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")


@dataclass
class SolveReport:
    field: Field
    energy: float
    max_inclusion_residual: float
    interior_residual: float
    iterations: int
    partition_history: list[tuple[int, int, int]]
    solver: str
    wall_time: float
    converged: bool
    flags: list[str] = field(default_factory=list)

    @property
    def u(self) -> np.ndarray:
        return self.field.values

    def summary(self) -> dict:
        return {
            "energy": self.energy,
            "max_inclusion_residual": self.max_inclusion_residual,
            "interior_residual": self.interior_residual,
            "iterations": self.iterations,
            "partition_sizes": [list(p) for p in self.partition_history],
            "solver": self.solver,
            "wall_time": self.wall_time,
            "converged": self.converged,
            "flags": list(self.flags),
        }


def _linsolve(K: sp.spmatrix, rhs: np.ndarray, opts: SolveOptions) -> np.ndarray:
    if K.shape[0] == 0:
        return np.zeros(0)
    if opts.linear_solver == "direct":
        x = spla.spsolve(K.tocsc(), rhs)
        if not np.all(np.isfinite(x)):
            raise SolverError("sparse direct solve broke down")
        return x
    d = K.diagonal()
    M = sp.diags(1.0 / d)
    x, info = spla.cg(K, rhs, rtol=opts.cg_rtol, atol=0.0, M=M, maxiter=20 * K.shape[0])
    if info != 0:
        raise SolverError(f"preconditioned CG did not converge (info={info})")
    return x


def _finish(E, u_full, opts, solver, iters, history, t0, converged=True) -> SolveReport:
    p = E.problem
    fv = flux_residual(E, u_full)
    flags = []
    if fv.u.size and np.all(fv.u == 0.0):
        flags.append("coincidence-everywhere")
    rep = SolveReport(
        field=Field(E.grid, u_full),
        energy=energy_value(E, u_full),
        max_inclusion_residual=fv.max_residual / p.lam_max,
        interior_residual=interior_residual(E, u_full),
        iterations=iters,
        partition_history=history,
        solver=solver,
        wall_time=time.perf_counter() - t0,
        converged=converged,
        flags=flags,
    )
    return rep


def _partition_sizes(code: np.ndarray) -> tuple[int, int, int]:
    return (int(np.sum(code > 0)), int(np.sum(code < 0)), int(np.sum(code == 0)))


def pdas_partition_from(E: DiscreteEnergy, u) -> np.ndarray:
    """Sign code (+1 P, -1 N, 0 Z) of the thin values of ``u``."""
    v = u.values if isinstance(u, Field) else np.asarray(u)
    t = v[E.thin]
    return np.sign(t).astype(np.int8)


def solve_partition(E: DiscreteEnergy, code: np.ndarray, opts: SolveOptions | None = None) -> np.ndarray:
    """Solve the linear system attached to a fixed partition; returns the full nodal vector."""
    opts = opts or SolveOptions()
    p = E.problem
    nf = len(E.free)
    tpos = E.thin_in_free
    unknown = np.ones(nf, dtype=bool)
    unknown[tpos[code == 0]] = False
    rhs = -E.lift.copy()
    rhs[tpos[code > 0]] -= E.thin_mass[code > 0] * p.lam_plus
    rhs[tpos[code < 0]] += E.thin_mass[code < 0] * p.lam_minus
    U = np.flatnonzero(unknown)
    K = E.A_ff[U][:, U]
    uf = np.zeros(nf)
    uf[U] = _linsolve(K, rhs[U], opts)
    return E.full(uf)


def _pdas_loop(E, code, opts, history, t0, detect_cycles=True):
    p = E.problem
    seen = {code.tobytes()}
    slack = opts.move_tol * opts.kkt_tol * p.lam_max
    for sweep in range(1, opts.max_outer_iters + 1):
        u = solve_partition(E, code, opts)
        history.append(_partition_sizes(code))
        ut = u[E.thin]
        f = -(E.A @ u)[E.thin] / E.thin_mass
        new = code.copy()
        new[(code > 0) & (ut < 0)] = 0
        new[(code < 0) & (ut > 0)] = 0
        z = code == 0
        new[z & (f > p.lam_plus + slack)] = 1
        new[z & (f < -p.lam_minus - slack)] = -1
        if np.array_equal(new, code):
            return u, sweep, True
        key = new.tobytes()
        if detect_cycles and key in seen:
            raise CyclingError(f"PDAS partition repeated after {sweep} sweeps")
        seen.add(key)
        code = new
    return u, opts.max_outer_iters, False


def solve_pdas(E: DiscreteEnergy, opts: SolveOptions | None = None, initial=None) -> SolveReport:
    """Primal-dual active-set minimisation; falls back to FISTA on cycling."""
    opts = opts or SolveOptions()
    t0 = time.perf_counter()
    if initial is None:
        code = np.zeros(len(E.thin), dtype=np.int8)
    else:
        code = pdas_partition_from(E, initial)
    history: list[tuple[int, int, int]] = []
    try:
        u, iters, ok = _pdas_loop(E, code, opts, history, t0)
        if ok:
            return _finish(E, u, opts, "pdas", iters, history, t0)
        reason = "iteration cap"
    except CyclingError as exc:
        reason = str(exc)
    if not opts.fallback:
        raise SolverError(f"PDAS failed: {reason}")
    log.info("PDAS fallback to FISTA (%s)", reason)
    fr = solve_fista(E, opts)
    code = pdas_partition_from(E, fr.field)
    n_before = len(history)
    try:
        u, iters, ok = _pdas_loop(E, code, opts, history, t0, detect_cycles=False)
    except SolverError:
        ok = False
    if not ok:
        rep = _finish(E, fr.u, opts, "fista", fr.iterations, history, t0, fr.converged)
        rep.flags.append("pdas-fallback")
        return rep
    rep = _finish(E, u, opts, "pdas+fista", n_before + iters, history, t0)
    rep.flags.append("pdas-fallback")
    return rep


def _power_iteration(E: DiscreteEnergy, d: np.ndarray, iters: int = 60) -> float:
    rng = np.random.default_rng(0)
    x = rng.standard_normal(len(d))
    s = 1.0 / np.sqrt(d)
    lam = 0.0
    for _ in range(iters):
        y = s * (E.A_ff @ (s * x))
        lam = float(np.linalg.norm(y) / np.linalg.norm(x))
        x = y
    return lam


def solve_fista(E: DiscreteEnergy, opts: SolveOptions | None = None, initial=None) -> SolveReport:
    """Accelerated proximal gradient on J_h with a diagonal (Jacobi) metric.

    Stops once the prox-gradient step is below ``fista_tol`` relative to the
    iterate size, or once the energy stalls to ``energy_rtol`` over a check
    window. Raises SolverError when ``fista_max_iters`` is exceeded.
    """
    opts = opts or SolveOptions()
    t0 = time.perf_counter()
    p = E.problem
    A = E.A_ff
    lift = E.lift
    d = A.diagonal()
    tpos = E.thin_in_free
    m = E.thin_mass
    L = 2.0 * min(1.05 * _power_iteration(E, d), 2.0)
    step = 1.0 / L
    scale = step / d
    thin_step = 2.0 * scale[tpos]

    if initial is None:
        x = np.zeros(len(E.free))
    else:
        v = initial.values if isinstance(initial, Field) else np.asarray(initial)
        x = v[E.free].copy() if v.size == E.grid.num_nodes else v.copy()
    y = x.copy()
    t = 1.0
    last_energy = np.inf
    check = 50
    bscale = max(float(np.max(np.abs(E.dirichlet))), 1.0)
    for k in range(1, opts.fista_max_iters + 1):
        g = 2.0 * (A @ y + lift)
        v = y - scale * g
        xn = v
        xn[tpos] = prox_thin(v[tpos], thin_step, p.lam_plus, p.lam_minus, m)
        step_len = float(np.max(np.abs(xn - y)))
        if np.dot((y - xn) * d, xn - x) > 0.0:
            t = 1.0
            y = xn.copy()
        else:
            tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = xn + ((t - 1.0) / tn) * (xn - x)
            t = tn
        x = xn
        if step_len <= opts.fista_tol * max(bscale, float(np.max(np.abs(x)))):
            return _finish(E, E.full(x), opts, "fista", k, [], t0)
        if k % check == 0:
            en = energy_value(E, E.full(x))
            if abs(last_energy - en) <= opts.energy_rtol * max(abs(en), 1e-300):
                return _finish(E, E.full(x), opts, "fista", k, [], t0)
            last_energy = en
    raise SolverError(f"FISTA exceeded {opts.fista_max_iters} iterations")


def harmonic_replacement(
    g: Grid,
    a: float,
    boundary: Field,
    region: np.ndarray | None = None,
    opts: SolveOptions | None = None,
) -> Field:
    """Discrete solution of div(|x_n|^a grad v) = 0 on ``region``.

    Values outside ``region`` are taken from ``boundary``. Thin nodes inside
    the region get the natural zero-flux condition (even reflection).
    """
    opts = opts or SolveOptions()
    if abs(a - g.a) > 0:
        raise ValueError("weight exponent does not match the grid")
    if boundary.grid is not g and boundary.grid.spec != g.spec:
        raise ValueError("boundary field lives on a different grid")
    R = np.asarray(g.free if region is None else region, dtype=int)
    if np.any(np.isin(R, g.boundary)):
        raise ValueError("region must not contain outer-boundary nodes")
    A = stiffness_matrix(g)
    v = boundary.values.copy()
    v[R] = 0.0
    rhs = -(A @ v)[R]
    K = A[R][:, R]
    v[R] = _linsolve(K, rhs, opts)
    return Field(g, v)


def check_comparison(u, v, tol: float = 1e-10) -> tuple[bool, float]:
    """True iff u <= v + tol at every node; also the largest violation max(u - v, 0)."""
    fu = u.field if isinstance(u, SolveReport) else u
    fv = v.field if isinstance(v, SolveReport) else v
    if fu.grid.spec != fv.grid.spec:
        raise ValueError("comparison needs fields on the same grid")
    viol = float(max(np.max(fu.values - fv.values), 0.0))
    return viol <= tol, viol
