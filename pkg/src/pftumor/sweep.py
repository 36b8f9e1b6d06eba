"""ε-sweeps: well-prepared initial data, families of runs and a per-ε report."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from . import diagnostics as diag
from .grid import Grid
from .model import (GlobalTimeStatus, ModelSpec, Potential, Problem, check_assumptions,
                    mass_confinement_bound, precheck_global_time)
from .solver import SolverError, StepConfig, initial_state, run

log = logging.getLogger(__name__)


class GeometryError(ValueError):
    pass


class SweepError(RuntimeError):
    """A run of the sweep failed; ``partial`` holds the rows completed so far."""

    def __init__(self, message, epsilon, partial):
        super().__init__(f"epsilon={epsilon:g}: {message}")
        self.epsilon = epsilon
        self.partial = partial


# --- geometry -------------------------------------------------------------


@dataclass(frozen=True)
class Circle:
    center: tuple = (0.5, 0.5)
    radius: float = 0.25

    def signed_distance(self, grid: Grid):
        X, Y = grid.coords()
        return self.radius - np.hypot(X - self.center[0], Y - self.center[1])

    def clearance(self, lengths):
        (cx, cy), R = self.center, self.radius
        return min(cx - R, lengths[0] - cx - R, cy - R, lengths[1] - cy - R)


@dataclass(frozen=True)
class Stripe:
    """Band ``|x - position| < width/2`` (1D: an interval); without a width,
    the half space ``x < position``."""
    position: float = 0.5
    width: Optional[float] = None

    def signed_distance(self, grid: Grid):
        X = grid.coords()[0] if grid.dim == 2 else grid.x
        if self.width is None:
            return self.position - X
        return 0.5 * self.width - np.abs(X - self.position)

    def clearance(self, lengths):
        if self.width is None:
            return min(self.position, lengths[0] - self.position)
        return min(self.position - 0.5 * self.width, lengths[0] - self.position - 0.5 * self.width)


@dataclass(frozen=True)
class Circles:
    circles: tuple

    def signed_distance(self, grid: Grid):
        return np.max([c.signed_distance(grid) for c in self.circles], axis=0)

    def clearance(self, lengths):
        gap = min(c.clearance(lengths) for c in self.circles)
        cs = self.circles
        for i in range(len(cs)):
            for j in range(i + 1, len(cs)):
                d = math.dist(cs[i].center, cs[j].center) - cs[i].radius - cs[j].radius
                gap = min(gap, d)
        return gap


Geometry = Union[Circle, Stripe, Circles]


def optimal_profile(potential: Potential, s_max: float = 30.0):
    """Optimal transition profile ``q' = sqrt(2F(q))``, ``q(0) = 0``.

    Returns a vectorised callable.  For quartic wells ``a(1-u^2)^2`` the
    closed form ``tanh(sqrt(2a) s)`` is used; otherwise the ODE is
    integrated in both directions and splined.
    """
    name = potential.name
    if name.startswith("quartic"):
        a = potential.value(0.0)
        k = math.sqrt(2.0 * a)
        return lambda s: np.tanh(k * np.asarray(s, dtype=float))

    def rhs(_, q):
        # clip to the wells: past u = 1 the right-hand side is positive again
        return np.sqrt(2.0 * np.maximum(potential.value(np.clip(q, -1.0, 1.0)), 0.0))

    s = np.linspace(0.0, s_max, 3001)
    up = solve_ivp(rhs, (0, s_max), [0.0], t_eval=s, rtol=1e-10, atol=1e-12).y[0]
    down = solve_ivp(lambda t, q: -rhs(t, q), (0, s_max), [0.0], t_eval=s,
                     rtol=1e-10, atol=1e-12).y[0]
    up, down = np.clip(up, -1.0, 1.0), np.clip(down, -1.0, 1.0)
    spline = CubicSpline(np.concatenate((-s[:0:-1], s)), np.concatenate((down[:0:-1], up)))
    return lambda x: spline(np.clip(np.asarray(x, dtype=float), -s_max, s_max))


def well_prepared_initial(geometry: Geometry, spec: ModelSpec, grid: Grid,
                          clearance: float = 3.0):
    """``phi0 = q(d / eps)`` with ``d`` the signed distance to ``geometry``
    (positive inside).  The geometry must keep ``clearance * eps`` away from
    the boundary and from itself."""
    gap = geometry.clearance(grid.lengths)
    if gap < clearance * spec.epsilon:
        raise GeometryError(f"geometry clearance {gap:.4g} is below "
                            f"{clearance:g}*epsilon = {clearance * spec.epsilon:.4g}")
    q = optimal_profile(spec.potential)
    return q(geometry.signed_distance(grid) / spec.epsilon)


# --- sweep plan and report --------------------------------------------------


def grid_size(length: float, h_ratio: float, epsilon: float) -> int:
    """Cells along an axis of ``length`` so that ``epsilon / h >= h_ratio``."""
    # guard against ceil(6.000000000000001)
    return int(math.ceil(round(length * h_ratio / epsilon, 9)))


def convergence_order(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.size < 3:
        raise ValueError("need at least three (x, y) pairs")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("convergence_order needs positive data")
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


@dataclass
class SweepPlan:
    epsilons: Sequence[float]
    spec: ModelSpec                # epsilon of the base spec is replaced per run
    geometry: Geometry = field(default_factory=Circle)
    sigma0: float = 0.8
    h_ratio: float = 6.0
    c_dt: float = 0.5
    stabilization: float = 2.0
    n_steps: Optional[int] = None  # overrides T / (c_dt eps^3) when set
    snapshot_stride: int = 0       # steps between Hölder snapshots (0: ~20 per run)
    clearance: float = 3.0
    fixed_point_tol: float = 1e-12
    max_inner_iterations: int = 200
    tol_box: float = 1e-9

    def __post_init__(self):
        eps = [float(e) for e in self.epsilons]
        if not eps or any(e <= 0 for e in eps):
            raise ValueError("epsilons must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilons must be strictly decreasing")
        if self.h_ratio < 6:
            raise ValueError("h_ratio must be at least 6")
        if self.c_dt <= 0:
            raise ValueError("c_dt must be positive")
        if not 0 <= self.sigma0 <= 1:
            raise ValueError("sigma0 must lie in [0, 1]")
        self.epsilons = eps

    def spec_for(self, eps: float) -> ModelSpec:
        return replace(self.spec, epsilon=eps, theta=None)

    def grid_for(self, eps: float) -> Grid:
        L = self.spec.lengths
        return Grid.uniform(L, tuple(grid_size(l, self.h_ratio, eps) for l in L)
                            if len(L) == 2 else grid_size(L[0], self.h_ratio, eps))

    def time_steps(self, eps: float):
        T = self.spec.T
        n = self.n_steps or max(1, math.ceil(round(T / (self.c_dt * eps ** 3), 9)))
        return n, T / n


REPORT_COLUMNS = (
    "epsilon", "n_x", "n_y", "dt", "n_steps", "initial_energy", "final_energy",
    "w_distance", "gt_residual", "max_disc_pos", "max_disc_ratio",
    "energy_perimeter_ratio", "interface_length", "max_abs_mass_phi",
    "mass_sum_drift", "critical_time", "holder_chi", "holder_phi",
    "eb_residual_final", "max_phase_deviation_ratio",
)


@dataclass
class SweepReport:
    rows: list = field(default_factory=list)        # dicts keyed by REPORT_COLUMNS
    E0: float = math.nan                             # shared initial energy bound
    c0: float = math.nan
    global_time: Optional[GlobalTimeStatus] = None   # Problem P only
    m0: float = math.nan
    orders: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)       # epsilon -> DiagnosticsTrace
    finals: dict = field(default_factory=dict)       # epsilon -> (State, Grid)

    def column(self, name):
        return [r[name] for r in self.rows]

    def as_table(self):
        return [tuple(r[c] for c in REPORT_COLUMNS) for r in self.rows]


def _indicator(phi):
    return (np.asarray(phi) > 0).astype(float)


def _run_one(plan: SweepPlan, eps: float, phi0, grid: Grid, spec: ModelSpec, sink=None):
    n_steps, dt = plan.time_steps(eps)
    cfg = StepConfig(dt=dt, stabilization=plan.stabilization,
                     fixed_point_tol=plan.fixed_point_tol,
                     max_inner_iterations=plan.max_inner_iterations, tol_box=plan.tol_box)
    state = initial_state(phi0, plan.sigma0, spec, grid)
    stride = plan.snapshot_stride or max(1, n_steps // 20)
    times, chis, phis = [], [], []

    def holder_obs(k, st):
        times.append(st.t)
        chis.append(_indicator(st.phi))
        phis.append(st.phi.copy())

    start = time.perf_counter()
    traj = run(state, spec, cfg, grid, n_steps, observers=[holder_obs], stride=stride,
               on_record=sink)
    wall = time.perf_counter() - start
    tr, final = traj.trace, traj.final

    E = np.asarray(tr.energy)
    row = {
        "epsilon": eps, "n_x": grid.n_x, "n_y": grid.n_y, "dt": dt, "n_steps": n_steps,
        "initial_energy": float(E[0]), "final_energy": float(E[-1]),
        "w_distance": diag.w_distance_to_limit(final.phi, spec, grid),
        "max_disc_pos": float(np.max(tr.disc_pos)),
        "max_disc_ratio": float(np.max(np.asarray(tr.disc_pos) / np.maximum(E, 1e-300))),
        "max_abs_mass_phi": float(np.max(np.abs(tr.mass_phi))),
        "mass_sum_drift": float(np.max(np.abs(np.asarray(tr.mass_sum) - tr.mass_sum[0]))),
        "critical_time": diag.critical_time(tr, spec.problem, spec.omega_measure, spec.T),
        "holder_chi": diag.holder_quotient(times, chis, 1 / 8, grid, "L1") if len(chis) > 1 else 0.0,
        "holder_phi": diag.holder_quotient(times, phis, 1 / 16, grid, "L2") if len(phis) > 1 else 0.0,
        "eb_residual_final": float(tr.eb_residual[-1]),
        "max_phase_deviation_ratio": tr.phase_deviation_ratio(),
        "wall_time": wall,
    }
    if grid.dim == 2:
        try:
            curve = diag.extract_interface(final.phi, grid)
            row["interface_length"] = curve.length
            row["energy_perimeter_ratio"] = float(E[-1]) / (2 * spec.theta * curve.length)
            row["gt_residual"] = diag.gibbs_thomson_residual(curve, final.mu, spec.theta, grid)
        except diag.EmptyInterfaceError:
            log.info("epsilon=%g: no interface in the final state", eps)
            row.update(interface_length=0.0, energy_perimeter_ratio=math.nan,
                       gt_residual=math.nan)
    else:
        row.update(interface_length=math.nan, energy_perimeter_ratio=math.nan,
                   gt_residual=math.nan)
    return row, tr, final


def run_sweep(plan: SweepPlan, check: bool = True, trace_sink=None) -> SweepReport:
    """Run every ε of ``plan`` on the same physical setup.

    ``trace_sink(eps)``, if given, returns a callable receiving the trace
    rows of that run as they are recorded.

    Raises :class:`SweepError` carrying the partial report if a run aborts.
    """
    if check:
        report = check_assumptions(plan.spec_for(plan.epsilons[0]))
        if not report.ok:
            raise ValueError("model hypotheses fail:\n" + report.format())

    setups = []
    for eps in plan.epsilons:
        spec, grid = plan.spec_for(eps), plan.grid_for(eps)
        phi0 = well_prepared_initial(plan.geometry, spec, grid, plan.clearance)
        setups.append((eps, spec, grid, phi0))

    out = SweepReport()
    E0s = [diag.energy(p, s, g) + 0.5 * plan.sigma0 ** 2 * g.measure for _, s, g, p in setups]
    out.E0 = max(E0s)
    out.c0 = max(abs(g.average(p)) for _, _, g, p in setups)
    base = plan.spec
    if base.problem is Problem.P and out.c0 < 1:
        d0 = max(abs(g.average(p) + plan.sigma0) for _, _, g, p in setups)
        consts = (base.potential.c_F, base.potential.C_F, base.proliferation.C_P)
        out.global_time = precheck_global_time(base.T, out.E0, out.c0, d0,
                                               base.omega_measure, consts)
        out.m0 = mass_confinement_bound(out.global_time, base.T, out.E0, out.c0, d0,
                                        base.omega_measure, consts)

    for eps, spec, grid, phi0 in setups:
        log.info("epsilon=%g: grid %dx%d, %d steps", eps, grid.n_x, grid.n_y,
                 plan.time_steps(eps)[0])
        try:
            sink = trace_sink(eps) if trace_sink else None
            row, tr, final = _run_one(plan, eps, phi0, grid, spec, sink)
        except SolverError as exc:
            raise SweepError(str(exc), eps, out) from exc
        out.rows.append(row)
        out.traces[eps] = tr
        out.finals[eps] = (final, grid)

    eps = out.column("epsilon")
    for name in ("w_distance", "max_disc_ratio", "gt_residual"):
        ys = out.column(name)
        if len(ys) >= 3 and all(np.isfinite(y) and y > 0 for y in ys):
            out.orders[name] = convergence_order(eps, ys)
    return out
