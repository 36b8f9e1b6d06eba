"""Linearly implicit, stabilised time stepping for Problems P and H.

One step solves

    (phi1 - phi0)/dt = Δmu1 + q
    mu1 = -eps Δphi1 + (F'(phi0) + s (phi1 - phi0)) / eps
    (sigma1 - sigma0)/dt = Δsigma1 + S

with ``q = P(phi0)(sigma1 - mu1) = -S`` for Problem P and
``q = (sigma1 - 1) H(phi0)``, ``S = -sigma1 H(phi0)`` for Problem H.  Given the
exchange term ``q`` both diffusion solves are diagonal in the cosine basis,
so the Problem P coupling is reduced to a linear equation for ``q`` alone.
Because ``phi`` and ``sigma`` receive exactly ``+q`` and ``-q``, the mean of
``phi + sigma`` is conserved to roundoff whatever the inner tolerance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .grid import Grid
from .model import ModelSpec, Problem

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    step: Optional[int] = None

    def with_step(self, step: int) -> "SolverError":
        self.step = step
        self.args = (f"step {step}: {self.args[0]}",) + self.args[1:]
        return self


class StepError(SolverError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class BlowUpError(SolverError):
    pass


class MaximumPrincipleError(SolverError):
    pass


@dataclass
class State:
    t: float
    phi: np.ndarray
    sigma: np.ndarray
    mu: np.ndarray


@dataclass
class StepConfig:
    dt: float
    stabilization: float = 2.0
    fixed_point_tol: float = 1e-12
    max_inner_iterations: int = 200
    tol_box: float = 1e-9
    # test mode: phi is held fixed and mu is its chemical potential
    freeze_phi: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.stabilization < 0:
            raise ValueError("stabilization must be nonnegative")
        if self.fixed_point_tol <= 0 or self.max_inner_iterations < 1:
            raise ValueError("invalid inner iteration settings")


def min_stabilization(spec: ModelSpec, lo: float = -1.2, hi: float = 1.2) -> float:
    """Half the supremum of ``F''`` on the expected range; the stabilised
    step is energy decreasing (sources off) for ``s`` at or above this."""
    u = np.linspace(lo, hi, 2001)
    return 0.5 * float(np.max(spec.potential.deriv2(u)))


def chemical_potential(phi, spec: ModelSpec, grid: Grid):
    return -spec.epsilon * grid.laplacian(phi) + spec.potential.deriv(phi) / spec.epsilon


def initial_state(phi0, sigma0, spec: ModelSpec, grid: Grid, t: float = 0.0) -> State:
    phi0 = np.array(phi0, dtype=float)
    sigma0 = np.broadcast_to(np.asarray(sigma0, dtype=float), grid.shape).copy()
    if phi0.shape != grid.shape:
        raise ValueError(f"phi0 has shape {phi0.shape}, grid expects {grid.shape}")
    return State(t, phi0, sigma0, chemical_potential(phi0, spec, grid))


class _PhaseSolver:
    """Cosine-space solves of the phase/potential pair and the nutrient heat step."""

    def __init__(self, grid: Grid, spec: ModelSpec, cfg: StepConfig):
        lam = grid.eigenvalues
        eps, s, dt = spec.epsilon, cfg.stabilization, cfg.dt
        self.grid, self.dt = grid, dt
        self.lam = lam
        self.k = eps * lam + s / eps
        self.phase_den = 1.0 + dt * lam * self.k
        self.heat_den = 1.0 + dt * lam

    def phase(self, phi0, g, q):
        """phi1 - dt Δmu1 = phi0 + dt q,  mu1 = -eps Δphi1 + (s/eps) phi1 + g."""
        G = self.grid
        ghat = G.dct(g)
        phat = (G.dct(phi0 + self.dt * q) - self.dt * self.lam * ghat) / self.phase_den
        return G.idct(phat), G.idct(self.k * phat + ghat)

    def heat(self, sigma0, q):
        """sigma1 - dt Δsigma1 = sigma0 - dt q."""
        G = self.grid
        return G.idct(G.dct(sigma0 - self.dt * q) / self.heat_den)

    def linear_response(self, q):
        """(sigma1 - mu1) caused by q alone."""
        G = self.grid
        qhat = G.dct(q) * self.dt
        mu = self.k * qhat / self.phase_den
        sig = -qhat / self.heat_den
        return G.idct(sig - mu)


def _check_finite(*fields):
    for f in fields:
        if not np.all(np.isfinite(f)):
            raise BlowUpError("non-finite values produced; reduce dt")


def _frozen_sigma(state, spec, cfg, grid, coeff, rhs_extra):
    dt = cfg.dt
    rhs = state.sigma / dt + rhs_extra
    return grid.solve_helmholtz(1.0 / dt, coeff, rhs, tol=max(cfg.fixed_point_tol, 1e-13))


def step_P(state: State, spec: ModelSpec, cfg: StepConfig, grid: Grid,
           solver: Optional[_PhaseSolver] = None) -> State:
    """One step of Problem P (proliferation source ``P(phi)(sigma - mu)``)."""
    eps, s, dt = spec.epsilon, cfg.stabilization, cfg.dt
    P = spec.proliferation.value(state.phi)

    if cfg.freeze_phi:
        mu = chemical_potential(state.phi, spec, grid)
        sigma = _frozen_sigma(state, spec, cfg, grid, P, P * mu)
        _check_finite(sigma)
        return State(state.t + dt, state.phi.copy(), sigma, mu)

    solver = solver or _PhaseSolver(grid, spec, cfg)
    g = (spec.potential.deriv(state.phi) - s * state.phi) / eps
    zero = np.zeros(grid.shape)
    phi_a, mu_a = solver.phase(state.phi, g, zero)
    sigma_a = solver.heat(state.sigma, zero)
    b = P * (sigma_a - mu_a)

    if not np.any(P):
        q = zero
    else:
        shape, n = grid.shape, P.size

        def matvec(v):
            v = v.reshape(shape)
            return (v - P * solver.linear_response(v)).ravel()

        A = LinearOperator((n, n), matvec=matvec, dtype=float)
        bn = float(np.linalg.norm(b))
        if bn == 0:
            q = zero
        else:
            tol = cfg.fixed_point_tol
            qv, info = gmres(A, b.ravel(), x0=b.ravel(), rtol=tol, atol=0.0,
                             restart=min(cfg.max_inner_iterations, 50),
                             maxiter=cfg.max_inner_iterations)
            res = float(np.linalg.norm(matvec(qv) - b.ravel())) / bn
            if not math.isfinite(res):
                raise BlowUpError("non-finite values in the exchange-term solve; reduce dt")
            if res > 10 * tol:
                raise StepError(f"exchange-term iteration did not converge "
                                f"(relative residual {res:.3e})", res)
            q = qv.reshape(shape)

    phi, mu = solver.phase(state.phi, g, q)
    sigma = solver.heat(state.sigma, q)
    _check_finite(phi, mu, sigma)
    return State(state.t + dt, phi, sigma, mu)


def step_H(state: State, spec: ModelSpec, cfg: StepConfig, grid: Grid,
           solver: Optional[_PhaseSolver] = None) -> State:
    """One step of Problem H (sources ``(sigma - 1) H(phi)`` and ``-sigma H(phi)``)."""
    eps, s, dt = spec.epsilon, cfg.stabilization, cfg.dt
    H = spec.interpolation.value(state.phi)
    sigma = _frozen_sigma(state, spec, cfg, grid, H, 0.0)
    _check_finite(sigma)
    lo, hi = float(sigma.min()), float(sigma.max())
    if lo < -cfg.tol_box or hi > 1 + cfg.tol_box:
        raise MaximumPrincipleError(
            f"nutrient left [0, 1]: min {lo:.3e}, max {hi:.12g}")
    if cfg.freeze_phi:
        return State(state.t + dt, state.phi.copy(), sigma,
                     chemical_potential(state.phi, spec, grid))

    solver = solver or _PhaseSolver(grid, spec, cfg)
    g = (spec.potential.deriv(state.phi) - s * state.phi) / eps
    q = (sigma - 1.0) * H
    phi, mu = solver.phase(state.phi, g, q)
    _check_finite(phi, mu)
    return State(state.t + dt, phi, sigma, mu)


def step(state: State, spec: ModelSpec, cfg: StepConfig, grid: Grid, solver=None) -> State:
    fn = step_P if spec.problem is Problem.P else step_H
    return fn(state, spec, cfg, grid, solver)


@dataclass
class Trajectory:
    final: State
    trace: object
    n_steps: int
    snapshots: list = field(default_factory=list)


Observer = Callable[[int, State], None]


def run(initial: State, spec: ModelSpec, cfg: StepConfig, grid: Grid, n_steps: int,
        observers: Iterable[Observer] = (), stride: int = 1, trace_stride: int = 1,
        keep_snapshots: int = 0, on_record: Optional[Callable[[tuple], None]] = None
        ) -> Trajectory:
    """Advance ``n_steps`` steps, recording a diagnostics trace.

    ``observers`` are called as ``obs(step_index, state)`` at step 0 and then
    every ``stride`` steps (and at the last step).  ``keep_snapshots`` > 0
    keeps copies of states every that many steps (and the last) in the result.
    ``on_record`` receives each new trace row as soon as it is recorded.
    """
    from .diagnostics import DiagnosticsTrace

    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    if stride < 1 or trace_stride < 1:
        raise ValueError("strides must be positive")
    s_min = min_stabilization(spec)
    if not cfg.freeze_phi and cfg.stabilization < s_min:
        log.warning("stabilization %.3g is below %.3g; energy decay is not guaranteed",
                    cfg.stabilization, s_min)

    observers = list(observers)
    trace = DiagnosticsTrace(spec, grid)
    trace.record(initial)
    if on_record:
        on_record(trace.row(-1))
    for obs in observers:
        obs(0, initial)
    snaps = [initial] if keep_snapshots else []

    solver = _PhaseSolver(grid, spec, cfg)
    state = initial
    energy = trace.energy[-1]
    for k in range(1, n_steps + 1):
        try:
            state = step(state, spec, cfg, grid, solver)
        except SolverError as exc:
            raise exc.with_step(k)
        last = k == n_steps
        if k % trace_stride == 0 or last:
            trace.record(state)
            if on_record:
                on_record(trace.row(-1))
            new_energy = trace.energy[-1]
            if new_energy > 10 * energy and new_energy - energy > 1e-8:
                raise BlowUpError(
                    f"energy grew from {energy:.3e} to {new_energy:.3e}; reduce dt").with_step(k)
            energy = new_energy
        if k % stride == 0 or last:
            for obs in observers:
                obs(k, state)
        if keep_snapshots and (k % keep_snapshots == 0 or last):
            snaps.append(state)
    return Trajectory(state, trace, n_steps, snaps)


def with_dt(cfg: StepConfig, dt: float) -> StepConfig:
    return replace(cfg, dt=dt)
