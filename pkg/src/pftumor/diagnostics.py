"""Scalar and geometric diagnostics of diffuse-interface states.

Everything here is a pure function of grid fields except
:class:`DiagnosticsTrace`, which accumulates time series along a run.
The gradient part of the energy uses face differences (``grid.dirichlet``)
so that it is the exact discrete counterpart of the Laplacian used by the
solver; pointwise densities use centred differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage import measure

from .grid import Grid
from .model import ModelSpec, Problem

TRACE_COLUMNS = (
    "t", "E", "half_sigma_l2", "mass_phi", "mass_sigma", "mass_sum",
    "diss_mu", "diss_sigma", "diss_source", "eb_residual", "disc_pos",
    "mu_avg", "mu_bound_rhs", "qc_measure",
)


class DiagnosticsError(ValueError):
    pass


class PurePhaseError(DiagnosticsError):
    """Average of phi at or beyond ±1: the chemical-potential bound does not apply."""


class EmptyInterfaceError(DiagnosticsError):
    """phi does not change sign."""


def energy(phi, spec: ModelSpec, grid: Grid) -> float:
    """Ginzburg-Landau energy ``∫ eps/2 |∇phi|^2 + F(phi)/eps``."""
    eps = spec.epsilon
    return 0.5 * eps * grid.dirichlet(phi) + grid.integrate(spec.potential.value(phi)) / eps


def energy_density(phi, spec: ModelSpec, grid: Grid):
    eps = spec.epsilon
    return 0.5 * eps * grid.gradient_sq(phi) + spec.potential.value(phi) / eps


def discrepancy_density(phi, spec: ModelSpec, grid: Grid):
    eps = spec.epsilon
    return 0.5 * eps * grid.gradient_sq(phi) - spec.potential.value(phi) / eps


def discrepancy_positive(phi, spec: ModelSpec, grid: Grid) -> float:
    """``∫ (eps/2 |∇phi|^2 - F(phi)/eps)^+``."""
    return grid.integrate(np.maximum(discrepancy_density(phi, spec, grid), 0.0))


def phase_deviation(phi, grid: Grid) -> float:
    """``‖ |phi| - 1 ‖_2``."""
    return grid.norm(np.abs(phi) - 1.0)


def phase_deviation_bound(E: float, spec: ModelSpec) -> float:
    """``sqrt(eps E / cbar_F)``, the bound on ``‖|phi| - 1‖_2`` at energy ``E``."""
    return math.sqrt(spec.epsilon * E / spec.potential.cbar_F)


def w_field(phi, spec: ModelSpec):
    return spec.potential.W(phi)


def w_distance_to_limit(phi, spec: ModelSpec, grid: Grid) -> float:
    """``‖W(phi) - 2 theta χ_{phi > 0}‖_{L^1}``."""
    limit = np.where(np.asarray(phi) > 0, 2.0 * spec.theta, 0.0)
    return grid.integrate(np.abs(w_field(phi, spec) - limit))


def qc_measure(phi, grid: Grid) -> float:
    """Measure of the tumour region ``{phi > 0}`` by cell counting."""
    return float(np.count_nonzero(np.asarray(phi) > 0)) * grid.cell_volume


def mu_average_check(state, spec: ModelSpec, grid: Grid):
    """Return ``(|[mu]|, E + ‖∇mu‖_2)``; their ratio is the empirical
    constant in the chemical-potential average bound."""
    avg_phi = grid.average(state.phi)
    if abs(avg_phi) >= 1:
        raise PurePhaseError(f"|[phi]| = {abs(avg_phi):.6g} >= 1")
    return (abs(grid.average(state.mu)),
            energy(state.phi, spec, grid) + math.sqrt(max(grid.dirichlet(state.mu), 0.0)))


# --- time series --------------------------------------------------------


@dataclass
class DiagnosticsTrace:
    spec: ModelSpec
    grid: Grid
    times: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    half_sigma_l2: list = field(default_factory=list)
    mass_phi: list = field(default_factory=list)
    mass_sigma: list = field(default_factory=list)
    mass_sum: list = field(default_factory=list)
    diss_mu: list = field(default_factory=list)
    diss_sigma: list = field(default_factory=list)
    diss_source: list = field(default_factory=list)
    source_work: list = field(default_factory=list)
    eb_residual: list = field(default_factory=list)
    disc_pos: list = field(default_factory=list)
    mu_avg: list = field(default_factory=list)
    mu_bound_rhs: list = field(default_factory=list)
    qc_measure: list = field(default_factory=list)
    phase_dev: list = field(default_factory=list)
    # instantaneous integrands of the time integrals
    rates: list = field(default_factory=list)

    def __len__(self):
        return len(self.times)

    def _rates(self, state):
        spec, grid = self.spec, self.grid
        d_mu = grid.dirichlet(state.mu)
        d_sigma = grid.dirichlet(state.sigma)
        if spec.problem is Problem.P:
            P = spec.proliferation.value(state.phi)
            d_src = grid.integrate(P * (state.sigma - state.mu) ** 2)
            work = 0.0
        else:
            H = spec.interpolation.value(state.phi)
            d_src = grid.integrate(H * state.sigma ** 2)
            work = grid.integrate(state.mu * (state.sigma - 1.0) * H)
        return (d_mu, d_sigma, d_src, work)

    def record(self, state):
        spec, grid = self.spec, self.grid
        E = energy(state.phi, spec, grid)
        rates = self._rates(state)
        self.times.append(float(state.t))
        self.energy.append(E)
        self.half_sigma_l2.append(0.5 * grid.inner(state.sigma, state.sigma))
        m_phi, m_sigma = grid.average(state.phi), grid.average(state.sigma)
        self.mass_phi.append(m_phi)
        self.mass_sigma.append(m_sigma)
        self.mass_sum.append(grid.average(state.phi + state.sigma))
        if self.rates:
            dt = self.times[-1] - self.times[-2]
            prev = self.rates[-1]
            acc = [0.5 * dt * (a + b) for a, b in zip(prev, rates)]
            self.diss_mu.append(self.diss_mu[-1] + acc[0])
            self.diss_sigma.append(self.diss_sigma[-1] + acc[1])
            self.diss_source.append(self.diss_source[-1] + acc[2])
            self.source_work.append(self.source_work[-1] + acc[3])
        else:
            for lst in (self.diss_mu, self.diss_sigma, self.diss_source, self.source_work):
                lst.append(0.0)
        self.rates.append(rates)
        lhs = E + self.half_sigma_l2[-1] + self.diss_mu[-1] + self.diss_sigma[-1] + self.diss_source[-1]
        self.eb_residual.append(lhs - (self.energy[0] + self.half_sigma_l2[0]) - self.source_work[-1])
        self.disc_pos.append(discrepancy_positive(state.phi, spec, grid))
        self.mu_avg.append(grid.average(state.mu))
        self.mu_bound_rhs.append(E + math.sqrt(max(rates[0], 0.0)))
        self.qc_measure.append(qc_measure(state.phi, grid))
        self.phase_dev.append(phase_deviation(state.phi, grid))

    def phase_deviation_ratio(self) -> float:
        """Largest ``‖|phi| - 1‖_2 / sqrt(eps E / cbar_F)`` over the trace."""
        best = 0.0
        for dev, E in zip(self.phase_dev, self.energy):
            if E > 0:
                best = max(best, dev / phase_deviation_bound(E, self.spec))
            elif dev > 0:
                return math.inf
        return best

    def row(self, i: int) -> tuple:
        return tuple(getattr(self, name)[i] for name in (
            "times", "energy", "half_sigma_l2", "mass_phi", "mass_sigma", "mass_sum",
            "diss_mu", "diss_sigma", "diss_source", "eb_residual", "disc_pos",
            "mu_avg", "mu_bound_rhs", "qc_measure"))

    def rows(self):
        return [self.row(i) for i in range(len(self))]


def energy_balance_residual(trace: DiagnosticsTrace, problem) -> list:
    """Residual of the energy balance along a recorded trace (trapezoidal
    time integrals).  For Problem H the source work ``∫(mu, (sigma-1)H)`` is
    moved to the left-hand side."""
    if not len(trace):
        raise DiagnosticsError("empty trace")
    problem = Problem(problem)
    t = np.asarray(trace.times)
    r = np.asarray(trace.rates)
    cum = np.zeros_like(r)
    if len(t) > 1:
        cum[1:] = np.cumsum(0.5 * np.diff(t)[:, None] * (r[1:] + r[:-1]), axis=0)
    base = np.asarray(trace.energy) + np.asarray(trace.half_sigma_l2)
    res = base + cum[:, 0] + cum[:, 1] + cum[:, 2] - base[0]
    if problem is Problem.H:
        res = res - cum[:, 3]
    return res.tolist()


def critical_time(trace: DiagnosticsTrace, problem, omega_measure: float, horizon: float) -> float:
    """First recorded time at which the tumour region is empty (both
    problems) or fills the domain (Problem P); ``horizon`` if never."""
    problem = Problem(problem)
    for t, m in zip(trace.times, trace.qc_measure):
        if m <= 0:
            return float(t)
        if problem is Problem.P and m >= omega_measure:
            return float(t)
    return float(horizon)


def holder_quotient(times, snapshots, exponent: float, grid: Grid, norm: str = "L2") -> float:
    """``max_{s<t} ‖u(t) - u(s)‖ / (t - s)^exponent`` over recorded pairs."""
    if len(snapshots) < 2:
        raise DiagnosticsError("need at least two snapshots")
    if norm == "L1":
        nrm = lambda f: grid.integrate(np.abs(f))
    elif norm == "L2":
        nrm = grid.norm
    else:
        raise ValueError(f"unknown norm {norm!r}")
    best = 0.0
    for i in range(len(snapshots)):
        for j in range(i + 1, len(snapshots)):
            dt = times[j] - times[i]
            if dt > 0:
                best = max(best, nrm(snapshots[j] - snapshots[i]) / dt ** exponent)
    return best


# --- stress tensor --------------------------------------------------------


def _bump(s):
    """C^3 bump ``((1 - s^2)^+)^4`` and its derivative."""
    m = np.abs(s) < 1
    one = np.where(m, 1.0 - s * s, 0.0)
    return one ** 4, np.where(m, -8.0 * s * one ** 3, 0.0)


def _test_fields(grid: Grid, count: int):
    """Compactly supported vector fields ``Y`` with their Jacobians."""
    L = grid.lengths
    rng = np.random.default_rng(12345)
    out = []
    if grid.dim == 1:
        x = grid.x
        for k in range(count):
            c = L[0] * rng.uniform(0.3, 0.7)
            w = L[0] * rng.uniform(0.15, 0.25)
            b, db = _bump((x - c) / w)
            out.append(([b], [[db / w]]))
        return out
    X, Y = grid.coords()
    for k in range(count):
        cx, cy = L[0] * rng.uniform(0.3, 0.7), L[1] * rng.uniform(0.3, 0.7)
        wx, wy = L[0] * rng.uniform(0.15, 0.25), L[1] * rng.uniform(0.15, 0.25)
        bx, dbx = _bump((X - cx) / wx)
        by, dby = _bump((Y - cy) / wy)
        b, db_dx, db_dy = bx * by, dbx * by / wx, bx * dby / wy
        a1, a2 = rng.normal(size=2)
        # Y = (a1 b, a2 b); jac[i][j] = d Y_i / d x_j
        out.append(([a1 * b, a2 * b],
                    [[a1 * db_dx, a1 * db_dy], [a2 * db_dx, a2 * db_dy]]))
    return out


def stress_tensor_residual(state, spec: ModelSpec, grid: Grid, test_field_count: int = 4) -> float:
    """Defect of ``∫ ∇Y : (e I - eps ∇phi ⊗ ∇phi) = ∫ phi div(mu Y)`` over a
    family of compactly supported ``Y``, normalised by the energy.  ``mu`` is
    recomputed from ``phi``."""
    eps = spec.epsilon
    phi = state.phi
    mu = -eps * grid.laplacian(phi) + spec.potential.deriv(phi) / eps
    e = energy_density(phi, spec, grid)
    gphi = grid.gradient(phi)
    gmu = grid.gradient(mu)
    E = energy(phi, spec, grid)
    if E == 0:
        return 0.0
    worst = 0.0
    for Yv, J in _test_fields(grid, test_field_count):
        d = len(Yv)
        div = sum(J[i][i] for i in range(d))
        lhs = e * div
        for i in range(d):
            for j in range(d):
                lhs = lhs - eps * J[i][j] * gphi[i] * gphi[j]
        rhs = phi * (mu * div + sum(Yv[i] * gmu[i] for i in range(d)))
        worst = max(worst, abs(grid.integrate(lhs) - grid.integrate(rhs)))
    return worst / E


# --- interface geometry ---------------------------------------------------


@dataclass
class InterfaceCurve:
    polylines: list          # (m, 2) arrays of (x, y) points
    closed: list
    points: np.ndarray       # vertices carrying a curvature sample
    kappa: np.ndarray        # signed curvature, > 0 when convex towards {phi > 0}
    length: float

    @property
    def segments(self):
        segs = []
        for line in self.polylines:
            segs.extend(zip(line[:-1], line[1:]))
        return segs


def _circle_fit(window):
    """Least-squares (Kasa) circle through a point window; returns the
    curvature ``1/R`` and the centre, or ``(0, None)`` for collinear points."""
    mid = window[len(window) // 2]
    rel = window - mid
    scale = float(np.max(np.abs(rel))) or 1.0
    rel = rel / scale
    A = np.column_stack((rel, np.ones(len(rel))))
    b = np.sum(rel * rel, axis=1)
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] < 1e-10 * sv[0]:
        return 0.0, None
    c = np.linalg.lstsq(A, b, rcond=None)[0]
    centre = 0.5 * c[:2]
    r2 = c[2] + centre @ centre
    if not r2 > 0:
        return 0.0, None
    return 1.0 / (math.sqrt(r2) * scale), mid + scale * centre


def _resample(xy, closed: bool, spacing: float):
    """Points at (nearly) uniform arc-length spacing along a polyline."""
    seg = np.linalg.norm(np.diff(xy, axis=0), axis=1)
    s = np.concatenate(([0.0], np.cumsum(seg)))
    m = max(int(round(s[-1] / spacing)), 1)
    ss = np.linspace(0.0, s[-1], m + 1)
    if closed:
        ss = ss[:-1]
    return np.column_stack((np.interp(ss, s, xy[:, 0]), np.interp(ss, s, xy[:, 1])))


def _sample(field, grid: Grid, pts):
    """Bilinear interpolation of a cell-centred field at (x, y) points."""
    cols = pts[:, 0] / grid.h_x - 0.5
    rows = pts[:, 1] / grid.h_y - 0.5
    return ndimage.map_coordinates(field, [rows, cols], order=1, mode="nearest")


def extract_interface(phi, grid: Grid, window: int = 5, spacing=None) -> InterfaceCurve:
    """Zero level set of ``phi`` by marching squares.

    Curvature comes from circle fits over ``window`` consecutive points of
    the contour resampled at arc-length ``spacing`` (default three cells).
    Raw marching-squares vertices are unevenly spaced, and a stencil of a
    few cells turns their jitter into curvature noise growing like ``1/h``.
    ``kappa > 0`` where the region ``{phi > 0}`` is locally convex.
    """
    if grid.dim != 2:
        raise DiagnosticsError("interface extraction is 2D only")
    phi = np.asarray(phi, dtype=float)
    if not (np.any(phi > 0) and np.any(phi < 0)):
        raise EmptyInterfaceError("phi does not change sign")
    if spacing is None:
        spacing = 3.0 * max(grid.h_x, grid.h_y)
    gx, gy = grid.gradient(phi)
    half = window // 2
    lines, closed, pts, kap, centres = [], [], [], [], []
    length = 0.0
    for c in measure.find_contours(phi, 0.0):
        xy = np.column_stack(((c[:, 1] + 0.5) * grid.h_x, (c[:, 0] + 0.5) * grid.h_y))
        is_closed = len(xy) > 2 and np.allclose(xy[0], xy[-1])
        lines.append(xy)
        closed.append(is_closed)
        length += float(np.sum(np.linalg.norm(np.diff(xy, axis=0), axis=1)))
        ring = _resample(xy, is_closed, spacing)
        m = len(ring)
        if m < window:
            continue
        idx = range(m) if is_closed else range(half, m - half)
        for i in idx:
            k, centre = _circle_fit(ring[np.arange(i - half, i + half + 1) % m])
            pts.append(ring[i])
            kap.append(k)
            centres.append(ring[i] if centre is None else centre)
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    kap = np.asarray(kap, dtype=float)
    if len(pts):
        # positive when the centre of curvature lies towards increasing phi
        grad = np.column_stack((_sample(gx, grid, pts), _sample(gy, grid, pts)))
        sign = np.sign(np.sum((np.asarray(centres) - pts) * grad, axis=1))
        sign[sign == 0] = 1.0
        kap = kap * sign
    return InterfaceCurve(lines, closed, pts, kap, length)


def interface_mu(curve: InterfaceCurve, mu, grid: Grid):
    return _sample(np.asarray(mu, dtype=float), grid, curve.points)


def gibbs_thomson_residual(curve: InterfaceCurve, mu, theta: float, grid: Grid) -> float:
    """Median over the interface samples of ``|mu - theta kappa|``."""
    if len(curve.points) == 0:
        raise EmptyInterfaceError("no curvature samples on the interface")
    return float(np.median(np.abs(interface_mu(curve, mu, grid) - theta * curve.kappa)))


def energy_perimeter_ratio(phi, spec: ModelSpec, grid: Grid) -> float:
    """Energy divided by ``2 theta`` times the length of the zero level set."""
    curve = extract_interface(phi, grid)
    return energy(phi, spec, grid) / (2.0 * spec.theta * curve.length)
