import math

import numpy as np
import pytest
import sympy as sp
from scipy.optimize import fsolve

from pftumor.diagnostics import energy
from pftumor.grid import Grid
from pftumor.model import (ModelSpec, Problem, constant_interpolation, linear_proliferation,
                           quartic_well, smooth_cubic_interpolation, zero_proliferation)
from pftumor.solver import (BlowUpError, MaximumPrincipleError, State, StepConfig, StepError,
                            chemical_potential, initial_state, min_stabilization, run, step,
                            step_H, step_P)


def spec_P(eps=0.04, P=None, lengths=(1.0, 1.0)):
    return ModelSpec(Problem.P, quartic_well(), eps, proliferation=P or linear_proliferation(0.5),
                     lengths=lengths)


def spec_H(eps=0.04, H=None, lengths=(1.0, 1.0)):
    return ModelSpec(Problem.H, quartic_well(), eps, interpolation=H or smooth_cubic_interpolation(),
                     lengths=lengths)


def droplet(n=64, eps=0.04, R=0.25):
    g = Grid.uniform((1, 1), n)
    X, Y = g.coords()
    return g, np.tanh((R - np.hypot(X - 0.5, Y - 0.5)) / (math.sqrt(2) * eps))


def test_min_stabilization_quartic():
    # sup F'' on [-1.2, 1.2] is 3(1.44) - 1 = 3.32; half of it
    assert min_stabilization(spec_P()) == pytest.approx(1.66)


def test_step_config_validation():
    with pytest.raises(ValueError):
        StepConfig(dt=0)
    with pytest.raises(ValueError):
        StepConfig(dt=1e-3, stabilization=-1)


@pytest.mark.parametrize("make", [spec_P, spec_H])
def test_pure_healthy_state_is_stationary(make):
    spec = make()
    g = Grid.uniform((1, 1), 16)
    st = initial_state(g.full(-1.0), 0.6, spec, g)
    assert np.all(st.mu == 0)
    new = step(st, spec, StepConfig(dt=1e-3), g)
    assert new.t == pytest.approx(1e-3)
    assert np.allclose(new.phi, -1, atol=1e-15) and np.allclose(new.sigma, 0.6, atol=1e-15)
    assert np.allclose(new.mu, 0, atol=1e-13)


@pytest.mark.parametrize("make", [spec_P, spec_H])
def test_stationary_trajectory_constant(make):
    spec = make()
    g = Grid.uniform((1, 1), 16)
    traj = run(initial_state(g.full(-1.0), 0.0 if make is spec_H else 0.3, spec, g), spec,
               StepConfig(dt=1e-3), g, 20)
    tr = traj.trace
    assert np.max(np.abs(np.diff(tr.energy))) < 1e-12
    assert np.max(np.abs(tr.eb_residual)) < 1e-12
    assert np.max(np.abs(traj.final.phi + 1)) < 1e-12


def test_mu_is_scheme_consistent():
    spec = spec_P()
    g, phi0 = droplet(32)
    st = initial_state(phi0, 0.8, spec, g)
    cfg = StepConfig(dt=1e-4, stabilization=2.0)
    new = step_P(st, spec, cfg, g)
    eps, s = spec.epsilon, cfg.stabilization
    mu = -eps * g.laplacian(new.phi) + (spec.potential.deriv(phi0) + s * (new.phi - phi0)) / eps
    assert np.max(np.abs(new.mu - mu)) < 1e-9 * np.max(np.abs(mu))


def test_step_P_solves_coupled_system():
    spec = spec_P()
    g, phi0 = droplet(32)
    st = initial_state(phi0, 0.8, spec, g)
    dt = 1e-4
    new = step_P(st, spec, StepConfig(dt=dt), g)
    P = spec.proliferation.value(phi0)
    src = P * (new.sigma - new.mu)
    r1 = (new.phi - phi0) / dt - g.laplacian(new.mu) - src
    r2 = (new.sigma - st.sigma) / dt - g.laplacian(new.sigma) + src
    scale = np.max(np.abs(g.laplacian(new.mu)))
    assert np.max(np.abs(r1)) < 1e-9 * scale
    assert np.max(np.abs(r2)) < 1e-9 * scale


def test_step_P_mass_of_sum_per_step():
    spec = spec_P()
    g, phi0 = droplet(48)
    st = initial_state(phi0, 0.8, spec, g)
    cfg = StepConfig(dt=2e-4)
    for _ in range(20):
        new = step_P(st, spec, cfg, g)
        assert abs(g.average(new.phi + new.sigma) - g.average(st.phi + st.sigma)) <= 1e-10
        st = new


def test_step_H_mass_and_box():
    spec = spec_H()
    g, phi0 = droplet(48)
    st = initial_state(phi0, 1.0, spec, g)
    dt = 2e-4
    for _ in range(20):
        new = step_H(st, spec, StepConfig(dt=dt), g)
        dm = g.average(st.phi) - g.average(new.phi)
        assert 0 <= dm <= dt + 1e-9
        assert new.sigma.min() >= -1e-9 and new.sigma.max() <= 1 + 1e-9
        st = new


def test_step_H_box_violation_raises():
    spec = spec_H()
    g, phi0 = droplet(16)
    st = initial_state(phi0, 1.5, spec, g)
    with pytest.raises(MaximumPrincipleError):
        step_H(st, spec, StepConfig(dt=1e-4), g)


def test_frozen_constant_H_recursion():
    spec = spec_H(H=constant_interpolation(1.0))
    g = Grid.uniform((1, 1), 8)
    s0, dt, n = 0.7, 0.01, 50
    st = initial_state(g.full(0.3), s0, spec, g)
    cfg = StepConfig(dt=dt, freeze_phi=True)
    traj = run(st, spec, cfg, g, n)
    assert np.allclose(traj.final.sigma, s0 * (1 + dt) ** -n, rtol=1e-12)
    assert np.allclose(traj.final.phi, 0.3)
    # and the recursion approaches exp(-t)
    assert abs(s0 * (1 + dt) ** -n - s0 * math.exp(-n * dt)) < dt * s0


def test_energy_decay_pure_cahn_hilliard_1d_against_implicit():
    """Sources off, 1D tanh data: the stabilised step decreases the energy
    each step and tracks a fully implicit (Newton) solve."""
    eps, n, dt, steps = 0.1, 32, 2e-4, 200
    spec = spec_P(eps=eps, P=zero_proliferation(), lengths=(1.0,))
    g = Grid.uniform((1.0,), n)
    phi0 = np.tanh((g.x - 0.4) / (math.sqrt(2) * eps)) + 0.05 * np.cos(3 * np.pi * g.x)
    traj = run(initial_state(phi0, 0.0, spec, g), spec, StepConfig(dt=dt), g, steps)
    E = np.array(traj.trace.energy)
    assert np.all(np.diff(E) <= 1e-14)

    # fully implicit reference, 20 steps
    def implicit_step(p0):
        def resid(p):
            mu = -eps * g.laplacian(p) + spec.potential.deriv(p) / eps
            return (p - p0) / dt - g.laplacian(mu)
        return fsolve(resid, p0, xtol=1e-13)

    p = phi0.copy()
    E_imp = [energy(p, spec, g)]
    for _ in range(20):
        p = implicit_step(p)
        E_imp.append(energy(p, spec, g))
    assert np.all(np.diff(E_imp) <= 1e-12)
    short = run(initial_state(phi0, 0.0, spec, g), spec, StepConfig(dt=dt), g, 20)
    assert np.max(np.abs(short.final.phi - p)) < 0.05 * np.max(np.abs(p - phi0))
    assert abs(short.trace.energy[-1] - E_imp[-1]) < 0.05 * (E_imp[0] - E_imp[-1])


def test_run_validates_arguments():
    spec = spec_P()
    g = Grid.uniform((1, 1), 8)
    st = initial_state(g.full(-1.0), 0.0, spec, g)
    with pytest.raises(ValueError):
        run(st, spec, StepConfig(dt=1e-3), g, 0)
    with pytest.raises(ValueError):
        run(st, spec, StepConfig(dt=1e-3), g, 3, stride=0)


def test_nonfinite_state_raises_blow_up_with_step():
    spec = spec_H()
    g, phi0 = droplet(16)
    phi0 = phi0.copy()
    phi0[3, 3] = np.nan
    st = State(0.0, phi0, g.full(0.5), g.zeros())
    with pytest.raises(BlowUpError) as info:
        run(st, spec, StepConfig(dt=1e-4), g, 3)
    assert info.value.step == 1
    assert "step 1" in str(info.value)


def test_inner_iteration_failure_reports_residual():
    spec = spec_P(P=linear_proliferation(50.0))
    g, phi0 = droplet(32)
    st = initial_state(phi0, 0.8, spec, g)
    cfg = StepConfig(dt=5e-2, fixed_point_tol=1e-15, max_inner_iterations=1)
    with pytest.raises(StepError) as info:
        step_P(st, spec, cfg, g)
    assert info.value.residual > 1e-15


def test_observers_and_snapshots():
    spec = spec_P()
    g, phi0 = droplet(16)
    seen = []
    traj = run(initial_state(phi0, 0.8, spec, g), spec, StepConfig(dt=1e-4), g, 7,
               observers=[lambda k, s: seen.append(k)], stride=3, keep_snapshots=3)
    assert seen == [0, 3, 6, 7]
    assert [round(s.t / 1e-4) for s in traj.snapshots] == [0, 3, 6, 7]
    assert len(traj.trace) == 8


def test_trace_stride_records_last_step():
    spec = spec_P()
    g, phi0 = droplet(16)
    traj = run(initial_state(phi0, 0.8, spec, g), spec, StepConfig(dt=1e-4), g, 7, trace_stride=3)
    assert np.allclose(traj.trace.times, [0, 3e-4, 6e-4, 7e-4])


def test_balance_residual_first_order_in_dt():
    """Halving dt halves the balance residual (n = 64, eps = 0.1)."""
    eps = 0.1
    spec = spec_P(eps=eps)
    g, phi0 = droplet(64, eps=eps)
    T = 4e-3
    res = []
    for N in (10, 20, 40):
        tr = run(initial_state(phi0, 0.8, spec, g), spec, StepConfig(dt=T / N), g, N).trace
        res.append(abs(tr.eb_residual[-1]))
    assert res[0] / res[1] == pytest.approx(2.0, rel=0.15)
    assert res[1] / res[2] == pytest.approx(2.0, rel=0.15)


# --- manufactured solution -----------------------------------------------------


def _manufactured():
    t, x = sp.symbols("t x")
    eps, lam = sp.Rational(1, 5), sp.Rational(1, 2)
    phi = sp.Rational(1, 2) * sp.cos(sp.pi * x) * sp.exp(-t) + sp.Rational(1, 10)
    sigma = sp.Rational(1, 2) + sp.Rational(1, 4) * sp.cos(2 * sp.pi * x) * sp.exp(-t)
    mu = -eps * sp.diff(phi, x, 2) + (phi ** 3 - phi) / eps
    P = lam * (1 + phi)       # 1 + phi > 0 for this solution
    f_phi = sp.diff(phi, t) - sp.diff(mu, x, 2) - P * (sigma - mu)
    f_sig = sp.diff(sigma, t) - sp.diff(sigma, x, 2) + P * (sigma - mu)
    lam_ = lambda e: sp.lambdify((t, x), e, "numpy")
    return float(eps), lam_(phi), lam_(sigma), lam_(f_phi), lam_(f_sig)


def test_manufactured_solution_consistency():
    """Residual of the discrete equations on a smooth exact solution is
    O(dt + h^2): with dt ~ h^2 it drops by about four per grid halving."""
    eps, phi_e, sig_e, f_phi, f_sig = _manufactured()
    spec = spec_P(eps=eps, lengths=(1.0,))
    s, t0 = 2.0, 0.1
    errs = []
    for n in (16, 32, 64):
        g = Grid.uniform((1.0,), n)
        dt = 0.25 / n ** 2
        x = g.x
        p0, p1 = phi_e(t0, x), phi_e(t0 + dt, x)
        s0, s1 = sig_e(t0, x), sig_e(t0 + dt, x)
        mu1 = -eps * g.laplacian(p1) + (spec.potential.deriv(p0) + s * (p1 - p0)) / eps
        P = spec.proliferation.value(p0)
        r1 = (p1 - p0) / dt - g.laplacian(mu1) - P * (s1 - mu1) - f_phi(t0 + dt, x)
        r2 = (s1 - s0) / dt - g.laplacian(s1) + P * (s1 - mu1) - f_sig(t0 + dt, x)
        # cosine data satisfy the Neumann condition; skip the one-sided boundary cells
        errs.append(max(np.max(np.abs(r1[2:-2])), np.max(np.abs(r2[2:-2]))))
    assert errs[0] / errs[1] > 3.0
    assert errs[1] / errs[2] > 3.0
