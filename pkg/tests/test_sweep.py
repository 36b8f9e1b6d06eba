import math

import numpy as np
import pytest

from pftumor import sweep as S
from pftumor.diagnostics import energy
from pftumor.grid import Grid
from pftumor.model import (ModelSpec, Potential, Problem, linear_proliferation,
                           prototype_interpolation, quartic_well, smooth_cubic_interpolation,
                           zero_proliferation)
from pftumor.solver import BlowUpError

THETA = math.sqrt(2) / 3


def spec_P(eps=0.04, lengths=(1.0, 1.0), T=0.01, P=None):
    return ModelSpec(Problem.P, quartic_well(), eps, proliferation=P or linear_proliferation(0.5),
                     lengths=lengths, T=T)


# --- geometry --------------------------------------------------------------------


def test_circle_clearance_error_at_coarse_eps():
    g = Grid.uniform((1, 1), 75)
    with pytest.raises(S.GeometryError):
        S.well_prepared_initial(S.Circle(radius=0.3), spec_P(eps=0.08), g, clearance=3.0)


def test_overlapping_circles_rejected():
    two = S.Circles((S.Circle((0.35, 0.5), 0.1), S.Circle((0.6, 0.5), 0.1)))
    assert two.clearance((1, 1)) == pytest.approx(0.05)
    with pytest.raises(S.GeometryError):
        S.well_prepared_initial(two, spec_P(eps=0.04), Grid.uniform((1, 1), 150))


def test_circle_profile_centre_and_energy():
    eps = 0.02
    spec = spec_P(eps=eps)
    g = Grid.uniform((1, 1), 300)
    phi = S.well_prepared_initial(S.Circle(), spec, g)
    X, Y = g.coords()
    centre = phi[np.unravel_index(np.argmin(np.hypot(X - 0.5, Y - 0.5)), g.shape)]
    assert centre == pytest.approx(1.0, abs=1e-6)
    assert energy(phi, spec, g) == pytest.approx(2 * THETA * 2 * math.pi * 0.25, rel=0.03)


def test_stripe_mean():
    spec = spec_P(eps=0.02)
    g = Grid.uniform((1, 1), 150)
    phi = S.well_prepared_initial(S.Stripe(0.5, 0.4), spec, g)
    # area fraction 0.4 gives mean 0.4 - 0.6 up to layer corrections
    assert g.average(phi) == pytest.approx(-0.2, abs=0.01)


def test_half_space_stripe_in_1d():
    spec = spec_P(eps=0.02, lengths=(1.0,))
    g = Grid.uniform((1.0,), 300)
    phi = S.well_prepared_initial(S.Stripe(0.5), spec, g)
    assert phi[0] > 0.999 and phi[-1] < -0.999
    assert abs(g.average(phi)) < 1e-12


def test_non_quartic_profile_solves_the_ode():
    base = quartic_well(2.0)
    renamed = Potential(base.value, base.deriv, base.deriv2, base.convex_deriv, base.nonconvex_deriv,
                        base.growth_exponent, base.delta0, base.c_F, base.C_F, base.cbar_F,
                        name="generic")
    q = S.optimal_profile(renamed)
    s = np.linspace(-3, 3, 61)
    assert np.max(np.abs(q(s) - np.tanh(2 * s))) < 1e-6


# --- sizing rules ----------------------------------------------------------------


def test_grid_size_rule():
    assert S.grid_size(1.0, 6, 0.08) == 75
    assert S.grid_size(1.0, 6, 0.04) == 150
    assert S.grid_size(1.0, 6, 0.07) == 86
    assert S.grid_size(2.0, 6.5, 0.05) == 260


def test_time_step_rule():
    plan = S.SweepPlan([0.08, 0.04], spec_P(T=0.01))
    n, dt = plan.time_steps(0.08)
    assert n == math.ceil(0.01 / (0.5 * 0.08 ** 3)) and dt == pytest.approx(0.01 / n)
    assert dt <= 0.5 * 0.08 ** 3
    assert S.SweepPlan([0.08], spec_P(), n_steps=7).time_steps(0.08)[0] == 7


@pytest.mark.parametrize("ys, order", [(lambda x: x, 1.0), (lambda x: x ** 2, 2.0)])
def test_convergence_order_exact(ys, order):
    xs = np.array([0.08, 0.04, 0.02, 0.01])
    assert S.convergence_order(xs, ys(xs)) == pytest.approx(order, abs=1e-12)


def test_convergence_order_with_noise():
    rng = np.random.default_rng(11)
    xs = np.array([0.08, 0.04, 0.02, 0.01])
    for _ in range(20):
        ys = xs * (1 + rng.uniform(-0.05, 0.05, xs.size))
        assert S.convergence_order(xs, ys) == pytest.approx(1.0, abs=0.2)


def test_convergence_order_input_checks():
    with pytest.raises(ValueError):
        S.convergence_order([1, 2], [1, 2])
    with pytest.raises(ValueError):
        S.convergence_order([1, 2, 3], [1, 0, 3])


@pytest.mark.parametrize("kw", [
    dict(epsilons=[]), dict(epsilons=[0.04, 0.08]), dict(epsilons=[0.08, -0.04]),
    dict(h_ratio=5), dict(c_dt=0.0), dict(sigma0=1.5),
])
def test_plan_validation(kw):
    args = dict(epsilons=[0.08, 0.04], spec=spec_P())
    args.update(kw)
    with pytest.raises(ValueError):
        S.SweepPlan(**args)


# --- small sweep -------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_report():
    spec = spec_P(lengths=(2.0, 2.0), T=0.002)
    plan = S.SweepPlan([0.16, 0.12, 0.08], spec, geometry=S.Circle((1.0, 1.0), 0.5), n_steps=20)
    return plan, S.run_sweep(plan)


def test_small_sweep_report(small_report):
    plan, rep = small_report
    assert rep.column("epsilon") == [0.16, 0.12, 0.08]
    assert rep.column("n_x") == [75, 100, 150]
    assert set(S.REPORT_COLUMNS) <= set(rep.rows[0])
    assert all(len(row) == len(S.REPORT_COLUMNS) for row in rep.as_table())
    assert rep.global_time is not None and math.isfinite(rep.m0)
    for row in rep.rows:
        assert row["mass_sum_drift"] < 1e-12
        assert row["final_energy"] <= row["initial_energy"] + 0.5 * plan.sigma0 ** 2 * 4
        assert row["max_phase_deviation_ratio"] <= 1.0
        assert row["interface_length"] == pytest.approx(math.pi, rel=0.05)
    assert set(rep.orders) == {"w_distance", "max_disc_ratio", "gt_residual"}
    assert set(rep.traces) == set(rep.finals) == {0.16, 0.12, 0.08}


def test_sweep_rejects_failing_hypotheses():
    spec = ModelSpec(Problem.H, quartic_well(), 0.08, interpolation=prototype_interpolation())
    with pytest.raises(ValueError):
        S.run_sweep(S.SweepPlan([0.08], spec, n_steps=1))


def test_sweep_error_carries_partial_report(monkeypatch):
    real = S.run
    calls = []

    def flaky(*a, **kw):
        calls.append(1)
        if len(calls) == 2:
            raise BlowUpError("nonfinite values").with_step(3)
        return real(*a, **kw)

    monkeypatch.setattr(S, "run", flaky)
    spec = spec_P(T=1e-4, P=zero_proliferation())
    with pytest.raises(S.SweepError) as info:
        S.run_sweep(S.SweepPlan([0.08, 0.06, 0.05], spec, n_steps=2))
    assert info.value.epsilon == 0.06
    assert info.value.partial.column("epsilon") == [0.08]


def test_sweep_H_has_no_precheck():
    spec = ModelSpec(Problem.H, quartic_well(), 0.08, interpolation=smooth_cubic_interpolation(),
                     T=1e-4)
    rep = S.run_sweep(S.SweepPlan([0.08], spec, sigma0=1.0, n_steps=2))
    assert rep.global_time is None and math.isnan(rep.m0)
