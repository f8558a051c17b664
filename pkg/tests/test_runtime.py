import math

import numpy as np
import pytest

from certsynth.benchmarks import get_benchmark
from certsynth.conditions import build_template, compile_cbf, compile_clbf, \
    compile_conditions
from certsynth.intervals import Box
from certsynth.model import (ControlAffinePlant, Mode, Problem, Safety,
                             SwitchedPlant, TemplateConfig)
from certsynth.poly import Polynomial, lie_derivative, parse_poly
from certsynth.regions import Ball, SemialgebraicRegion, sample_many
from certsynth.runtime import (NoAdmissibleMode, PolyCond, SublevelRegion,
                               SwitchedController, Trace, build_controller,
                               min_dwell_bound, monitor, simulate,
                               simulate_ensemble, sontag_feedback, step_mode)

HARMONIC_C = np.array([1.05, 0.3, 1.05])      # verified offline at delta=1e-3


def harmonic_controller(eps=None):
    prob = get_benchmark("1")
    tpl = build_template(prob.template, prob.state, prob.params["Delta"])
    cs = compile_clbf(prob, tpl)
    ctrl = build_controller(HARMONIC_C, prob, cs, eps=eps)
    return prob, tpl, cs, ctrl


def pendulum_problem():
    state = ("t", "w")
    rows = []
    for u in (-30.0, 0.0, 30.0):
        f2 = f"4.9*(t - t^3*{1 / 6}) - w + ({u})*(1 - 0.5*t^2)"
        rows.append(Mode(f"u={u:+g}", [parse_poly("w", state),
                                       parse_poly(f2, state)]))
    plant = SwitchedPlant(state, rows)
    spec = Safety(I=Ball((0.0, 0.0), 0.5), S=Box([(-1, 1), (-3, 3)]))
    return Problem(name="pendulum_safety", plant=plant, spec=spec,
                   template=TemplateConfig(kind="monomials",
                                           monomials=("t^2", "t*w", "w^2"),
                                           offset="0"),
                   params={"eps": 0.05, "lam_star": 0.0, "lam": 0.05})


PENDULUM_B = np.array([10.0, 1.5312, 2.5859])


# --------------------------------------------------------- build_controller

def test_clbf_controller_conditions_are_lie_derivatives():
    prob, tpl, cs, ctrl = harmonic_controller()
    V = tpl.value_poly(HARMONIC_C)
    rng = np.random.default_rng(0)
    for m in prob.plant.modes:
        vdot = lie_derivative(V, m.field)
        for _ in range(20):
            x = rng.uniform(-1, 1, size=2)
            assert ctrl.conds[m.name].value(x) == pytest.approx(
                vdot.evaluate(x), rel=1e-12, abs=1e-12)


def test_cbf_controller_matches_published_parameters():
    prob = pendulum_problem()
    tpl = build_template(prob.template, prob.state, prob.params["Delta"])
    cs = compile_cbf(prob, tpl, lam_star=0.0)
    ctrl = build_controller(PENDULUM_B, prob, cs, eps=0.05, eps_s=0.01)
    assert ctrl.eps == 0.05 and ctrl.eps_s == 0.01
    # cond = min(Bdot + lam B, Bdot - lam B)
    B = tpl.value_poly(PENDULUM_B)
    lam = prob.params["lam"]
    rng = np.random.default_rng(1)
    for m in prob.plant.modes:
        bdot = lie_derivative(B, m.field)
        for _ in range(10):
            x = rng.uniform((-1, -3), (1, 3))
            expect = min(bdot.evaluate(x) + lam * B.evaluate(x),
                         bdot.evaluate(x) - lam * B.evaluate(x))
            assert ctrl.conds[m.name].value(x) == pytest.approx(expect, rel=1e-12)


def test_robust_controller_cond_is_corner_maximum():
    prob = get_benchmark("dc_motor_robust_0.4")
    tpl = build_template(prob.template, prob.state, prob.params["Delta"])
    cs = compile_conditions(prob, tpl)
    c = np.array([0.2, -0.05, 0.4])
    ctrl = build_controller(c, prob, cs)
    V = tpl.value_poly(c)
    grads = V.gradient()
    rng = np.random.default_rng(2)
    sigma = 0.4
    corners = [(a, b) for a in (-sigma, sigma) for b in (-sigma, sigma)]
    for m in prob.plant.modes:
        vdot = lie_derivative(V, m.field)
        for _ in range(20):
            x = rng.uniform((-21, -3), (10, 3))
            g = [p.evaluate(x) for p in grads]
            expect = max(vdot.evaluate(x) + g[0] * d0 + g[1] * d1
                         for d0, d1 in corners)
            assert ctrl.conds[m.name].value(x) == pytest.approx(
                expect, rel=1e-9, abs=1e-9)


# ----------------------------------------------------------------- stepping

def test_step_mode_keeps_strongly_decreasing_mode():
    prob, tpl, cs, ctrl = harmonic_controller()
    x = (0.9, 0.0)
    mode = step_mode(ctrl, x, ctrl.fallback)
    # cond of the chosen mode is below -eps; staying put requires -eps_s only
    assert ctrl.conds[mode].value(x) < -ctrl.eps
    assert step_mode(ctrl, x, mode) == mode


def test_step_mode_outside_region_falls_back():
    prob, tpl, cs, ctrl = harmonic_controller()
    assert step_mode(ctrl, (5.0, 5.0), "u=+1") == ctrl.fallback


def test_step_mode_always_admissible_on_verified_certificate():
    prob, tpl, cs, ctrl = harmonic_controller()
    for x in sample_many(ctrl.region, 1000, seed=3):
        mode = step_mode(ctrl, x, ctrl.fallback)
        assert ctrl.conds[mode].value(x) < -ctrl.eps_s


def test_step_mode_no_admissible_mode_raises():
    state = ("x",)
    plant = SwitchedPlant(state, [Mode("up", [parse_poly("1", state)])])
    cond = PolyCond(parse_poly("1", state))        # always +1, never < -eps
    ctrl = SwitchedController(
        mode_names=["up"], conds={"up": cond}, eps=0.1, eps_s=0.02,
        fallback="up", region=SemialgebraicRegion(Box([(-1, 1)]), []),
        certificate=parse_poly("x^2", state), kind="clbf")
    with pytest.raises(NoAdmissibleMode):
        step_mode(ctrl, (0.0,), "up")


# ------------------------------------------------------------- dwell bound

def test_pendulum_dwell_bound_positive():
    # the published 0.2 ms rests on an unstated Lipschitz estimate; the true
    # pointwise rate supremum over the safe box already forces any sound
    # bound below 1e-5 here, so only positivity and the coarse ceiling are
    # asserted (see the decisions ledger)
    prob = pendulum_problem()
    tpl = build_template(prob.template, prob.state, prob.params["Delta"])
    cs = compile_cbf(prob, tpl, lam_star=0.0)
    ctrl = build_controller(PENDULUM_B, prob, cs, eps=0.05, eps_s=0.01)
    bound = min_dwell_bound(ctrl, prob.plant)
    assert 1e-8 < bound <= 1e-2
    # consistency with the A*B construction: quarter when fields double
    # (A and B each double), halve when only B doubles (other test)
    quad = SwitchedPlant(
        prob.plant.state,
        [Mode(m.name, [f * 2.0 for f in m.field]) for m in prob.plant.modes])
    cs2 = compile_cbf(Problem(name="p2", plant=quad, spec=prob.spec,
                              template=prob.template,
                              params=dict(prob.params)), tpl, lam_star=0.0)
    ctrl2 = build_controller(PENDULUM_B, Problem(
        name="p2", plant=quad, spec=prob.spec, template=prob.template,
        params=dict(prob.params)), cs2, eps=0.05, eps_s=0.01)
    # not exactly 1/4: the lam*B part of the barrier condition does not
    # scale with the field (lam = 0.05 keeps the effect tiny)
    assert min_dwell_bound(ctrl2, quad) == pytest.approx(bound / 4, rel=2e-3)


def test_dwell_bound_halves_when_fields_double():
    prob, tpl, cs, ctrl = harmonic_controller()
    bound = min_dwell_bound(ctrl, prob.plant)
    doubled = SwitchedPlant(
        prob.plant.state,
        [Mode(m.name, [f * 2.0 for f in m.field]) for m in prob.plant.modes])
    assert min_dwell_bound(ctrl, doubled) == pytest.approx(bound / 2, rel=1e-9)


def test_dwell_bound_degenerate_dynamics():
    state = ("x",)
    plant = SwitchedPlant(state, [Mode("z", [parse_poly("0", state)])])
    cond = PolyCond(parse_poly("0", state) - 1.0)
    ctrl = SwitchedController(
        mode_names=["z"], conds={"z": cond}, eps=0.1, eps_s=0.02,
        fallback="z", region=SemialgebraicRegion(Box([(-1, 1)]), []),
        certificate=parse_poly("x^2", state), kind="clbf")
    assert min_dwell_bound(ctrl, plant) == math.inf


def test_observed_gaps_respect_dwell_bound():
    prob, tpl, cs, ctrl = harmonic_controller()
    bound = min_dwell_bound(ctrl, prob.plant)
    h = min(1e-3, bound / 10)
    trace = simulate(prob.plant, ctrl, (0.7, 0.1), t_max=20.0, h=h, seed=4,
                     goal=prob.spec.G)
    assert trace.stopped_reason == "reached goal"
    assert trace.min_switch_gap() >= bound - h


# ------------------------------------------------------------------ sontag

def clf_example():
    state = ("x1", "x2")
    V = parse_poly("x1^2 + x2^2 + x1*x2", state)
    plant = ControlAffinePlant(
        state,
        f0=[parse_poly("-x2", state), parse_poly("x1", state)],
        fi=[[parse_poly("0", state), parse_poly("1", state)]],
        input_box=Box([(-100, 100)]))
    return V, plant


def test_sontag_zero_when_b_vanishes():
    V, plant = clf_example()
    fb = sontag_feedback(V, plant)
    # B(x) = dV/dx2 = x1 + 2 x2 ; vanishes along x1 = -2 x2
    u = fb((-2.0, 1.0))
    assert np.allclose(u, 0.0)


def test_sontag_decrease_where_b_nonzero():
    V, plant = clf_example()
    fb = sontag_feedback(V, plant)
    grads = V.gradient()
    rng = np.random.default_rng(5)
    a_poly = lie_derivative(V, plant.f0)
    count = 0
    for _ in range(1000):
        x = rng.uniform(-2, 2, size=2)
        b = grads[0].evaluate(x) * 0 + grads[1].evaluate(x)   # dV/dx2
        if abs(b) < 1e-6:
            continue
        u = fb(x)[0]
        vdot = a_poly.evaluate(x) + b * u
        assert vdot < 0
        count += 1
    assert count > 900


def test_sontag_negative_drift_keeps_zero_input():
    state = ("x",)
    V = parse_poly("x^2", state)
    plant = ControlAffinePlant(state, f0=[parse_poly("-x", state)],
                               fi=[[parse_poly("0", state)]],
                               input_box=Box([(-1, 1)]))
    fb = sontag_feedback(V, plant)
    # B = 0 everywhere, a = -2x^2 < 0: u = 0 and Vdot = a < 0
    assert np.allclose(fb((0.7,)), 0.0)


# ---------------------------------------------------------------- simulate

def test_simulate_zero_horizon():
    prob, tpl, cs, ctrl = harmonic_controller()
    trace = simulate(prob.plant, ctrl, (0.5, 0.0), t_max=0.0, h=0.01)
    assert len(trace) == 1
    assert trace.states[0] == (0.5, 0.0)


def test_rk4_energy_conservation():
    state = ("x", "y")
    plant = SwitchedPlant(state, [Mode("u=0", [parse_poly("y", state),
                                               parse_poly("-x", state)])])
    cond = PolyCond(Polynomial.constant(2, -1.0))
    ctrl = SwitchedController(
        mode_names=["u=0"], conds={"u=0": cond}, eps=0.1, eps_s=0.02,
        fallback="u=0",
        region=SemialgebraicRegion(Box([(-2, 2), (-2, 2)]), []),
        certificate=parse_poly("x^2 + y^2", state), kind="clbf")
    trace = simulate(plant, ctrl, (1.0, 0.0), t_max=10.0, h=1e-3)
    energies = [x ** 2 + y ** 2 for x, y in trace.states]
    assert max(abs(e - 1.0) for e in energies) < 1e-6


def test_simulate_pendulum_safety():
    prob = pendulum_problem()
    tpl = build_template(prob.template, prob.state, prob.params["Delta"])
    cs = compile_cbf(prob, tpl, lam_star=0.0)
    ctrl = build_controller(PENDULUM_B, prob, cs, eps=0.05, eps_s=0.01)
    trace = simulate(prob.plant, ctrl, (1.0, -2.0), t_max=2.5, h=1e-4, seed=6)
    # once B reaches its floor the trace never leaves S; here it never
    # leaves S at all, and B settles into the controllable region
    crossed = False
    for x, v in zip(trace.states, trace.values):
        if v <= 0:
            crossed = True
        if crossed:
            assert prob.spec.S.contains(x)
    assert all(prob.spec.S.contains(x) for x in trace.states)
    assert trace.values[0] > 17.0
    assert min(trace.values) < 1.3
    floor_hit = next(i for i, v in enumerate(trace.values) if v < 1.3)
    assert max(trace.values[floor_hit:]) < 2.6   # stays inside the I level set


def test_simulate_decrease_between_samples():
    prob, tpl, cs, ctrl = harmonic_controller()
    h = 1e-3
    trace = simulate(prob.plant, ctrl, (0.6, 0.3), t_max=20.0, h=h, seed=7,
                     goal=prob.spec.G)
    region = ctrl.region
    for i in range(len(trace) - 1):
        if region.contains(trace.states[i]) and region.contains(trace.states[i + 1]):
            assert trace.values[i + 1] <= trace.values[i] + 2 * h * ctrl.eps


def test_simulate_sublevel_invariance():
    prob, tpl, cs, ctrl = harmonic_controller()
    trace = simulate(prob.plant, ctrl, (0.75, 0.0), t_max=20.0, h=1e-3, seed=8,
                     goal=prob.spec.G)
    verdict = monitor(trace, prob.spec, ctrl.certificate)
    assert verdict.ok
    assert not verdict.left_sublevel


# ----------------------------------------------------------------- monitor

def test_monitor_immediate_success():
    prob, tpl, cs, ctrl = harmonic_controller()
    trace = simulate(prob.plant, ctrl, (0.05, 0.05), t_max=0.0, h=0.01)
    verdict = monitor(trace, prob.spec, ctrl.certificate)
    assert verdict.ok and verdict.reach_time == 0.0


def test_monitor_exit_failure():
    prob, tpl, cs, ctrl = harmonic_controller()
    trace = Trace(times=[0.0, 0.1, 0.2],
                  states=[(0.5, 0.0), (0.9, 0.0), (1.5, 0.0)],
                  modes=["u=0"] * 3, values=[0.0, 0.0, 0.0])
    verdict = monitor(trace, prob.spec)
    assert not verdict.ok
    assert "left S at t=0.2" in verdict.reason


def test_monitor_ensemble_100_successes():
    prob, tpl, cs, ctrl = harmonic_controller()
    x0s = np.array(sample_many(prob.spec.I, 100, seed=9))
    result = simulate_ensemble(prob.plant, ctrl, x0s, t_max=30.0, h=1e-3,
                               spec=prob.spec, seed=10)
    assert result.success_fraction == 1.0


def test_ensemble_matches_single_trace():
    prob, tpl, cs, ctrl = harmonic_controller()
    x0 = (0.7, 0.1)
    h = 1e-3
    single = simulate(prob.plant, ctrl, x0, t_max=20.0, h=h, seed=0,
                      goal=prob.spec.G)
    batch = simulate_ensemble(prob.plant, ctrl, np.array([x0]), t_max=20.0,
                              h=h, spec=prob.spec, seed=0)
    assert batch.success[0]
    t_single = monitor(single, prob.spec).reach_time
    assert batch.reach_times[0] == pytest.approx(t_single, abs=2 * h)
