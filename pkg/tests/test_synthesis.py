import json

import numpy as np
import pytest

from certsynth.benchmarks import get_benchmark, illustrative
from certsynth.learner import Observation
from certsynth.model import Problem, TemplateConfig
from certsynth.synthesis import (RunConfig, auto_margin, normalize_problem,
                                 reverify, seed_points, synth)


def test_illustrative_synthesis():
    prob = illustrative()
    report = synth(prob, RunConfig(center="first_feasible", seed=0))
    assert report.status == "certificate_found"
    assert report.totals["iterations"] <= 10
    ok, rows, _ = reverify(prob, report.certificate)
    assert ok
    assert all(r["result"] == "unsat" for r in rows)


def test_harmonic_synthesis_and_reverify():
    prob = get_benchmark("1")
    report = synth(prob, RunConfig(seed=0))
    assert report.status == "certificate_found"
    assert report.totals["iterations"] <= 30
    ok, _, _ = reverify(prob, report.certificate)
    assert ok


def test_tiny_delta_bound_is_infeasible():
    # a coefficient box too small to fit any certificate: the boundary
    # clause alone needs coefficients of magnitude ~1
    prob = illustrative()
    shrunk = Problem(name=prob.name, plant=prob.plant, spec=prob.spec,
                     template=prob.template,
                     params={**{k: v for k, v in prob.params.items()
                                if k != "Delta"}, "Delta": 1e-6})
    report = synth(shrunk, RunConfig(seed=0))
    assert report.status == "infeasible"


def test_margin_halving_recovers_dcdc():
    # full strengthening margins are provably infeasible for this geometry;
    # the loop halves them and still finds a certificate
    prob = get_benchmark("4")
    report = synth(prob, RunConfig(seed=0))
    assert report.status == "certificate_found"
    assert any(r.get("outcome") == "empty" for r in report.iterations)
    ok, _, _ = reverify(prob, report.certificate)
    assert ok


def test_reproducibility_byte_identical():
    prob = get_benchmark("1")
    cfg = lambda: RunConfig(seed=3, record_timings=False)
    a = synth(prob, cfg()).to_json()
    b = synth(prob, cfg()).to_json()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_seed_points_low_dimension_grid():
    prob = get_benchmark("1")
    pts = seed_points(prob)
    assert len(pts) == 9            # 3^2 over the safe box
    prob4 = get_benchmark("13")
    pts4 = seed_points(prob4)
    assert len(pts4) == 2 ** 4 + 1 + 2 * 4   # corners + center + face centers


def test_normalization_preserves_conditions():
    prob = get_benchmark("3")
    norm, _ = normalize_problem(prob)
    from certsynth.conditions import build_template, compile_clbf, violation_value
    tpl0 = build_template(prob.template, prob.state, prob.params["Delta"])
    tpl1 = build_template(norm.template, norm.state, norm.params["Delta"])
    cs0 = compile_clbf(prob, tpl0)
    cs1 = compile_clbf(norm, tpl1)
    s = [21.0, 3.0]
    rng = np.random.default_rng(0)
    for _ in range(40):
        c = rng.normal(size=tpl0.r) * 0.1
        x = rng.uniform((-21, -3), (10, 3))
        y = tuple(xi / si for xi, si in zip(x, s))
        v0 = violation_value(cs0.clauses[-1], c, tuple(x))
        v1 = violation_value(cs1.clauses[-1], c, y)
        assert v1 == pytest.approx(v0, rel=1e-9, abs=1e-9)


def test_demo_mode_harmonic():
    prob = get_benchmark("1")
    report = synth(prob, RunConfig(mode="demo", seed=0))
    assert report.status == "certificate_found"
    ok, _, _ = reverify(prob, report.certificate)
    assert ok


def test_demo_mode_random_demonstrator_never_accepts_invalid():
    # a faulty oracle may stall the search but can never smuggle a bad
    # certificate past the verifier
    prob = get_benchmark("1")
    mode_names = [m.name for m in prob.plant.modes]
    for seed in range(5):
        rng = np.random.default_rng(seed)

        def rogue(x):
            return Observation(tuple(x), mode_names[rng.integers(len(mode_names))])

        report = synth(prob, RunConfig(mode="demo", seed=seed, max_iter=15,
                                       demonstrator=rogue))
        if report.status == "certificate_found":
            ok, _, _ = reverify(prob, report.certificate)
            assert ok


def test_auto_margin_certified():
    prob = get_benchmark("1")
    report = synth(prob, RunConfig(seed=0))
    from certsynth.conditions import build_template, compile_conditions
    from certsynth.synthesis import load_certificate
    tpl, c = load_certificate(report.certificate, prob)
    cs = compile_conditions(prob, tpl)
    eps_star = auto_margin(prob, cs, c)
    assert eps_star >= prob.params["eps"]
    # the certified threshold must actually hold on a sample
    from certsynth.verifier import _ClauseProblem
    from certsynth.regions import sample_many
    decrease = cs.clauses[-1]
    problem = _ClauseProblem(decrease, c, None)
    for x in sample_many(decrease.region, 500, seed=1):
        phi, _ = problem.phi_at(x)
        assert phi < -(eps_star - prob.params["eps"]) + 1e-9


def test_exit_status_note_on_learner_budget():
    prob = get_benchmark("12")
    report = synth(prob, RunConfig(seed=0, max_iter=60))
    assert report.status in ("infeasible", "budget_exhausted")
    assert report.status != "certificate_found"
