import json

import numpy as np
import pytest

from certsynth.benchmarks import (builtin_benchmarks, dc_motor, get_benchmark,
                                  heater, illustrative)
from certsynth.intervals import Box
from certsynth.model import (ControlAffinePlant, ModelError, Problem, Rws,
                             discretize_inputs, load_problem, problem_from_json,
                             problem_to_json, save_problem)
from certsynth.poly import parse_poly
from certsynth.regions import Ball


def minimal_problem_dict():
    return {
        "name": "harmonic",
        "state": ["x", "y"],
        "plant": {"switched": {"modes": [
            {"name": "u=-1", "field": ["y", "-x - 1"]},
            {"name": "u=0", "field": ["y", "-x"]},
            {"name": "u=+1", "field": ["y", "-x + 1"]},
        ]}},
        "spec": {"type": "rws",
                 "S": {"box": [[-1, 1], [-1, 1]]},
                 "I": {"ball": {"center": [0, 0], "radius": 0.8}},
                 "G": {"ball": {"center": [0, 0], "radius": 0.2}}},
        "params": {"eps": 0.01},
    }


def test_load_minimal_harmonic(tmp_path):
    path = tmp_path / "harmonic.json"
    path.write_text(json.dumps(minimal_problem_dict()))
    prob = load_problem(path)
    assert len(prob.plant.modes) == 3
    assert prob.spec.kind == "rws"
    assert prob.params["eps"] == 0.01


def test_omitted_eps_t2_defaults_to_eps_t1():
    d = minimal_problem_dict()
    d["params"] = {"eps_t1": 0.25}
    prob = problem_from_json(d)
    assert prob.params["eps_t2"] == 0.25


def test_mode_field_arity_mismatch():
    d = minimal_problem_dict()
    d["plant"]["switched"]["modes"][0]["field"] = ["y"]
    with pytest.raises(ModelError, match="arity"):
        problem_from_json(d)


def test_unknown_keys_rejected():
    d = minimal_problem_dict()
    d["extra"] = 1
    with pytest.raises(ModelError, match="unknown keys"):
        problem_from_json(d)
    d = minimal_problem_dict()
    d["params"] = {"epsilon": 0.1}
    with pytest.raises(ModelError, match="unknown params"):
        problem_from_json(d)


def test_param_invariants():
    d = minimal_problem_dict()
    d["params"] = {"eps_t3": 1e-4, "delta": 1e-3}
    with pytest.raises(ModelError, match="eps_t3 > delta"):
        problem_from_json(d)


def test_initial_set_must_be_inside_safe_interior():
    d = minimal_problem_dict()
    d["spec"]["I"]["ball"]["radius"] = 1.5
    with pytest.raises(ModelError, match="interior"):
        problem_from_json(d)


def test_save_load_round_trip(tmp_path):
    for prob in (get_benchmark("1"), get_benchmark("3"), illustrative()):
        path = tmp_path / f"{prob.name}.json"
        save_problem(prob, path)
        again = load_problem(path)
        assert problem_to_json(again) == problem_to_json(prob)


# ----------------------------------------------------------- benchmarks

def test_builtin_benchmarks_validate():
    probs = builtin_benchmarks()
    assert len(probs) == 20          # 15 systems, pendulum a/b, heater a-e
    for prob in probs:
        assert isinstance(prob, Problem)


def test_system_1_harmonic():
    prob = get_benchmark("1")
    assert len(prob.plant.modes) == 3
    assert [iv.lo for iv in prob.spec.S] == [-1, -1]
    assert prob.spec.G.radius == 0.2 and prob.spec.I.radius == 0.8
    mode = prob.plant.mode_named("u=+1")
    assert mode.field[0].evaluate((0.3, -0.7)) == pytest.approx(-0.7)
    assert mode.field[1].evaluate((0.3, -0.7)) == pytest.approx(-0.3 + 1.0)


def test_system_3_dc_motor_shifted():
    prob = get_benchmark("3")
    B, J, k, R, L = 1e-4, 25e-5, 0.05, 0.5, 15e-4
    w, i = 1.2, -0.4
    for mode, u in zip(prob.plant.modes, (-3.0, 3.0)):
        expect_w = -(B / J) * (w + 20) + (k / J) * i
        expect_i = -(k / L) * (w + 20) - (R / L) * i + u / L
        assert mode.field[0].evaluate((w, i)) == pytest.approx(expect_w)
        assert mode.field[1].evaluate((w, i)) == pytest.approx(expect_i)
    assert prob.spec.I.radius == 2.0 and prob.spec.G.radius == 0.5


def test_system_15a_heater_coefficients():
    prob = heater("a")
    assert len(prob.plant.modes) == 4      # off + one heater in each of 3 rooms
    off = prob.plant.mode_named("off")
    # shifted off-dynamics: 0.01*(-10.5 t1 + 5 t2 + 5 t3 - 5.5)
    assert off.field[0].evaluate((1.0, 0.0, 0.0)) == pytest.approx(0.01 * (-10.5 - 5.5))
    on1 = prob.plant.mode_named("on_1")
    assert on1.field[0].evaluate((0.0, 0.0, 0.0)) == pytest.approx(0.01 * 23.5)
    assert on1.field[1].evaluate((0.0, 0.0, 0.0)) == pytest.approx(0.01 * (-5.5))


def test_robust_dc_motor_variants():
    prob = dc_motor(sigma_d=0.4)
    assert prob.plant.disturbance is not None
    assert prob.plant.disturbance[0].lo == -0.4
    assert get_benchmark("dc_motor_robust_0.4").name == "dc_motor_robust_0.4"


# ---------------------------------------------------------- discretization

def test_discretize_two_mode_oscillator():
    state = ("x1", "x2")
    plant = ControlAffinePlant(
        state,
        f0=[parse_poly("x2", state), parse_poly("-x1", state)],
        fi=[[parse_poly("0", state), parse_poly("1", state)]],
        input_box=Box([(-1, 1)]))
    sw = discretize_inputs(plant, [(-1.0, 1.0)])
    assert len(sw.modes) == 2
    assert sw.modes[0].field[1] == parse_poly("-x1 - 1", state)
    assert sw.modes[1].field[1] == parse_poly("-x1 + 1", state)


def test_discretize_single_level():
    state = ("x",)
    plant = ControlAffinePlant(state, f0=[parse_poly("-x", state)],
                               fi=[[parse_poly("1", state)]],
                               input_box=Box([(-2, 2)]))
    sw = discretize_inputs(plant, [(0.0,)])
    assert len(sw.modes) == 1
    assert sw.modes[0].field[0] == parse_poly("-x", state)


def test_discretize_grid_mode_count():
    state = ("x1", "x2", "x3", "x4")
    zero = parse_poly("0", state)
    one = parse_poly("1", state)
    plant = ControlAffinePlant(
        state,
        f0=[parse_poly(s, state) for s in
            ("x1 + x2 + 8", "-x2 + x3 + 1", "-2*x3 + 2*x4 + 1", "-3*x4 + 1")],
        fi=[[one, zero, parse_poly("-2", state), zero],
            [zero, parse_poly("-1", state), zero, one]],
        input_box=Box([(0, 1), (0, 2)]))
    sw = discretize_inputs(plant, [(0.0, 1.0), (0.0, 0.5, 1.0, 1.5, 2.0)])
    assert len(sw.modes) == 10


def test_discretize_level_outside_box():
    state = ("x",)
    plant = ControlAffinePlant(state, f0=[parse_poly("0", state)],
                               fi=[[parse_poly("1", state)]],
                               input_box=Box([(-1, 1)]))
    with pytest.raises(ModelError, match="outside"):
        discretize_inputs(plant, [(-3.0,)])
