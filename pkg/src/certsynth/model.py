"""Plant and specification definitions plus problem-file ingestion.

A problem file is strict JSON: unknown keys are rejected so typos in
hand-written benchmark files fail loudly.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace

from certsynth.intervals import Box
from certsynth.poly import Polynomial, parse_poly
from certsynth.regions import Ball, SemialgebraicRegion, as_region, sample_many

PARAM_DEFAULTS = {
    "eps": 0.01,
    "eps_t1": 0.1,
    "eps_t2": None,      # defaults to eps_t1
    "eps_t3": 0.01,
    "delta": 1e-3,
    "lam": 5.0,
    "lam_star": 0.0,
    "Delta": 100.0,
    "gamma0": 8.0,
    "max_iter": 200,
    "seed": 0,
    "max_boxes": 2_000_000,
    "min_width": 1e-6,
}


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Mode:
    name: str
    field: tuple

    def __post_init__(self):
        object.__setattr__(self, "field", tuple(self.field))
        arities = {f.arity for f in self.field}
        if len(arities) != 1:
            raise ModelError(f"mode {self.name!r}: field components disagree on arity")
        if len(self.field) != self.field[0].arity:
            raise ModelError(
                f"mode {self.name!r}: field length {len(self.field)} != arity "
                f"{self.field[0].arity}")

    @property
    def arity(self) -> int:
        return len(self.field)


@dataclass(frozen=True)
class SwitchedPlant:
    state: tuple
    modes: tuple
    disturbance: Box | None = None

    def __post_init__(self):
        object.__setattr__(self, "state", tuple(self.state))
        object.__setattr__(self, "modes", tuple(self.modes))
        if not self.modes:
            raise ModelError("plant needs at least one mode")
        n = len(self.state)
        for m in self.modes:
            if m.arity != n:
                raise ModelError(f"mode {m.name!r} arity {m.arity} != state arity {n}")
        if self.disturbance is not None and self.disturbance.arity != n:
            raise ModelError("disturbance box arity != state arity")

    @property
    def arity(self) -> int:
        return len(self.state)

    def mode_named(self, name: str) -> Mode:
        for m in self.modes:
            if m.name == name:
                return m
        raise ModelError(f"no mode named {name!r}")


@dataclass(frozen=True)
class ControlAffinePlant:
    state: tuple
    f0: tuple
    fi: tuple          # fi[k] is the vector field multiplying input u_{k+1}
    input_box: Box

    def __post_init__(self):
        object.__setattr__(self, "state", tuple(self.state))
        object.__setattr__(self, "f0", tuple(self.f0))
        object.__setattr__(self, "fi", tuple(tuple(f) for f in self.fi))
        n = len(self.state)
        if len(self.f0) != n:
            raise ModelError("f0 length != state arity")
        if not self.fi:
            raise ModelError("control-affine plant needs at least one input")
        for k, fk in enumerate(self.fi):
            if len(fk) != n:
                raise ModelError(f"f{k + 1} length != state arity")
        if self.input_box.arity != len(self.fi):
            raise ModelError("input box arity != number of input fields")

    @property
    def arity(self) -> int:
        return len(self.state)

    @property
    def n_inputs(self) -> int:
        return len(self.fi)

    def field_at(self, u) -> tuple:
        """Mode field f0 + sum_i fi*u_i for a fixed input vector."""
        if len(u) != self.n_inputs:
            raise ModelError("input vector length mismatch")
        out = list(self.f0)
        for k, uk in enumerate(u):
            out = [g + self.fi[k][i] * float(uk) for i, g in enumerate(out)]
        return tuple(out)


@dataclass(frozen=True)
class Safety:
    I: object
    S: Box

    kind = "safety"


@dataclass(frozen=True)
class Rws:
    I: object
    S: Box
    G: object

    kind = "rws"


@dataclass(frozen=True)
class UninitRws:
    S: SemialgebraicRegion     # named constraints define the fixed barriers
    G: object
    exempt: tuple = ()         # S-constraint names not forced to decrease (target facet)

    kind = "uninit_rws"


@dataclass(frozen=True)
class TemplateConfig:
    kind: str = "quadratic_minus_one"
    monomials: tuple = ()      # basis-function strings, for kind == "monomials"
    offset: str = "-1"


@dataclass(frozen=True)
class Problem:
    name: str
    plant: object
    spec: object
    template: TemplateConfig = TemplateConfig()
    params: dict = field(default_factory=dict)
    mpc: dict | None = None

    def __post_init__(self):
        params = dict(PARAM_DEFAULTS)
        params.update(self.params)
        if params["eps_t2"] is None:
            params["eps_t2"] = params["eps_t1"]
        object.__setattr__(self, "params", params)
        _check_params(params)
        _check_spec(self.plant, self.spec)

    @property
    def state(self):
        return self.plant.state


def _check_params(p):
    if not (p["eps_t3"] > p["delta"] > 0):
        raise ModelError(
            f"need eps_t3 > delta > 0, got eps_t3={p['eps_t3']}, delta={p['delta']}")
    if p["Delta"] <= 0:
        raise ModelError("Delta must be positive")
    for key in ("eps", "eps_t1", "eps_t2"):
        if p[key] < 0:
            raise ModelError(f"{key} must be nonnegative")


def _check_spec(plant, spec):
    n = plant.arity
    if isinstance(spec, (Safety, Rws)):
        if spec.S.arity != n:
            raise ModelError("S arity != state arity")
        # I inside interior(S), checked by sampling
        for x in sample_many(spec.I, 64, seed=0):
            if not all(iv.lo < v < iv.hi for iv, v in zip(spec.S, x)):
                raise ModelError(f"I is not inside the interior of S (point {x})")
    if isinstance(spec, Rws) and as_region(spec.G).arity != n:
        raise ModelError("G arity != state arity")
    if isinstance(spec, UninitRws):
        if spec.S.arity != n:
            raise ModelError("S arity != state arity")
        for name in spec.exempt:
            if name not in spec.S.names:
                raise ModelError(f"exempt constraint {name!r} not among S constraints")


# ------------------------------------------------------------------ regions

def region_to_json(region):
    if isinstance(region, Box):
        return {"box": [[iv.lo, iv.hi] for iv in region]}
    if isinstance(region, Ball):
        return {"ball": {"center": list(region.center), "radius": region.radius}}
    if isinstance(region, SemialgebraicRegion):
        names = None
        cons = []
        for (p, rel), name in zip(region.constraints, region.names):
            cons.append({"poly": p.to_string(), "rel": rel, "name": name})
        return {"semialgebraic": {
            "box": [[iv.lo, iv.hi] for iv in region.box],
            "constraints": cons,
        }}
    raise ModelError(f"cannot serialize region {type(region).__name__}")


def region_from_json(obj, state):
    keys = set(obj)
    if keys == {"box"}:
        return Box(obj["box"])
    if keys == {"ball"}:
        _require_keys(obj["ball"], {"center", "radius"}, "ball")
        return Ball(tuple(obj["ball"]["center"]), float(obj["ball"]["radius"]))
    if keys == {"semialgebraic"}:
        body = obj["semialgebraic"]
        _require_keys(body, {"box", "constraints"}, "semialgebraic")
        cons, names = [], []
        for item in body["constraints"]:
            _require_keys(item, {"poly", "rel"}, "constraint", optional={"name"})
            cons.append((parse_poly(item["poly"], state), item["rel"]))
            names.append(item.get("name", f"p{len(names) + 1}"))
        return SemialgebraicRegion(Box(body["box"]), cons, names)
    raise ModelError(f"region must have exactly one of box/ball/semialgebraic, got {keys}")


def _require_keys(obj, required, label, optional=frozenset()):
    keys = set(obj)
    unknown = keys - set(required) - set(optional)
    if unknown:
        raise ModelError(f"unknown keys in {label}: {sorted(unknown)}")
    missing = set(required) - keys
    if missing:
        raise ModelError(f"missing keys in {label}: {sorted(missing)}")


# ------------------------------------------------------------------ problems

def load_problem(path) -> Problem:
    with open(path) as fh:
        data = json.load(fh)
    return problem_from_json(data)


def problem_from_json(data: dict) -> Problem:
    _require_keys(data, {"name", "state", "plant", "spec"}, "problem",
                  optional={"template", "params", "mpc"})
    state = tuple(data["state"])

    plant_obj = data["plant"]
    if set(plant_obj) == {"switched"}:
        body = plant_obj["switched"]
        _require_keys(body, {"modes"}, "switched plant", optional={"disturbance_box"})
        modes = []
        for m in body["modes"]:
            _require_keys(m, {"name", "field"}, "mode")
            if len(m["field"]) != len(state):
                raise ModelError(f"mode {m['name']!r}: field arity mismatch "
                                 f"({len(m['field'])} components, {len(state)} states)")
            modes.append(Mode(m["name"], [parse_poly(s, state) for s in m["field"]]))
        dist = Box(body["disturbance_box"]) if body.get("disturbance_box") else None
        plant = SwitchedPlant(state, modes, dist)
    elif set(plant_obj) == {"control_affine"}:
        body = plant_obj["control_affine"]
        _require_keys(body, {"f0", "fi", "input_box"}, "control-affine plant")
        f0 = [parse_poly(s, state) for s in body["f0"]]
        fi = [[parse_poly(s, state) for s in fk] for fk in body["fi"]]
        plant = ControlAffinePlant(state, f0, fi, Box(body["input_box"]))
    else:
        raise ModelError("plant must be exactly one of switched/control_affine")

    spec_obj = data["spec"]
    kind = spec_obj.get("type")
    if kind == "rws":
        _require_keys(spec_obj, {"type", "S", "I", "G"}, "rws spec")
        spec = Rws(I=region_from_json(spec_obj["I"], state),
                   S=region_from_json(spec_obj["S"], state),
                   G=region_from_json(spec_obj["G"], state))
        if not isinstance(spec.S, Box):
            raise ModelError("rws safe set S must be a box")
    elif kind == "safety":
        _require_keys(spec_obj, {"type", "S", "I"}, "safety spec")
        spec = Safety(I=region_from_json(spec_obj["I"], state),
                      S=region_from_json(spec_obj["S"], state))
        if not isinstance(spec.S, Box):
            raise ModelError("safety safe set S must be a box")
    elif kind == "uninit_rws":
        _require_keys(spec_obj, {"type", "S", "G"}, "uninit_rws spec",
                      optional={"exempt"})
        S = region_from_json(spec_obj["S"], state)
        if not isinstance(S, SemialgebraicRegion):
            raise ModelError("uninit_rws S must be semialgebraic")
        spec = UninitRws(S=S, G=region_from_json(spec_obj["G"], state),
                         exempt=tuple(spec_obj.get("exempt", ())))
    else:
        raise ModelError(f"unknown spec type {kind!r}")

    template = TemplateConfig()
    if "template" in data:
        t = data["template"]
        if set(t) == {"kind"}:
            template = TemplateConfig(kind=t["kind"])
        else:
            _require_keys(t, {"monomials"}, "template", optional={"offset"})
            for text in t["monomials"]:
                if parse_poly(text, state).is_zero():
                    raise ModelError(f"template basis entry {text!r} is zero")
            template = TemplateConfig(kind="monomials",
                                      monomials=tuple(t["monomials"]),
                                      offset=t.get("offset", "0"))

    params = dict(data.get("params", {}))
    unknown = set(params) - set(PARAM_DEFAULTS)
    if unknown:
        raise ModelError(f"unknown params: {sorted(unknown)}")

    return Problem(name=data["name"], plant=plant, spec=spec, template=template,
                   params=params, mpc=data.get("mpc"))


def problem_to_json(problem: Problem) -> dict:
    state = list(problem.state)
    if isinstance(problem.plant, SwitchedPlant):
        body = {"modes": [{"name": m.name,
                           "field": [f.to_string(state) for f in m.field]}
                          for m in problem.plant.modes]}
        if problem.plant.disturbance is not None:
            body["disturbance_box"] = [[iv.lo, iv.hi]
                                       for iv in problem.plant.disturbance]
        plant_obj = {"switched": body}
    else:
        plant_obj = {"control_affine": {
            "f0": [f.to_string(state) for f in problem.plant.f0],
            "fi": [[f.to_string(state) for f in fk] for fk in problem.plant.fi],
            "input_box": [[iv.lo, iv.hi] for iv in problem.plant.input_box],
        }}

    spec = problem.spec
    if isinstance(spec, Rws):
        spec_obj = {"type": "rws", "S": region_to_json(spec.S),
                    "I": region_to_json(spec.I), "G": region_to_json(spec.G)}
    elif isinstance(spec, Safety):
        spec_obj = {"type": "safety", "S": region_to_json(spec.S),
                    "I": region_to_json(spec.I)}
    else:
        spec_obj = {"type": "uninit_rws", "S": region_to_json(spec.S),
                    "G": region_to_json(spec.G)}
        if spec.exempt:
            spec_obj["exempt"] = list(spec.exempt)

    if problem.template.kind == "monomials":
        tpl = {"monomials": list(problem.template.monomials),
               "offset": problem.template.offset}
    else:
        tpl = {"kind": problem.template.kind}

    out = {"name": problem.name, "state": state, "plant": plant_obj,
           "spec": spec_obj, "template": tpl, "params": dict(problem.params)}
    if problem.mpc is not None:
        out["mpc"] = problem.mpc
    return out


def save_problem(problem: Problem, path):
    with open(path, "w") as fh:
        json.dump(problem_to_json(problem), fh, indent=2, sort_keys=True)
        fh.write("\n")


def discretize_inputs(plant: ControlAffinePlant, levels) -> SwitchedPlant:
    """One switched mode per element of the Cartesian product of input levels."""
    levels = [list(map(float, lv)) for lv in levels]
    if len(levels) != plant.n_inputs:
        raise ModelError("need one level list per input")
    for k, lv in enumerate(levels):
        box = plant.input_box[k]
        for u in lv:
            if not box.contains(u):
                raise ModelError(f"level {u} outside input range "
                                 f"[{box.lo}, {box.hi}] for input {k + 1}")
    modes = []
    for combo in itertools.product(*levels):
        name = "u=(" + ",".join(f"{u:g}" for u in combo) + ")"
        modes.append(Mode(name, plant.field_at(combo)))
    return SwitchedPlant(plant.state, modes)
