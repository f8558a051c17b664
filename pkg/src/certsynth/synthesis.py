"""The synthesis loops: counterexample-guided and demonstration-guided.

cegis mode alternates find-candidate / verify / add-witness, seeded with a
coarse grid of the safe set so the first candidates are already shaped by
the specification.  demonstration mode keeps the parameter region convex by
letting a demonstrator fix the violated disjunct, selects candidates at the
center of the maximum-volume inscribed ellipsoid, and stops on the volume
criterion when no robustly compatible certificate can remain.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from certsynth.conditions import (CertificateTemplate, ConditionSet,
                                  build_template, compile_conditions)
from certsynth.demonstrator import (MpcConfig, demonstrate_with_flag,
                                    mode_demonstrate, mpc_demonstrate)
from certsynth.learner import (INFEASIBLE, CandidateRegion, DisjunctSearchBudget,
                               Infeasible, Observation, Witness, find_candidate,
                               mve_candidate, should_terminate)
from certsynth.intervals import Box
from certsynth.model import (Mode, Problem, Rws, Safety, SwitchedPlant,
                             TemplateConfig, UninitRws)
from certsynth.poly import Polynomial, parse_poly
from certsynth.regions import Ball, SemialgebraicRegion
from certsynth.verifier import (OK, Counterexample, Inconclusive, SearchBudget,
                                verify)


def _scale_poly(p: Polynomial, s) -> Polynomial:
    subs = [Polynomial.variable(p.arity, i) * float(s[i])
            for i in range(p.arity)]
    return p.compose(subs)


def _scale_region(region, s):
    if isinstance(region, Box):
        return Box([(iv.lo / si, iv.hi / si) for iv, si in zip(region, s)])
    if isinstance(region, Ball):
        # anisotropic scaling turns the ball into an ellipsoid constraint
        n = len(region.center)
        ind = Polynomial.constant(n, -region.radius ** 2)
        for i, ci in enumerate(region.center):
            t = Polynomial.variable(n, i) * float(s[i]) - ci
            ind = ind + t * t
        box = Box([((ci - region.radius) / si, (ci + region.radius) / si)
                   for ci, si in zip(region.center, s)])
        return SemialgebraicRegion(box, [(ind, "<=0")], ["ellipsoid"])
    if isinstance(region, SemialgebraicRegion):
        box = Box([(iv.lo / si, iv.hi / si) for iv, si in zip(region.box, s)])
        cons = [(_scale_poly(p, s), rel) for p, rel in region.constraints]
        return SemialgebraicRegion(box, cons, region.names)
    raise TypeError(f"cannot scale region {type(region).__name__}")


def normalize_problem(problem: Problem):
    """Rescale each state coordinate by its safe-set magnitude.

    The substitution y = x / s preserves every condition value and margin
    (V(x(t)) = V'(y(t)) pointwise in time), so synthesis runs on a
    well-conditioned copy and the found coefficients transfer through the
    same substitution applied to the template basis.
    """
    spec = problem.spec
    box = spec.S if isinstance(spec.S, Box) else spec.S.box
    s = [max(abs(iv.lo), abs(iv.hi)) or 1.0 for iv in box]
    if all(abs(si - 1.0) < 1e-12 for si in s):
        return problem, problem.template
    plant = problem.plant
    modes = [Mode(m.name, [_scale_poly(f, s) * (1.0 / s[i])
                           for i, f in enumerate(m.field)])
             for m in plant.modes]
    dist = plant.disturbance
    if dist is not None:
        dist = Box([(iv.lo / si, iv.hi / si) for iv, si in zip(dist, s)])
    plant2 = SwitchedPlant(plant.state, modes, dist)

    if isinstance(spec, Rws):
        spec2 = Rws(I=_scale_region(spec.I, s), S=_scale_region(spec.S, s),
                    G=_scale_region(spec.G, s))
    elif isinstance(spec, Safety):
        spec2 = Safety(I=_scale_region(spec.I, s), S=_scale_region(spec.S, s))
    else:
        spec2 = UninitRws(S=_scale_region(spec.S, s),
                          G=_scale_region(spec.G, s), exempt=spec.exempt)

    # template basis composed with the scaling so coefficients transfer 1:1
    names = list(problem.state)
    tpl0 = build_template(problem.template, problem.state,
                          problem.params["Delta"])
    scaled_basis = tuple(_scale_poly(g, s).to_string(names) for g in tpl0.basis)
    scaled_offset = _scale_poly(tpl0.offset, s).to_string(names)
    template2 = TemplateConfig(kind="monomials", monomials=scaled_basis,
                               offset=scaled_offset)
    prob2 = Problem(name=problem.name, plant=plant2, spec=spec2,
                    template=template2, params=dict(problem.params),
                    mpc=problem.mpc)
    return prob2, problem.template


@dataclass
class RunConfig:
    center: str = "first_feasible"
    mode: str = "cegis"                  # cegis | demo
    seed: int = 0
    max_iter: int | None = None
    gamma0: float | None = None
    delta: float | None = None
    max_boxes: int | None = None
    record_timings: bool = True
    demonstrator: object | None = None   # callable x -> Observation override
    log: object | None = None            # callable(dict) per iteration
    margin_halvings: int = 3             # retries with eps_T halved on empty


@dataclass
class SynthesisReport:
    status: str                          # certificate_found | infeasible | budget_exhausted
    certificate: dict | None
    iterations: list
    totals: dict
    problem_name: str

    def to_json(self) -> dict:
        return {"status": self.status, "certificate": self.certificate,
                "iterations": self.iterations, "totals": self.totals,
                "problem": self.problem_name}


def seed_points(problem: Problem) -> list:
    """Coarse grid of the safe box: full 3^n grid in low dimension, corners
    plus face centers plus center above it."""
    spec = problem.spec
    box = spec.S if not hasattr(spec.S, "box") else spec.S.box
    n = box.arity
    if n <= 3:
        axes = [(iv.lo, iv.mid, iv.hi) for iv in box]
        pts = list(itertools.product(*axes))
    else:
        pts = list(box.corners())
        center = box.midpoint()
        pts.append(center)
        for i in range(n):
            for v in (box[i].lo, box[i].hi):
                p = list(center)
                p[i] = v
                pts.append(tuple(p))
    return pts


def _seed_witness(region: CandidateRegion, cs: ConditionSet, x, clause_idx):
    clause = cs.clauses[clause_idx]
    if clause.robust:
        nominal = tuple(iv.mid for iv in cs.disturbance)
        w = Witness(x, clause_idx, tuple(nominal for _ in clause.dnf))
    else:
        w = Witness(x, clause_idx)
    region.add_witness(cs, w)


def seed_region(region: CandidateRegion, cs: ConditionSet, problem: Problem):
    count = 0
    for x in seed_points(problem):
        for idx, clause in enumerate(cs.clauses):
            if clause.region.contains(tuple(x)[:clause.region.arity]):
                _seed_witness(region, cs, tuple(x), idx)
                count += 1
    return count


def certificate_payload(tpl: CertificateTemplate, c, problem: Problem,
                        verified: bool, report: list) -> dict:
    names = list(problem.state)
    return {
        "monomials": tpl.monomial_names(),
        "coefficients": [float(v) for v in c],
        "offset": tpl.offset.to_string(names),
        "params": dict(problem.params),
        "verified": verified,
        "verifier_report": report,
    }


def load_certificate(payload, problem: Problem):
    """Rebuild (template, coefficients) from a certificate payload."""
    from certsynth.model import TemplateConfig
    cfg = TemplateConfig(kind="monomials",
                         monomials=tuple(payload["monomials"]),
                         offset=payload["offset"])
    tpl = build_template(cfg, problem.state, problem.params["Delta"])
    return tpl, np.asarray(payload["coefficients"], dtype=float)


def _budget(problem: Problem, config: RunConfig) -> SearchBudget:
    p = problem.params
    return SearchBudget(
        max_boxes=config.max_boxes or p["max_boxes"],
        min_width=p["min_width"],
        delta=config.delta if config.delta is not None else p["delta"])


def _default_demonstrator(problem: Problem, config: RunConfig):
    """The built-in oracle: mode enumeration for switched plants."""
    plant = problem.plant
    mpc = problem.mpc or {}
    if isinstance(plant, SwitchedPlant):
        n = plant.arity
        # pick a step that keeps Euler rollouts in scale with the safe box
        spec_box = problem.spec.S if not hasattr(problem.spec.S, "box") \
            else problem.spec.S.box
        diam = max(iv.width for iv in spec_box)
        rng = np.random.default_rng(config.seed)
        scale = 1.0
        for _ in range(32):
            x = spec_box.sample(rng)
            for m in plant.modes:
                f = [p.evaluate(x) for p in m.field]
                scale = max(scale, float(np.linalg.norm(f)))
        tau = mpc.get("tau", min(0.1, 0.1 * diam / scale))
        horizon = min(int(mpc.get("N", 3)), 3)
        weights = tuple(mpc.get("Qp", (1.0,) * n))

        def demonstrate(x):
            demo = mode_demonstrate(plant, horizon, tau, weights, x)
            flag = None
            if isinstance(problem.spec, Safety):
                cfg = MpcConfig(tau=tau, N=max(horizon, 3), Qp=weights,
                                Rp=(1.0,))
                flag = demonstrate_with_flag(plant, cfg, problem.spec, x).flag
            return Observation(tuple(x), demo.u, flag)

        return demonstrate

    cfg = MpcConfig(tau=mpc.get("tau", 0.1), N=int(mpc.get("N", 20)),
                    Qp=tuple(mpc.get("Qp", (1.0,) * plant.arity)),
                    Rp=tuple(mpc.get("Rp", (1.0,) * plant.n_inputs)))

    def demonstrate(x):
        if isinstance(problem.spec, Safety):
            demo = demonstrate_with_flag(plant, cfg, problem.spec, x)
            return Observation(tuple(x), demo.u, demo.flag)
        return Observation(tuple(x), mpc_demonstrate(plant, cfg, x).u, None)

    return demonstrate


def _disjunct_for_observation(cs: ConditionSet, clause_idx: int,
                              obs: Observation, problem: Problem) -> int:
    """Map a demonstrated input to the disjunct it fixes."""
    clause = cs.clauses[clause_idx]
    plant = problem.plant
    mode_order = [m.name for m in plant.modes]
    if obs.u not in mode_order:
        raise ValueError(f"demonstrated mode {obs.u!r} unknown")
    mi = mode_order.index(obs.u)
    per_mode = clause.n_disjuncts // len(mode_order)
    if per_mode == 1:
        return mi
    if per_mode == 2:
        # barrier pair: the flag picks the +lam* (safety reachable) branch
        return mi * 2 + (0 if obs.flag else 1)
    raise ValueError("cannot map observation onto clause disjuncts")


def _with_margins(problem: Problem, scale: float) -> Problem:
    """Copy of the problem with the termination margins scaled down.

    The strengthened constraints can prune every true certificate when the
    margins are large relative to the geometry; halving and retrying
    recovers completeness without giving up termination.
    """
    if scale == 1.0:
        return problem
    p = dict(problem.params)
    p["eps_t1"] = p["eps_t1"] * scale
    p["eps_t2"] = p["eps_t2"] * scale
    p["eps_t3"] = max(p["eps_t3"] * scale, p["delta"] * 1.01)
    return Problem(name=problem.name, plant=problem.plant, spec=problem.spec,
                   template=problem.template, params=p, mpc=problem.mpc)


def synth(problem: Problem, config: RunConfig | None = None) -> SynthesisReport:
    """Run the loop, halving the strengthening margins when the parameter
    region empties before the iteration budget is spent.

    Synthesis happens on a per-coordinate state-normalized copy of the
    problem; condition values and margins are preserved exactly by the
    substitution and the coefficients transfer to the original basis 1:1.
    """
    config = config or RunConfig()
    t_start = time.perf_counter()
    max_iter = config.max_iter if config.max_iter is not None \
        else problem.params["max_iter"]
    normalized, _ = normalize_problem(problem)
    payload_tpl = build_template(problem.template, problem.state,
                                 problem.params["Delta"])
    spent = 0
    combined_iters = []
    combined_demos = 0
    report = None
    for round_idx in range(config.margin_halvings + 1):
        scaled = _with_margins(normalized, 0.5 ** round_idx)
        report = _synth_round(scaled, config, max_iter - spent, t_start,
                              payload_tpl=payload_tpl,
                              payload_problem=problem)
        combined_iters.extend(report.iterations)
        combined_demos += report.totals.get("demonstrations", 0)
        spent = len(combined_iters)
        if report.status != "infeasible" or spent >= max_iter:
            break
        if report.totals.get("note", "").startswith("volume stop"):
            break
    report.iterations = combined_iters
    report.totals["iterations"] = len(combined_iters)
    report.totals["demonstrations"] = combined_demos
    if config.record_timings:
        report.totals["wall_time"] = round(time.perf_counter() - t_start, 6)
    return report


def _synth_round(problem: Problem, config: RunConfig, max_iter: int,
                 t_start: float, payload_tpl=None,
                 payload_problem=None) -> SynthesisReport:
    payload_problem = payload_problem or problem
    tpl = build_template(problem.template, problem.state, problem.params["Delta"])
    if payload_tpl is None:
        payload_tpl = tpl
    cs = compile_conditions(problem, tpl)
    budget = _budget(problem, config)
    gamma0 = config.gamma0 if config.gamma0 is not None else problem.params["gamma0"]

    region = CandidateRegion(tpl)
    n_seeds = seed_region(region, cs, problem)

    iterations = []
    n_demos = 0
    status = "budget_exhausted"
    payload = None
    note = ""
    demonstrate = None
    precondition = None
    if config.mode == "demo":
        demonstrate = config.demonstrator or _default_demonstrator(problem, config)
        policy = "mve" if config.center == "first_feasible" else config.center
    else:
        policy = config.center

    for it in range(1, max_iter + 1):
        rec = {"iter": it, "policy": policy}
        t0 = time.perf_counter()
        try:
            if config.mode == "demo" and policy == "mve":
                c, ellipsoid = mve_candidate(region, precondition=precondition)
            else:
                c = find_candidate(region, policy=policy, seed=config.seed)
                ellipsoid = None
        except DisjunctSearchBudget as err:
            status = "budget_exhausted"
            note = str(err)
            rec["outcome"] = "learner_budget"
            iterations.append(rec)
            if config.log:
                config.log(rec)
            break
        t_learn = time.perf_counter() - t0

        if isinstance(c, Infeasible):
            status = "infeasible"
            rec["outcome"] = "empty"
            iterations.append(rec)
            if config.log:
                config.log(rec)
            break

        rec["candidate"] = [float(v) for v in c]
        if ellipsoid is not None:
            rec["log_volume"] = float(ellipsoid.log_volume)
            precondition = (ellipsoid.shape, ellipsoid.center)
            if should_terminate(ellipsoid, region.dim, budget.delta):
                status = "infeasible"
                note = "volume stop: no robustly compatible certificate remains"
                rec["outcome"] = "volume_stop"
                iterations.append(rec)
                if config.log:
                    config.log(rec)
                break

        t0 = time.perf_counter()
        try:
            result = verify(cs, c, budget, gamma0)
        except Inconclusive as err:
            status = "budget_exhausted"
            note = f"verifier inconclusive: {err}"
            rec["outcome"] = "inconclusive"
            iterations.append(rec)
            if config.log:
                config.log(rec)
            break
        t_verify = time.perf_counter() - t0
        if config.record_timings:
            rec["t_learn"] = round(t_learn, 6)
            rec["t_verify"] = round(t_verify, 6)

        if result is OK:
            status = "certificate_found"
            rec["outcome"] = "ok"
            iterations.append(rec)
            if config.log:
                config.log(rec)
            payload = certificate_payload(
                payload_tpl, c, payload_problem, True,
                [{"clause": cl.label, "result": "unsat"} for cl in cs.clauses])
            break

        cex: Counterexample = result
        rec["outcome"] = "witness"
        rec["clause"] = cs.clauses[cex.clause_index].label
        rec["witness"] = [float(v) for v in cex.witness.x]
        rec["violation"] = float(cex.violation)

        clause = cs.clauses[cex.clause_index]
        if config.mode == "demo" and clause.n_disjuncts > 1:
            obs = demonstrate(cex.witness.x)
            n_demos += 1
            rec["demonstrated"] = obs.u if isinstance(obs.u, str) \
                else [float(v) for v in np.atleast_1d(obs.u)]
            disjunct = _disjunct_for_observation(cs, cex.clause_index, obs, problem)
            region.add_observation(cs, cex.clause_index, obs, disjunct)
        else:
            region.add_witness(cs, cex.witness, slack=budget.delta,
                               generating_candidate=c)
            rec["extra_witnesses"] = len(cex.extras)
            for extra in cex.extras:
                region.add_witness(cs, extra, slack=budget.delta,
                                   generating_candidate=c)
        iterations.append(rec)
        if config.log:
            config.log(rec)

    totals = {"iterations": len(iterations), "demonstrations": n_demos,
              "seeds": n_seeds}
    if note:
        totals["note"] = note
    return SynthesisReport(status=status, certificate=payload,
                           iterations=iterations, totals=totals,
                           problem_name=problem.name)


def reverify(problem: Problem, payload: dict,
             config: RunConfig | None = None):
    """Cold-start verification of a stored certificate; per-clause results."""
    config = config or RunConfig()
    tpl, c = load_certificate(payload, problem)
    cs = compile_conditions(problem, tpl)
    budget = _budget(problem, config)
    gamma0 = config.gamma0 if config.gamma0 is not None else problem.params["gamma0"]
    from certsynth.verifier import falsify_clause, robust_falsify, DeltaSat, UNSAT
    rows = []
    all_ok = True
    for idx, clause in enumerate(cs.clauses):
        try:
            if clause.robust:
                res = robust_falsify(clause, c, cs.disturbance, gamma0, budget)
            else:
                res = falsify_clause(clause, c, gamma0, budget)
        except Inconclusive as err:
            rows.append({"clause": clause.label, "result": "inconclusive",
                         "detail": str(err)})
            all_ok = False
            continue
        if res is UNSAT:
            rows.append({"clause": clause.label, "result": "unsat"})
        else:
            all_ok = False
            rows.append({"clause": clause.label, "result": "delta_sat",
                         "witness": [float(v) for v in res.point],
                         "violation": float(res.violation)})
    return all_ok, rows, (tpl, c, cs)


def auto_margin(problem: Problem, cs, c, budget: SearchBudget | None = None,
                samples: int = 1500) -> float:
    """A certified decrease threshold for controller extraction.

    The verified conditions only guarantee decrease below the design eps,
    but the actual certificate usually has far more slack; sampling
    estimates it and one certification pass proves a fraction of the
    estimate, which widens the dwell-time bound accordingly.
    """
    from certsynth.regions import sample_many
    from certsynth.verifier import _ClauseProblem, certify_margin

    params = problem.params
    eps_design = params["eps"]
    if budget is None:
        budget = SearchBudget(max_boxes=params["max_boxes"],
                              min_width=params["min_width"],
                              delta=params["delta"])
    decrease = next((cl for cl in cs.clauses if cl.label == "decrease"), None)
    if decrease is None:
        return eps_design
    prob = _ClauseProblem(decrease, c, cs.disturbance if decrease.robust else None)
    try:
        pts = sample_many(decrease.region, samples, seed=0)
    except Exception:
        return eps_design
    worst = max(prob.phi_at(x)[0] for x in pts)
    if worst >= 0:
        return eps_design
    tau = 0.7 * (-worst)
    for _ in range(8):
        if tau <= budget.delta:
            break
        if certify_margin(decrease, c, tau, budget,
                          cs.disturbance if decrease.robust else None):
            return eps_design + tau
        tau *= 0.5
    # fall back to the delta-level slack the verifier already certified
    return eps_design + budget.delta
