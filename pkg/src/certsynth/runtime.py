"""Controller extraction and closed-loop simulation.

A verified certificate yields per-mode condition functions; the switching
policy keeps the current mode while its condition stays below -eps_s and
otherwise switches to the first mode below -eps, which bounds the time
between switches away from zero.  Simulation is fixed-step RK4 with
sample-and-hold mode decisions and an explicit Zeno guard.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from certsynth.conditions import CertificateTemplate, ConditionSet
from certsynth.intervals import Box, Interval
from certsynth.model import ControlAffinePlant, Rws, Safety, SwitchedPlant, UninitRws
from certsynth.poly import Polynomial, lie_derivative
from certsynth.regions import Ball, SemialgebraicRegion, as_region, exclude_interior


class RuntimeError_(RuntimeError):
    pass


class NoAdmissibleMode(RuntimeError_):
    def __init__(self, x):
        super().__init__(f"no mode satisfies the decrease condition at {x}; "
                         "the certificate's guarantee was left")
        self.x = tuple(x)


class ZenoDetected(RuntimeError_):
    pass


# ------------------------------------------------------------- conditions

def _sup_abs(poly: Polynomial, box: Box) -> float:
    iv = poly.interval_eval(box)
    return max(abs(iv.lo), abs(iv.hi))


class PolyCond:
    """cond(x) = p(x) for a single polynomial (Lyapunov decrease)."""

    def __init__(self, p: Polynomial):
        self.p = p
        self.parts = p.gradient()

    def value(self, x) -> float:
        return self.p.evaluate(x)

    def value_batch(self, xs):
        return self.p.evaluate(xs)

    def grad_norm_bound(self, box: Box) -> float:
        return math.sqrt(sum(_sup_abs(g, box) ** 2 for g in self.parts))


class ExtremeCond:
    """cond(x) = min or max over branch polynomials."""

    def __init__(self, polys, kind: str):
        self.polys = list(polys)
        self.kind = kind
        assert kind in ("min", "max")

    def value(self, x) -> float:
        vals = [p.evaluate(x) for p in self.polys]
        return min(vals) if self.kind == "min" else max(vals)

    def value_batch(self, xs):
        vals = np.stack([p.evaluate(xs) for p in self.polys])
        return vals.min(axis=0) if self.kind == "min" else vals.max(axis=0)

    def grad_norm_bound(self, box: Box) -> float:
        # a.e. the gradient equals one branch's gradient
        return max(PolyCond(p).grad_norm_bound(box) for p in self.polys)


class RobustCond:
    """cond(x) = grad(V).f_u(x) + max_{d in D} grad(V).d, closed-form box max."""

    def __init__(self, base: Polynomial, grad_polys, D: Box):
        self.base = base
        self.grads = list(grad_polys)
        self.D = D

    def value(self, x) -> float:
        v = self.base.evaluate(x)
        for g, iv in zip(self.grads, self.D):
            gv = g.evaluate(x)
            v += max(gv * iv.lo, gv * iv.hi)
        return v

    def value_batch(self, xs):
        v = np.asarray(self.base.evaluate(xs), dtype=float)
        for g, iv in zip(self.grads, self.D):
            gv = np.asarray(g.evaluate(xs), dtype=float)
            v = v + np.maximum(gv * iv.lo, gv * iv.hi)
        return v

    def grad_norm_bound(self, box: Box) -> float:
        base_parts = self.base.gradient()
        total = 0.0
        for j in range(self.base.arity):
            bj = _sup_abs(base_parts[j], box)
            for g, iv in zip(self.grads, self.D):
                bj += max(abs(iv.lo), abs(iv.hi)) * _sup_abs(g.diff(j), box)
            total += bj ** 2
        return math.sqrt(total)


@dataclass
class SwitchedController:
    mode_names: list
    conds: dict                  # name -> condition object
    eps: float
    eps_s: float
    fallback: str
    region: SemialgebraicRegion
    certificate: Polynomial
    kind: str

    def __post_init__(self):
        if not (0 < self.eps_s < self.eps):
            raise RuntimeError_("need 0 < eps_s < eps")


def build_controller(c, problem, cs: ConditionSet, eps: float | None = None,
                     eps_s: float | None = None) -> SwitchedController:
    """Assemble the switching condition functions for a certificate.

    CLBF: cond_u = Vdot_u.  CBF: cond_u = min(Bdot_u + lam B, Bdot_u - lam B).
    CLFBF: cond_u = max(Vdot_u, pdot_j + lam p_j over retained facets).
    Robust: cond_u includes the closed-form box maximum over disturbances.
    """
    plant = problem.plant
    if not isinstance(plant, SwitchedPlant):
        raise RuntimeError_("switched controllers need a switched plant")
    from certsynth.conditions import build_template
    tpl = cs.template
    V = tpl.value_poly(c)
    grads = V.gradient()
    spec = problem.spec
    params = problem.params
    eps = params["eps"] if eps is None else eps
    eps_s = eps / 5 if eps_s is None else eps_s

    conds = {}
    for m in plant.modes:
        vdot = lie_derivative(V, m.field)
        if cs.disturbance is not None:
            conds[m.name] = RobustCond(vdot, grads, cs.disturbance)
        elif cs.kind == "clbf":
            conds[m.name] = PolyCond(vdot)
        elif cs.kind == "cbf":
            lam = params["lam"]
            conds[m.name] = ExtremeCond([vdot + V * lam, vdot - V * lam], "min")
        elif cs.kind == "clfbf":
            branches = [vdot]
            for (pj, rel), name in zip(spec.S.constraints, spec.S.names):
                if name in spec.exempt:
                    continue
                branches.append(lie_derivative(pj, m.field) + pj * params["lam"])
            conds[m.name] = ExtremeCond(branches, "max")
        else:
            raise RuntimeError_(f"unknown condition kind {cs.kind!r}")

    if isinstance(spec, Rws):
        region = (exclude_interior(spec.S, spec.G) if isinstance(spec.G, Ball)
                  else as_region(spec.S))
    elif isinstance(spec, Safety):
        region = as_region(spec.S)
    else:
        region = (exclude_interior(spec.S, spec.G) if isinstance(spec.G, Ball)
                  else spec.S)

    return SwitchedController(
        mode_names=[m.name for m in plant.modes], conds=conds, eps=eps,
        eps_s=eps_s, fallback=plant.modes[0].name, region=region,
        certificate=V, kind=cs.kind)


def step_mode(ctrl: SwitchedController, x, current: str) -> str:
    """The suitable-feedback policy: persist below -eps_s, switch below -eps."""
    if not ctrl.region.contains(tuple(x)):
        return ctrl.fallback
    if current in ctrl.conds and ctrl.conds[current].value(x) < -ctrl.eps_s:
        return current
    for name in ctrl.mode_names:
        if ctrl.conds[name].value(x) < -ctrl.eps:
            return name
    raise NoAdmissibleMode(x)


def min_dwell_bound(ctrl: SwitchedController, plant: SwitchedPlant,
                    region: SemialgebraicRegion | None = None) -> float:
    """(eps - eps_s) / max_u(A_u B_u), interval-bounded over the region box.

    A_u bounds the condition gradient norm, B_u the state velocity; the
    quotient lower-bounds the time for cond to climb from -eps to -eps_s.
    """
    box = (region or ctrl.region).box
    lam = 0.0
    dist = None
    for cond in ctrl.conds.values():
        if isinstance(cond, RobustCond):
            dist = cond.D
    for m in plant.modes:
        A = ctrl.conds[m.name].grad_norm_bound(box)
        B = math.sqrt(sum(_sup_abs(f, box) ** 2 for f in m.field))
        if dist is not None:
            B += math.sqrt(sum(max(abs(iv.lo), abs(iv.hi)) ** 2 for iv in dist))
        lam = max(lam, A * B)
    if lam == 0.0:
        return math.inf
    return (ctrl.eps - ctrl.eps_s) / lam


def sontag_feedback(V: Polynomial, plant: ControlAffinePlant):
    """Universal-formula smooth feedback from a control Lyapunov function.

    With a = grad(V).f0 and B_i = grad(V).f_i: u = 0 when B = 0, else
    u = -B (a + sqrt(a^2 + |B|^4)) / |B|^2, which makes a + B.u < 0
    wherever B != 0.  V is trusted as a CLF; no verification happens here.
    """
    grads = V.gradient()
    a_poly = lie_derivative(V, plant.f0)
    b_polys = [sum((g * fk_i for g, fk_i in zip(grads, fk)),
                   Polynomial.zero(V.arity)) for fk in plant.fi]

    def feedback(x):
        a = a_poly.evaluate(x)
        b = np.array([p.evaluate(x) for p in b_polys])
        nb2 = float(b @ b)
        if nb2 == 0.0:
            return np.zeros(len(b_polys))
        return -b * ((a + math.sqrt(a * a + nb2 * nb2)) / nb2)

    return feedback


# ------------------------------------------------------------------ traces

@dataclass
class Trace:
    times: list
    states: list
    modes: list
    values: list                 # certificate value per sample
    switch_times: list = field(default_factory=list)
    stopped_reason: str = ""

    def __len__(self):
        return len(self.times)

    def to_csv(self) -> str:
        n = len(self.states[0])
        lines = ["t,mode," + ",".join(f"x_{i + 1}" for i in range(n)) + ",V"]
        for t, x, m, v in zip(self.times, self.states, self.modes, self.values):
            xs = ",".join(f"{xi:.9g}" for xi in x)
            lines.append(f"{t:.9g},{m},{xs},{v:.9g}")
        return "\n".join(lines) + "\n"

    def min_switch_gap(self) -> float:
        if len(self.switch_times) < 2:
            return math.inf
        gaps = np.diff(self.switch_times)
        return float(gaps.min())


@dataclass
class SublevelRegion:
    certificate: Polynomial
    threshold: float
    S: Box

    def contains(self, x) -> bool:
        return (self.S.contains(tuple(x))
                and self.certificate.evaluate(x) <= self.threshold)


def _rk4_step(field_eval, x, h):
    k1 = field_eval(x)
    k2 = field_eval(x + 0.5 * h * k1)
    k3 = field_eval(x + 0.5 * h * k2)
    k4 = field_eval(x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def simulate(plant, controller, x0, t_max: float, h: float, seed: int = 0,
             goal=None, zeno_cap: int = 10_000, dwell_hint: float | None = None):
    """Closed-loop fixed-step RK4 trace.

    `controller` is a SwitchedController or, for a control-affine plant, a
    feedback function x -> u.  Disturbances (when the plant carries a box)
    are redrawn each step and held constant across the RK4 stages.  A trace
    stops early on reaching `goal`, on leaving finiteness, or on a Zeno
    alarm (too many switches inside any trailing one-second window).
    """
    if h <= 0 or t_max < 0:
        raise RuntimeError_("need h > 0 and t_max >= 0")
    switched = isinstance(controller, SwitchedController)
    if dwell_hint is not None and h > dwell_hint / 10:
        import warnings
        warnings.warn(f"step {h} exceeds a tenth of the dwell bound "
                      f"{dwell_hint:.3g}; mode decisions may chatter")
    rng = np.random.default_rng(seed)
    dist = getattr(plant, "disturbance", None)

    x = np.asarray(x0, dtype=float)
    V = controller.certificate if switched else None
    value = (lambda s: V.evaluate(s)) if V is not None else (lambda s: math.nan)

    if switched:
        try:
            mode = step_mode(controller, x, controller.fallback)
        except NoAdmissibleMode:
            mode = controller.fallback
    else:
        mode = "smooth"

    trace = Trace([0.0], [tuple(x)], [mode], [value(x)])
    if t_max == 0:
        return trace

    steps = int(math.ceil(t_max / h))
    recent_switches = deque()
    goal_region = goal
    if switched:
        fields = {m.name: m.field for m in plant.modes}

    for k in range(steps):
        t = k * h
        if dist is not None:
            d = np.array([iv.lo + rng.random() * iv.width for iv in dist])
        else:
            d = None

        if switched:
            fpolys = fields[mode]

            def field_eval(s, fp=fpolys, dd=d):
                v = np.array([p.evaluate(s) for p in fp])
                return v + dd if dd is not None else v
        else:
            def field_eval(s, dd=d):
                u = controller(s)
                v = np.array([p.evaluate(s) for p in plant.f0])
                for j, uj in enumerate(np.atleast_1d(u)):
                    v += uj * np.array([p.evaluate(s) for p in plant.fi[j]])
                return v + dd if dd is not None else v

        x = _rk4_step(field_eval, x, h)
        t_next = t + h
        if not np.all(np.isfinite(x)):
            trace.stopped_reason = "nonfinite state"
            break

        if switched:
            new_mode = step_mode(controller, x, mode)
            if new_mode != mode:
                trace.switch_times.append(t_next)
                recent_switches.append(t_next)
                while recent_switches and recent_switches[0] < t_next - 1.0:
                    recent_switches.popleft()
                if len(recent_switches) > zeno_cap:
                    raise ZenoDetected(
                        f"{len(recent_switches)} switches within one second "
                        f"at t={t_next:.6g}")
                mode = new_mode

        trace.times.append(t_next)
        trace.states.append(tuple(x))
        trace.modes.append(mode)
        trace.values.append(value(x))

        if goal_region is not None and goal_region.contains(tuple(x)):
            trace.stopped_reason = "reached goal"
            break
    return trace


@dataclass
class Verdict:
    ok: bool
    kind: str
    reason: str
    reach_time: float | None = None
    left_sublevel: bool = False


def monitor(trace: Trace, spec, certificate: Polynomial | None = None) -> Verdict:
    """Check a trace against its specification and the invariant sublevel set."""
    if len(trace) == 0:
        raise RuntimeError_("empty trace")
    S = spec.S
    in_S = [S.contains(x) for x in trace.states]

    left_sublevel = False
    if certificate is not None and not isinstance(spec, Safety):
        entered = False
        goal = getattr(spec, "G", None)
        for x, v, ins in zip(trace.states, trace.values, in_S):
            if goal is not None and as_region(goal).contains(x):
                break
            if entered and not (v <= 1e-9 and ins):
                left_sublevel = True
                break
            if v <= 0 and ins:
                entered = True

    if isinstance(spec, Safety):
        for t, ins in zip(trace.times, in_S):
            if not ins:
                return Verdict(False, "safety", f"left S at t={t:.6g}")
        return Verdict(True, "safety", "stayed in S")

    goal = as_region(spec.G)
    for i, (t, x) in enumerate(zip(trace.times, trace.states)):
        if not in_S[i]:
            return Verdict(False, "rws", f"left S at t={t:.6g}",
                           left_sublevel=left_sublevel)
        if goal.contains(x):
            return Verdict(True, "rws", f"reached G at t={t:.6g}",
                           reach_time=t, left_sublevel=left_sublevel)
    return Verdict(False, "rws", "never reached G", left_sublevel=left_sublevel)


# --------------------------------------------------------------- ensembles

def _contains_batch(region, X):
    region = as_region(region) if not isinstance(region, SemialgebraicRegion) \
        else region
    ok = np.ones(len(X), dtype=bool)
    for i, iv in enumerate(region.box):
        ok &= (X[:, i] >= iv.lo) & (X[:, i] <= iv.hi)
    for p, rel in region.constraints:
        v = np.asarray(p.evaluate(X), dtype=float)
        if rel == "<=0":
            ok &= v <= 0.0
        elif rel == "<0":
            ok &= v < 0.0
        elif rel == ">=0":
            ok &= v >= 0.0
        else:
            ok &= v > 0.0
    return ok


@dataclass
class EnsembleResult:
    success: np.ndarray          # per trace
    reach_times: np.ndarray
    left_safe: np.ndarray
    min_switch_gap: np.ndarray
    n_switches: np.ndarray

    @property
    def success_fraction(self) -> float:
        return float(self.success.mean())


def simulate_ensemble(plant: SwitchedPlant, ctrl: SwitchedController, x0s,
                      t_max: float, h: float, spec, seed: int = 0) -> EnsembleResult:
    """Vectorized closed-loop rollout of many traces under one controller.

    Semantics match `simulate` + `monitor` per trace: sample-and-hold mode
    logic, RK4 integration, goal stop, per-trace minimum inter-switch gap.
    """
    X = np.asarray(x0s, dtype=float)
    B, n = X.shape
    rng = np.random.default_rng(seed)
    dist = plant.disturbance
    mode_fields = [m.field for m in plant.modes]
    mode_index = {m.name: i for i, m in enumerate(plant.modes)}
    conds = [ctrl.conds[m.name] for m in plant.modes]
    fallback = mode_index[ctrl.fallback]
    goal = as_region(spec.G) if not isinstance(spec, Safety) else None
    S = spec.S

    def cond_matrix(states):
        return np.stack([c.value_batch(states) for c in conds])

    def decide(states, current, active):
        C = cond_matrix(states)
        in_region = _contains_batch(ctrl.region, states)
        keep = C[current, np.arange(B)] < -ctrl.eps_s
        ok = C < -ctrl.eps
        any_ok = ok.any(axis=0)
        first_ok = ok.argmax(axis=0)
        stuck = active & in_region & ~keep & ~any_ok
        if np.any(stuck):
            raise NoAdmissibleMode(tuple(states[int(np.argmax(stuck))]))
        new = np.where(in_region, np.where(keep, current, first_ok), fallback)
        return new.astype(int)

    active = np.ones(B, dtype=bool)
    success = np.zeros(B, dtype=bool)
    left_safe = np.zeros(B, dtype=bool)
    reach_times = np.full(B, np.nan)
    last_switch = np.full(B, np.nan)
    min_gap = np.full(B, np.inf)
    n_switches = np.zeros(B, dtype=int)

    current = decide(X, np.full(B, fallback, dtype=int), active)
    steps = int(math.ceil(t_max / h))
    for k in range(steps):
        if not np.any(active):
            break
        t_next = (k + 1) * h
        d = None
        if dist is not None:
            d = np.array([[iv.lo + rng.random() * iv.width for iv in dist]
                          for _ in range(B)])

        X_next = X.copy()
        for mi in np.unique(current[active]):
            sel = active & (current == mi)
            sub = X[sel]
            fp = mode_fields[mi]

            def f(states):
                out = np.stack([np.asarray(p.evaluate(states), dtype=float)
                                for p in fp], axis=-1)
                if d is not None:
                    out = out + d[sel]
                return out

            k1 = f(sub)
            k2 = f(sub + 0.5 * h * k1)
            k3 = f(sub + 0.5 * h * k2)
            k4 = f(sub + h * k3)
            X_next[sel] = sub + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        X = X_next

        in_S = _contains_batch(as_region(S), X)
        newly_out = active & ~in_S
        if goal is not None:
            reached = active & _contains_batch(goal, X)
            newly_out &= ~reached
            success |= reached
            reach_times[reached & np.isnan(reach_times)] = t_next
            active &= ~reached
        left_safe |= newly_out
        active &= ~newly_out

        if np.any(active):
            new_modes = decide(X, current, active)
            switched_rows = active & (new_modes != current)
            if np.any(switched_rows):
                gaps = t_next - last_switch[switched_rows]
                prev = min_gap[switched_rows]
                min_gap[switched_rows] = np.where(np.isnan(gaps), prev,
                                                  np.minimum(prev, gaps))
                last_switch[switched_rows] = t_next
                n_switches[switched_rows] += 1
            current = np.where(active, new_modes, current)

    if goal is None:
        success = ~left_safe
    return EnsembleResult(success, reach_times, left_safe, min_gap, n_switches)
