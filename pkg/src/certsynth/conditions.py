"""Certificate templates and compilation into the canonical condition form.

Every specification compiles to per-region clauses; a clause is a
disjunction (over modes, or modes x sign for barrier relaxations) of
conjunctions of atoms, each atom affine in the unknown coefficient vector
and required strictly negative.  Learner-side strengthening margins live
on the atoms; the verifier falsifies the margin-zero conditions, with the
controller design slack already folded into each decrease atom's base.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from certsynth.intervals import Box
from certsynth.model import (ControlAffinePlant, Problem, Rws, Safety,
                             SwitchedPlant, TemplateConfig, UninitRws)
from certsynth.poly import Polynomial, lie_derivative, parse_poly
from certsynth.regions import (Ball, SemialgebraicRegion, as_region, box_faces,
                               exclude_interior)


class ConditionError(ValueError):
    pass


@dataclass(frozen=True)
class CertificateTemplate:
    basis: tuple                 # basis functions g_k, usually monomials
    offset: Polynomial
    delta_bound: float           # coefficient box (-Delta, Delta)^r
    equalities: tuple = ()       # (row vector, rhs) pairs, row . c = rhs
    state_names: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "basis", tuple(self.basis))
        if any(g.is_zero() for g in self.basis):
            raise ConditionError("zero basis function")
        if len({g.arity for g in self.basis} | {self.offset.arity}) != 1:
            raise ConditionError("basis/offset arity mismatch")

    @property
    def r(self) -> int:
        return len(self.basis)

    @property
    def arity(self) -> int:
        return self.offset.arity

    def value_poly(self, c) -> Polynomial:
        if len(c) != self.r:
            raise ConditionError("coefficient count != template size")
        p = self.offset
        for ck, g in zip(c, self.basis):
            if ck:
                p = p + g * float(ck)
        return p

    def coefficient_box(self) -> Box:
        return Box([(-self.delta_bound, self.delta_bound)] * self.r)

    def monomial_names(self) -> list:
        names = list(self.state_names) or [f"x{i+1}" for i in range(self.arity)]
        return [g.to_string(names) for g in self.basis]


def build_template(config: TemplateConfig, state, Delta: float) -> CertificateTemplate:
    n = len(state)
    if config.kind == "quadratic_minus_one":
        basis = []
        for i in range(n):
            for j in range(i, n):
                e = [0] * n
                e[i] += 1
                e[j] += 1
                basis.append(Polynomial.monomial(n, tuple(e)))
        offset = Polynomial.constant(n, -1.0)
    elif config.kind == "monomials":
        basis = [parse_poly(s, state) for s in config.monomials]
        offset = parse_poly(config.offset, state)
    else:
        raise ConditionError(f"unknown template kind {config.kind!r}")
    return CertificateTemplate(tuple(basis), offset, float(Delta),
                               state_names=tuple(state))


@dataclass(frozen=True)
class Atom:
    """value(c, x) = base(x) + sum_k c_k * coeff_polys[k](x), required < -margin."""

    base: Polynomial
    coeff_polys: tuple
    margin: float
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "coeff_polys", tuple(self.coeff_polys))
        arities = {self.base.arity} | {p.arity for p in self.coeff_polys}
        if len(arities) != 1:
            raise ConditionError("atom polynomial arities disagree")

    @property
    def arity(self) -> int:
        return self.base.arity

    @property
    def r(self) -> int:
        return len(self.coeff_polys)

    def value(self, c, point) -> float:
        v = self.base.evaluate(point)
        for ck, p in zip(c, self.coeff_polys):
            if ck:
                v += float(ck) * p.evaluate(point)
        return v

    def instantiated(self, c) -> Polynomial:
        p = self.base
        for ck, q in zip(c, self.coeff_polys):
            if ck:
                p = p + q * float(ck)
        return p

    def cut(self, point):
        """Half-space w . c <= rhs equivalent to value(c, point) <= -margin."""
        w = np.array([p.evaluate(point) for p in self.coeff_polys])
        rhs = -self.margin - self.base.evaluate(point)
        return w, rhs


@dataclass(frozen=True)
class Clause:
    region: SemialgebraicRegion
    dnf: tuple                   # tuple of conjuncts; conjunct = tuple of Atom
    label: str
    robust: bool = False         # atoms carry disturbance variables

    def __post_init__(self):
        object.__setattr__(self, "dnf", tuple(tuple(c) for c in self.dnf))
        if not self.dnf or any(not conj for conj in self.dnf):
            raise ConditionError("clause dnf and every conjunct must be nonempty")

    @property
    def n_disjuncts(self) -> int:
        return len(self.dnf)


@dataclass(frozen=True)
class ConditionSet:
    template: CertificateTemplate
    clauses: tuple
    kind: str
    disturbance: Box | None = None

    def __post_init__(self):
        object.__setattr__(self, "clauses", tuple(self.clauses))
        rs = {a.r for cl in self.clauses for conj in cl.dnf for a in conj}
        if rs and rs != {self.template.r}:
            raise ConditionError("atom coefficient counts disagree with template")

    @property
    def robust(self) -> bool:
        return self.disturbance is not None


# ------------------------------------------------------------- compilation

def _positivity_atom(tpl, sign, margin, label):
    # sign=+1: V < -margin ; sign=-1: -V < -margin i.e. V > margin
    base = tpl.offset * float(sign)
    coeffs = [g * float(sign) for g in tpl.basis]
    return Atom(base, coeffs, margin, label)


def _decrease_atom(tpl, mode_field, eps, margin, label, extra_base=None,
                   extra_coeffs=None):
    base = lie_derivative(tpl.offset, mode_field) + Polynomial.constant(tpl.arity, eps)
    coeffs = [lie_derivative(g, mode_field) for g in tpl.basis]
    if extra_base is not None:
        base = base + extra_base
    if extra_coeffs is not None:
        coeffs = [a + b for a, b in zip(coeffs, extra_coeffs)]
    return Atom(base, coeffs, margin, label)


def _goal_excluded(outer, G) -> SemialgebraicRegion:
    region = as_region(outer)
    if isinstance(G, Ball):
        return exclude_interior(region, G)
    if isinstance(G, Box):
        if G.volume() == 0.0:
            return region            # a facet has empty interior
        raise ConditionError("box goal sets with volume are not supported; use a ball")
    if isinstance(G, SemialgebraicRegion) and len(G.constraints) == 1 \
            and G.constraints[0][1] == "<=0":
        # sublevel-set goal (e.g. an ellipsoid): complement its interior
        p, _ = G.constraints[0]
        return region.with_constraint(-p, "<=0", name="outside_goal")
    raise ConditionError(f"unsupported goal region {type(G).__name__}")


def compile_clbf(problem: Problem, tpl: CertificateTemplate) -> ConditionSet:
    """Reach-while-stay conditions for a single Lyapunov-barrier function."""
    spec = problem.spec
    if not isinstance(spec, Rws):
        raise ConditionError("compile_clbf requires an rws specification")
    plant = problem.plant
    if not isinstance(plant, SwitchedPlant):
        raise ConditionError("compile_clbf requires a switched plant")
    p = problem.params
    clauses = [Clause(as_region(spec.I),
                      [[_positivity_atom(tpl, +1, p["eps_t1"], "V_neg_on_I")]],
                      label="init")]
    for i, face in enumerate(box_faces(spec.S)):
        clauses.append(Clause(
            face, [[_positivity_atom(tpl, -1, p["eps_t2"], "V_pos_on_dS")]],
            label=f"boundary_{i}"))
    decrease_region = _goal_excluded(spec.S, spec.G)
    dnf = [[_decrease_atom(tpl, m.field, p["eps"], p["eps_t3"], f"Vdot[{m.name}]")]
           for m in plant.modes]
    clauses.append(Clause(decrease_region, dnf, label="decrease"))
    return ConditionSet(tpl, clauses, kind="clbf")


def compile_cbf(problem: Problem, tpl: CertificateTemplate,
                lam_star: float | None = None) -> ConditionSet:
    """Safety conditions for a control barrier function (exponential relaxation)."""
    spec = problem.spec
    if not isinstance(spec, Safety):
        raise ConditionError("compile_cbf requires a safety specification")
    plant = problem.plant
    p = problem.params
    if lam_star is None:
        lam_star = p["lam_star"]
    clauses = []
    for i, face in enumerate(box_faces(spec.S)):
        clauses.append(Clause(
            face, [[_positivity_atom(tpl, -1, p["eps_t2"], "B_pos_on_dS")]],
            label=f"boundary_{i}"))
    clauses.append(Clause(as_region(spec.I),
                          [[_positivity_atom(tpl, +1, p["eps_t1"], "B_neg_on_I")]],
                          label="init"))
    if not isinstance(spec.I, Ball):
        raise ConditionError("safety initial set must be a ball")
    region = exclude_interior(spec.S, spec.I)
    dnf = []
    signs = (0.0,) if lam_star == 0.0 else (+1.0, -1.0)   # +/- pair collapses at 0
    for m in plant.modes:
        for sign in signs:
            extra_base = tpl.offset * (sign * lam_star) if sign else None
            extra_coeffs = ([g * (sign * lam_star) for g in tpl.basis]
                            if sign else None)
            tag = {0.0: "", 1.0: "+", -1.0: "-"}[sign]
            dnf.append([_decrease_atom(tpl, m.field, p["eps"], p["eps_t3"],
                                       f"Bdot{tag}[{m.name}]",
                                       extra_base, extra_coeffs)])
    clauses.append(Clause(region, dnf, label="decrease"))
    return ConditionSet(tpl, clauses, kind="cbf")


def compile_clfbf(problem: Problem, tpl: CertificateTemplate,
                  lam: float | None = None, eps: float | None = None) -> ConditionSet:
    """Uninitialized reach-while-stay over a basic semialgebraic safe set.

    One clause: everywhere in S less the goal interior, some mode decreases
    the certificate and keeps every (non-exempt) defining inequality of S
    exponentially decreasing.  The exempt constraints are the goal facets
    the trace is allowed to exit through.
    """
    spec = problem.spec
    if not isinstance(spec, UninitRws):
        raise ConditionError("compile_clfbf requires an uninit_rws specification")
    plant = problem.plant
    p = problem.params
    lam = p["lam"] if lam is None else lam
    eps = p["eps"] if eps is None else eps
    region = _goal_excluded(spec.S, spec.G)
    zero_coeffs = [Polynomial.zero(tpl.arity)] * tpl.r
    dnf = []
    for m in plant.modes:
        conj = [_decrease_atom(tpl, m.field, eps, p["eps_t3"], f"Vdot[{m.name}]")]
        for (pj, rel), name in zip(spec.S.constraints, spec.S.names):
            if name in spec.exempt:
                continue
            if rel != "<=0":
                raise ConditionError("uninit_rws S constraints must be <=0 form")
            base = (lie_derivative(pj, m.field) + pj * lam
                    + Polynomial.constant(tpl.arity, eps))
            conj.append(Atom(base, zero_coeffs, p["eps_t3"],
                             f"facet[{name},{m.name}]"))
        dnf.append(conj)
    return ConditionSet(tpl, [Clause(region, dnf, label="decrease")], kind="clfbf")


def compile_robust(cs: ConditionSet, D: Box) -> ConditionSet:
    """Extend every decrease atom with additive disturbance variables.

    The disturbance enters the dynamics as xdot = f_u(x) + d, so each
    decrease atom gains the gradient-dot-d term; positivity clauses are
    untouched.  Witnesses against the robust set carry one disturbance
    block per disjunct.
    """
    tpl = cs.template
    n = tpl.arity
    if D.arity != n:
        raise ConditionError("disturbance box arity != state arity")
    if cs.kind == "clfbf":
        # facet atoms embed the Lie derivative of fixed barriers, whose
        # disturbance terms are not recoverable here
        raise ConditionError("robust compilation supports clbf/cbf sets only")
    ext = n + D.arity
    d_vars = [Polynomial.variable(ext, n + j) for j in range(D.arity)]

    def extend_atom(atom: Atom) -> Atom:
        base = atom.base.lift(ext)
        for j, dj in enumerate(d_vars):
            g = tpl.offset.diff(j)
            if not g.is_zero():
                base = base + g.lift(ext) * dj
        coeffs = []
        for g, cp in zip(tpl.basis, atom.coeff_polys):
            q = cp.lift(ext)
            for j, dj in enumerate(d_vars):
                gj = g.diff(j)
                if not gj.is_zero():
                    q = q + gj.lift(ext) * dj
            coeffs.append(q)
        return Atom(base, coeffs, atom.margin, atom.label + "+d")

    clauses = []
    for cl in cs.clauses:
        if cl.label == "decrease":
            dnf = [[extend_atom(a) for a in conj] for conj in cl.dnf]
            clauses.append(Clause(cl.region, dnf, cl.label, robust=True))
        else:
            clauses.append(cl)
    return ConditionSet(tpl, clauses, kind=cs.kind, disturbance=D)


def compile_conditions(problem: Problem, tpl: CertificateTemplate) -> ConditionSet:
    """Compile per the spec kind, adding the robust extension if needed."""
    spec = problem.spec
    if isinstance(spec, Rws):
        cs = compile_clbf(problem, tpl)
    elif isinstance(spec, Safety):
        cs = compile_cbf(problem, tpl)
    else:
        cs = compile_clfbf(problem, tpl)
    dist = getattr(problem.plant, "disturbance", None)
    if dist is not None:
        cs = compile_robust(cs, dist)
    return cs


# ------------------------------------------------------------ instantiation

def _atom_point(atom: Atom, x, d):
    n = len(x)
    if atom.arity == n:
        return tuple(x)
    if d is None:
        raise ConditionError(f"atom {atom.label!r} needs a disturbance assignment")
    return tuple(x) + tuple(d)


def atom_values(clause: Clause, c, x, d=None):
    """Per-disjunct atom values; d may be a single vector or a map q -> vector."""
    out = []
    for q, conj in enumerate(clause.dnf):
        dq = d.get(q) if isinstance(d, dict) else d
        out.append([a.value(c, _atom_point(a, x, dq)) for a in conj])
    return out


def clause_satisfied(clause: Clause, c, x, d=None, use_margins=True) -> bool:
    """Region membership implies some conjunct has every atom below its margin."""
    if not clause.region.contains(tuple(x)[:clause.region.arity]):
        return True
    vals = atom_values(clause, c, x, d)
    for conj, conj_vals in zip(clause.dnf, vals):
        margins = [a.margin if use_margins else 0.0 for a in conj]
        if all(v < -m for v, m in zip(conj_vals, margins)):
            return True
    return False


def violation_value(clause: Clause, c, x, d=None) -> float:
    """min over disjuncts of max over atoms; positive means the clause fails at x."""
    vals = atom_values(clause, c, x, d)
    return min(max(conj_vals) for conj_vals in vals)


def instantiate(obj, c, x, d=None):
    """Numeric atom values for a clause, or per-clause satisfaction for a set."""
    if isinstance(obj, Clause):
        return atom_values(obj, c, x, d)
    if isinstance(obj, ConditionSet):
        return [clause_satisfied(cl, c, x, d) for cl in obj.clauses]
    raise ConditionError(f"cannot instantiate {type(obj).__name__}")
