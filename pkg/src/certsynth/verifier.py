"""Falsification by interval branch-and-bound over clause regions.

Given a candidate coefficient vector, each clause instantiates to plain
polynomials; the falsifier searches the clause region for a point where
every disjunct has some atom >= 0 (the negated condition), steered toward
the most egregious violation by the gamma threshold.  Unsat is certified
when every surviving box has interval upper bound below -delta.

The queue is best-first by upper bound, popped in chunks so the polynomial
enclosures vectorize over boxes; the traversal is deterministic.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from certsynth.conditions import Clause, ConditionSet
from certsynth.intervals import Box
from certsynth.learner import Witness
from certsynth.model import ControlAffinePlant, Mode, SwitchedPlant
from certsynth.poly import Polynomial

_CHUNK = 2048


@dataclass(frozen=True)
class SearchBudget:
    max_boxes: int = 2_000_000
    min_width: float = 1e-6
    delta: float = 1e-3

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")


@dataclass(frozen=True)
class DeltaSat:
    point: tuple
    violation: float
    disturbances: tuple | None = None
    extras: tuple = ()           # further (point, violation) pairs, diverse


class Unsat:
    def __repr__(self):
        return "Unsat"


UNSAT = Unsat()


class Inconclusive(RuntimeError):
    """Budget exhausted with the supremum bracketed around zero."""

    def __init__(self, sup_upper, best_found):
        super().__init__(
            f"undecidable at this delta: sup bound {sup_upper:.3g}, best point "
            f"value {best_found:.3g}; lower delta or raise the budget")
        self.sup_upper = sup_upper
        self.best_found = best_found


@dataclass(frozen=True)
class Counterexample:
    clause_index: int
    witness: Witness
    violation: float
    extras: tuple = ()           # further witnesses from the same clause


class Ok:
    def __repr__(self):
        return "Ok"


OK = Ok()


def _split_disturbance(p: Polynomial, n: int):
    """Write p(x, d) = p0(x) + sum_j pj(x) d_j; requires degree <= 1 in d."""
    ext = p.arity
    p0_terms = {}
    pj_terms = [dict() for _ in range(ext - n)]
    for e, c in p.terms.items():
        d_part = e[n:]
        total = sum(d_part)
        if total == 0:
            p0_terms[e[:n]] = p0_terms.get(e[:n], 0.0) + c
        elif total == 1:
            j = d_part.index(1)
            pj_terms[j][e[:n]] = pj_terms[j].get(e[:n], 0.0) + c
        else:
            raise ValueError("atom is not affine in the disturbance variables")
    return (Polynomial(n, p0_terms), [Polynomial(n, t) for t in pj_terms])


class _ClauseProblem:
    """Instantiated polynomials and region data for one (clause, candidate)."""

    def __init__(self, clause: Clause, c, disturbance: Box | None):
        self.clause = clause
        self.n = clause.region.arity
        self.D = disturbance if clause.robust else None
        self.state_box = clause.region.box
        self.constraints = clause.region.constraints
        self.disjuncts = []          # per q: list of (poly_ext, p0, [pj])
        for conj in clause.dnf:
            atoms = []
            for atom in conj:
                p = atom.instantiated(c)
                if clause.robust and p.arity > self.n:
                    p0, pj = _split_disturbance(p, self.n)
                    atoms.append((p, p0, pj))
                else:
                    atoms.append((p, p, []))
            self.disjuncts.append(atoms)

    # ---- vectorized bounds over a batch of state boxes ----

    def phi_upper(self, los, his):
        """Upper bound of min_q max_s sup_d atom over each box in the batch."""
        B = los.shape[0]
        result = np.full(B, np.inf)
        if self.D is not None:
            d_lo = np.array([iv.lo for iv in self.D])
            d_hi = np.array([iv.hi for iv in self.D])
            ext_lo = np.concatenate(
                [los, np.broadcast_to(d_lo, (B, len(d_lo)))], axis=1)
            ext_hi = np.concatenate(
                [his, np.broadcast_to(d_hi, (B, len(d_hi)))], axis=1)
        for atoms in self.disjuncts:
            q_ub = np.full(B, -np.inf)
            for p, p0, pj in atoms:
                if p.arity > self.n:
                    _, hi = p.bound_batch(ext_lo, ext_hi)
                else:
                    _, hi = p.bound_batch(los, his)
                q_ub = np.maximum(q_ub, hi)
            result = np.minimum(result, q_ub)
        return result

    def constraint_feasible(self, los, his):
        """False where a region constraint is certainly violated on the box."""
        B = los.shape[0]
        keep = np.ones(B, dtype=bool)
        for p, rel in self.constraints:
            lo, hi = p.bound_batch(los, his)
            if rel in ("<=0", "<0"):
                keep &= lo <= 0.0
            else:
                keep &= hi >= 0.0
        return keep

    def point_in_region(self, x, delta):
        for iv, v in zip(self.state_box, x):
            if not (iv.lo - delta <= v <= iv.hi + delta):
                return False
        for p, rel in self.constraints:
            v = p.evaluate(x)
            if rel in ("<=0", "<0") and v > delta:
                return False
            if rel in (">=0", ">0") and v < -delta:
                return False
        return True

    def phi_at(self, x):
        """Exact value at a state point, maximizing each disjunct over D corners.

        Returns (value, per-disjunct disturbance tuple or None).
        """
        best_per_q = []
        d_per_q = []
        for atoms in self.disjuncts:
            q_best = -np.inf
            q_d = None
            for p, p0, pj in atoms:
                if self.D is None or p.arity == self.n:
                    v = p0.evaluate(x)
                    d = None
                else:
                    v = p0.evaluate(x)
                    d = []
                    for j, iv in enumerate(self.D):
                        coef = pj[j].evaluate(x)
                        dj = iv.hi if coef >= 0 else iv.lo
                        v += coef * dj
                        d.append(dj)
                if v > q_best:
                    q_best = v
                    q_d = d
            best_per_q.append(q_best)
            d_per_q.append(q_d)
        k = int(np.argmin(best_per_q))
        value = best_per_q[k]
        if self.D is None:
            return value, None
        return value, tuple(tuple(d) if d is not None else tuple(iv.mid for iv in self.D)
                            for d in d_per_q)

    def phi_at_batch(self, mids):
        """Vectorized phi over midpoints (state only); corner-maximized in d."""
        B = mids.shape[0]
        result = np.full(B, np.inf)
        for atoms in self.disjuncts:
            q_val = np.full(B, -np.inf)
            for p, p0, pj in atoms:
                v = p0.evaluate(mids)
                for j, iv in enumerate(self.D or ()):
                    if j < len(pj):
                        coef = pj[j].evaluate(mids)
                        v = v + np.where(coef >= 0, coef * iv.hi, coef * iv.lo)
                q_val = np.maximum(q_val, np.asarray(v, dtype=float))
            result = np.minimum(result, q_val)
        return result


def _search(problem: _ClauseProblem, gamma: float, budget: SearchBudget,
            certify_threshold: float):
    """One branch-and-bound pass.

    Returns ("unsat", sup_bound), ("sat", x, value), or
    ("inconclusive", sup_bound, best_value).
    """
    n = problem.n
    los = np.array([[iv.lo for iv in problem.state_box]])
    his = np.array([[iv.hi for iv in problem.state_box]])
    splittable = [i for i in range(n)
                  if problem.state_box[i].width > 0.0]

    explored = 0
    stale_sup = -np.inf        # max ub among dropped-unresolved boxes
    best_val, best_x = -np.inf, None
    span = np.array([iv.width if iv.width > 0 else 1.0
                     for iv in problem.state_box])
    pool = []                  # diverse in-region violators (val, x)

    def offer(val, x):
        if val <= 0.0:
            return
        xa = np.asarray(x)
        for i, (v, p) in enumerate(pool):
            if np.all(np.abs(xa - np.asarray(p)) < 0.1 * span):
                if val > v:
                    pool[i] = (val, tuple(x))
                return
        pool.append((val, tuple(x)))
        if len(pool) > 12:
            pool.sort(key=lambda t: -t[0])
            del pool[12:]

    ubs = problem.phi_upper(los, his)
    keep = problem.constraint_feasible(los, his)
    los, his, ubs = los[keep], his[keep], ubs[keep]

    while len(ubs):
        live = ubs >= certify_threshold
        los, his, ubs = los[live], his[live], ubs[live]
        if not len(ubs):
            break
        order = np.argsort(-ubs, kind="stable")
        take = order[:_CHUNK]
        rest = order[_CHUNK:]
        cur_lo, cur_hi, cur_ub = los[take], his[take], ubs[take]
        los, his, ubs = los[rest], his[rest], ubs[rest]

        explored += len(take)

        mids = 0.5 * (cur_lo + cur_hi)
        vals = problem.phi_at_batch(mids)
        vorder = np.argsort(-vals, kind="stable")
        for rank, idx in enumerate(vorder):
            if vals[idx] <= 0.0 or rank >= 24:
                break
            x = tuple(mids[idx])
            if problem.point_in_region(x, budget.delta):
                if vals[idx] > best_val:
                    best_val, best_x = vals[idx], x
                offer(float(vals[idx]), x)
        if math.isinf(gamma) and len(vals):
            # pure certification: any region point at or above the threshold
            # already refutes sup < threshold
            top = int(vorder[0])
            if (vals[top] >= certify_threshold
                    and problem.point_in_region(tuple(mids[top]), 0.0)):
                return ("inconclusive", float(vals[top]), best_val, best_x)
        if not math.isinf(gamma):
            # descend the gamma ladder once the global bound proves the
            # current level unattainable; level 0 accepts any violation
            global_ub = max(float(cur_ub.max()),
                            float(ubs.max()) if len(ubs) else -np.inf,
                            stale_sup)
            # a level within delta of the bound counts as unattainable,
            # otherwise a supremum sitting exactly on a level never resolves
            while gamma > 0.0 and global_ub <= gamma + budget.delta:
                gamma = gamma / 2 if gamma / 2 >= budget.delta else 0.0
            # accept only near-supremum witnesses: the most egregious
            # violation makes the deepest cut in parameter space
            if best_val > gamma and global_ub <= 2.0 * best_val + budget.delta:
                return ("sat", best_x, best_val, pool)

        widths = cur_hi - cur_lo
        if splittable:
            wsub = widths[:, splittable]
            dims = np.array(splittable)[np.argmax(wsub, axis=1)]
            wide = widths[np.arange(len(dims)), dims] > budget.min_width
        else:
            dims = np.zeros(len(cur_lo), dtype=int)
            wide = np.zeros(len(cur_lo), dtype=bool)

        if np.any(~wide):
            # unresolvable at min width: remember the bracket
            stale_sup = max(stale_sup, float(cur_ub[~wide].max()))
        cur_lo, cur_hi, dims = cur_lo[wide], cur_hi[wide], dims[wide]

        if len(cur_lo):
            mid = 0.5 * (cur_lo[np.arange(len(dims)), dims]
                         + cur_hi[np.arange(len(dims)), dims])
            left_hi = cur_hi.copy()
            left_hi[np.arange(len(dims)), dims] = mid
            right_lo = cur_lo.copy()
            right_lo[np.arange(len(dims)), dims] = mid
            new_lo = np.concatenate([cur_lo, right_lo])
            new_hi = np.concatenate([left_hi, cur_hi])
            keep = problem.constraint_feasible(new_lo, new_hi)
            new_lo, new_hi = new_lo[keep], new_hi[keep]
            if len(new_lo):
                new_ub = problem.phi_upper(new_lo, new_hi)
                live = new_ub >= certify_threshold
                los = np.concatenate([los, new_lo[live]])
                his = np.concatenate([his, new_hi[live]])
                ubs = np.concatenate([ubs, new_ub[live]])

        if explored > budget.max_boxes:
            sup = float(ubs.max()) if len(ubs) else stale_sup
            return ("inconclusive", max(sup, stale_sup), best_val, best_x)

    if best_val > 0.0:
        # everything else certified below -delta; the found point is the sup
        return ("sat", best_x, best_val, pool)
    if stale_sup >= certify_threshold:
        return ("inconclusive", stale_sup, best_val, best_x)
    return ("unsat", max(stale_sup, certify_threshold))


def falsify_clause(clause: Clause, c, gamma: float, budget: SearchBudget,
                   disturbance: Box | None = None):
    """DeltaSat with violation > gamma, Unsat, or Inconclusive (raised).

    gamma is halved between passes until zero, trading witness quality for
    completeness.
    """
    problem = _ClauseProblem(clause, c, disturbance)
    outcome = _search(problem, max(gamma, 0.0), budget,
                      certify_threshold=-budget.delta)
    if outcome[0] == "sat":
        x, value = outcome[1], outcome[2]
        pool = outcome[3] if len(outcome) > 3 else []
        _, d = problem.phi_at(x)
        extras = []
        for v, p in sorted(pool, key=lambda t: -t[0]):
            if p == tuple(x):
                continue
            _, dp = problem.phi_at(p)
            extras.append((p, float(v), dp))
        return DeltaSat(tuple(x), float(value), d, tuple(extras))
    if outcome[0] == "unsat":
        return UNSAT
    if outcome[2] > 0.0:
        # budget ran out before the bound closed; the point is still genuine
        x = outcome[3] if len(outcome) > 3 else None
        if x is not None:
            _, d = problem.phi_at(x)
            return DeltaSat(tuple(x), float(outcome[2]), d)
    raise Inconclusive(outcome[1], outcome[2])


def robust_falsify(clause: Clause, c, D: Box, gamma: float,
                   budget: SearchBudget):
    """Falsify a disturbance-extended clause; witnesses carry one block per
    disjunct, each maximizing its own conjunct."""
    if not clause.robust:
        raise ValueError("clause is not marked robust")
    return falsify_clause(clause, c, gamma, budget, disturbance=D)


def certify_margin(clause: Clause, c, threshold: float, budget: SearchBudget,
                   disturbance: Box | None = None) -> bool:
    """True iff branch-and-bound proves sup phi < -threshold over the region."""
    problem = _ClauseProblem(clause, c, disturbance)
    outcome = _search(problem, math.inf, budget, certify_threshold=-threshold)
    return outcome[0] == "unsat"


def verify(cs: ConditionSet, c, budget: SearchBudget, gamma0: float = 8.0):
    """Ok iff every clause is Unsat; else the first DeltaSat as a witness."""
    for idx, clause in enumerate(cs.clauses):
        if clause.robust:
            result = robust_falsify(clause, c, cs.disturbance, gamma0, budget)
        else:
            result = falsify_clause(clause, c, gamma0, budget)
        if isinstance(result, DeltaSat):
            witness = Witness(result.point, idx, result.disturbances)
            extras = tuple(Witness(p, idx, dp) for p, v, dp in result.extras)
            return Counterexample(idx, witness, result.violation, extras)
    return OK


def corner_reduce(plant: ControlAffinePlant) -> SwitchedPlant:
    """Exact reduction of a box-input control-affine plant to corner modes.

    For dynamics affine in u, a decrease direction exists in the box iff it
    exists at a vertex, so the switched conditions are equivalent.
    """
    m = plant.n_inputs
    if m > 8:
        raise ValueError(f"corner reduction would need 2^{m} modes")
    modes = []
    for corner in itertools.product(*[(iv.lo, iv.hi) for iv in plant.input_box]):
        name = "u=(" + ",".join(f"{v:g}" for v in corner) + ")"
        modes.append(Mode(name, plant.field_at(corner)))
    return SwitchedPlant(plant.state, modes)
