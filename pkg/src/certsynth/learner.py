"""Candidate maintenance and selection for the inductive synthesis loop.

The candidate region lives in coefficient space: a bounding box, convex
half-space cuts (from single-disjunct clauses and demonstrator-fixed
observations), and per-witness disjunctive groups.  Strict inequalities
are realized as closed cuts shifted by the strengthening margin, so each
counterexample removes a whole ball of candidates and the loop terminates.

Equality constraints on the coefficients are factored out once by Gaussian
elimination; all geometry (LP, centers, ellipsoids, volumes) happens in the
reduced full-dimensional space.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from certsynth.conditions import Clause, ConditionSet
from certsynth.intervals import Box

_LP_TOL = 1e-9


class LearnerError(RuntimeError):
    pass


class Infeasible:
    """Marker result: the constraint system admits no point."""

    def __repr__(self):
        return "Infeasible"


INFEASIBLE = Infeasible()


class DisjunctSearchBudget(LearnerError):
    """The exhaustive disjunct-assignment search exceeded its LP budget.

    Emptiness is only ever claimed after a complete search, so running out
    of budget is surfaced instead of being reported as Infeasible."""


@dataclass
class LpResult:
    status: str                  # "optimal" | "infeasible"
    point: np.ndarray | None
    value: float | None


def lp_solve(objective, constraints, bounds: Box) -> LpResult:
    """Maximize objective . c subject to half-spaces a.c <= b inside bounds."""
    obj = np.asarray(objective, dtype=float)
    r = len(obj)
    if constraints:
        A = np.array([a for a, _ in constraints], dtype=float)
        b = np.array([rhs for _, rhs in constraints], dtype=float)
    else:
        A, b = None, None
    lp_bounds = [(iv.lo, iv.hi) for iv in bounds]
    res = linprog(-obj, A_ub=A, b_ub=b, bounds=lp_bounds, method="highs")
    if res.status == 2:
        return LpResult("infeasible", None, None)
    if not res.success:
        raise LearnerError(f"LP solver failure: {res.message}")
    return LpResult("optimal", np.asarray(res.x), float(obj @ res.x))


def _feasible_point_slack(constraints, bounds: Box, margin_cap: float = 1.0):
    """Interior-leaning feasible point via the uniform-slack LP.

    Maximizes t with a.c + t*|a| <= b, capped so an unbounded interior does
    not distort the solution.  Returns (point, achieved slack) or (None, -inf).
    """
    r = bounds.arity
    rows = []
    rhs = []
    for a, b in constraints:
        rows.append(list(a) + [float(np.linalg.norm(a)) or 1.0])
        rhs.append(b)
    lp_bounds = [(iv.lo, iv.hi) for iv in bounds] + [(0.0, margin_cap)]
    res = linprog(np.array([0.0] * r + [-1.0]),
                  A_ub=np.array(rows) if rows else None,
                  b_ub=np.array(rhs) if rhs else None,
                  bounds=lp_bounds, method="highs")
    if res.status == 2 or not res.success:
        return None, -math.inf
    return np.asarray(res.x[:r]), float(res.x[r])


def _feasible_point(constraints, bounds: Box, margin_cap: float = 1.0):
    return _feasible_point_slack(constraints, bounds, margin_cap)[0]


def chebyshev_center(constraints, bounds: Box):
    """Center and radius of the largest ball inside the polytope."""
    r = bounds.arity
    rows, rhs = [], []
    for a, b in constraints:
        a = np.asarray(a, dtype=float)
        rows.append(list(a) + [float(np.linalg.norm(a))])
        rhs.append(b)
    for i, iv in enumerate(bounds):
        e = [0.0] * r
        e[i] = 1.0
        rows.append(e + [1.0])
        rhs.append(iv.hi)
        e = [0.0] * r
        e[i] = -1.0
        rows.append(e + [1.0])
        rhs.append(-iv.lo)
    res = linprog(np.array([0.0] * r + [-1.0]), A_ub=np.array(rows),
                  b_ub=np.array(rhs), bounds=[(None, None)] * r + [(0.0, None)],
                  method="highs")
    if res.status == 2 or not res.success:
        return None, -math.inf
    return np.asarray(res.x[:r]), float(res.x[r])


def analytic_center(halfspaces, bounds: Box | None = None, tol: float = 1e-6,
                    max_iter: int = 200):
    """Damped-Newton minimizer of -sum log(b_i - a_i . c).

    Box bounds participate as ordinary constraints when given.  Falls back
    to the Chebyshev center when no strictly interior point is found.
    """
    rows = [(np.asarray(a, dtype=float), float(b)) for a, b in halfspaces]
    if bounds is not None:
        r = bounds.arity
        for i, iv in enumerate(bounds):
            e = np.zeros(r)
            e[i] = 1.0
            rows.append((e.copy(), iv.hi))
            rows.append((-e, -iv.lo))
    if not rows:
        raise LearnerError("analytic center needs at least one constraint")
    A = np.array([a for a, _ in rows])
    b = np.array([rhs for _, rhs in rows])
    r = A.shape[1]

    start_bounds = bounds if bounds is not None else Box([(-1e6, 1e6)] * r)
    c, radius = chebyshev_center(halfspaces, start_bounds)
    if c is None or radius <= 0 or np.min(b - A @ c) <= 0:
        if c is None:
            raise LearnerError("no strictly interior point for analytic center")
        return c
    for _ in range(max_iter):
        slack = b - A @ c
        inv = 1.0 / slack
        grad = A.T @ inv
        H = (A * inv[:, None] ** 2).T @ A
        if np.linalg.norm(grad) < tol:
            return c
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        base = -np.log(slack).sum()
        for _ in range(60):
            cand = c - t * step
            s2 = b - A @ cand
            if np.min(s2) > 0 and -np.log(s2).sum() <= base + 1e-12:
                break
            t *= 0.5
        else:
            return c
        c = cand
    return c


@dataclass
class EllipsoidApprox:
    center: np.ndarray
    shape: np.ndarray            # symmetric positive definite
    log_volume: float            # log(gamma_r) + logdet(shape)
    degenerate: bool = False

    def support(self, a) -> float:
        return float(np.linalg.norm(self.shape @ np.asarray(a)))


def unit_ball_log_volume(r: int) -> float:
    return (r / 2) * math.log(math.pi) - math.lgamma(r / 2 + 1)


def _solve_mve(A, b):
    """Determinant-maximization inscribed ellipsoid, rows pre-normalized."""
    import cvxpy as cp
    r = A.shape[1]
    B = cp.Variable((r, r), symmetric=True)
    d = cp.Variable(r)
    cons = [cp.norm(B @ A[i]) + A[i] @ d <= b[i] for i in range(len(b))]
    prob = cp.Problem(cp.Maximize(cp.log_det(B)), cons)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            prob.solve(solver="CLARABEL", tol_gap_abs=1e-11, tol_gap_rel=1e-11,
                       tol_feas=1e-11)
        except cp.error.SolverError:
            try:
                prob.solve(solver="CLARABEL")      # default tolerances
            except cp.error.SolverError:
                return None, None
    if B.value is None or d.value is None:
        return None, None
    return 0.5 * (B.value + B.value.T), np.asarray(d.value)


def mve_center(halfspaces, bounds: Box, precondition=None) -> EllipsoidApprox:
    """Maximum-volume inscribed ellipsoid of the polytope.

    Solved as a determinant-maximization problem with second-order-cone
    support constraints.  An optional (shape, center) preconditioner maps
    the polytope to roughly unit scale first, which keeps the solve
    accurate as the cutting loop shrinks the region.
    """
    r = bounds.arity
    rows = [(np.asarray(a, dtype=float), float(rhs)) for a, rhs in halfspaces]
    for i, iv in enumerate(bounds):
        e = np.zeros(r)
        e[i] = 1.0
        rows.append((e.copy(), iv.hi))
        rows.append((-e, -iv.lo))
    A = np.array([a for a, _ in rows])
    b = np.array([rhs for _, rhs in rows])

    if precondition is not None:
        M0, c0 = precondition
    else:
        M0, c0 = np.eye(r), np.zeros(r)
    Ap = A @ M0
    bp = b - A @ c0
    norms = np.linalg.norm(Ap, axis=1)
    keep = norms > 1e-14
    Ap, bp, norms = Ap[keep], bp[keep], norms[keep]
    Ap = Ap / norms[:, None]
    bp = bp / norms

    Bz, dz = _solve_mve(Ap, bp)
    if Bz is None:
        center, radius = chebyshev_center(halfspaces, bounds)
        if center is None:
            raise LearnerError("mve_center on an empty region")
        shape = np.eye(r) * max(radius, 0.0)
        return EllipsoidApprox(center, shape, -math.inf, degenerate=True)

    M = M0 @ Bz
    center = c0 + M0 @ dz
    MMt = M @ M.T
    w, V = np.linalg.eigh(0.5 * (MMt + MMt.T))
    w = np.maximum(w, 0.0)
    shape = (V * np.sqrt(w)) @ V.T
    # shrink minimally so the support check holds on every row
    supports = np.linalg.norm(A @ shape, axis=1)
    slacks = b - A @ center
    scale = 1.0
    for s, sl in zip(supports, slacks):
        if s > 1e-300 and sl < s:
            scale = min(scale, max(sl, 0.0) / s)
    if scale < 1.0:
        shape = shape * scale
    degenerate = bool(np.min(w) <= 1e-24)
    sign, logdet = np.linalg.slogdet(shape)
    if sign <= 0:
        return EllipsoidApprox(center, shape, -math.inf, degenerate=True)
    log_volume = unit_ball_log_volume(r) + logdet
    return EllipsoidApprox(center, shape, log_volume, degenerate=degenerate)


def should_terminate(e: EllipsoidApprox, r: int, delta_param: float) -> bool:
    """Volume-based stop: vol(E) < gamma_r * delta^r."""
    threshold = unit_ball_log_volume(r) + r * math.log(delta_param)
    return e.log_volume < threshold


# ------------------------------------------------------------- region


@dataclass(frozen=True)
class Witness:
    x: tuple
    clause_index: int
    disturbances: tuple | None = None   # per-disjunct vectors, robust mode

    def disturbance_map(self):
        if self.disturbances is None:
            return None
        return {q: d for q, d in enumerate(self.disturbances)}


@dataclass(frozen=True)
class Observation:
    x: tuple
    u: object                    # mode name or input vector
    flag: bool | None = None     # safety achievable, barrier demonstrator


class CandidateRegion:
    """Monotone constraint accumulator over the template coefficient box.

    Geometry lives in the reduced space z with c = c0 + N z after equality
    constraints are eliminated; N has orthonormal columns so Euclidean
    margins carry over.
    """

    def __init__(self, template):
        self.template = template
        r = template.r
        if template.equalities:
            A = np.array([row for row, _ in template.equalities], dtype=float)
            rhs = np.array([v for _, v in template.equalities], dtype=float)
            c0, *_ = np.linalg.lstsq(A, rhs, rcond=None)
            if not np.allclose(A @ c0, rhs, atol=1e-9):
                raise LearnerError("inconsistent template equality constraints")
            _, s, vt = np.linalg.svd(A)
            rank = int((s > 1e-12).sum())
            N = vt[rank:].T
        else:
            c0 = np.zeros(r)
            N = np.eye(r)
        self.c0 = c0
        self.N = N
        self.dim = N.shape[1]
        self.bounds = Box([(-template.delta_bound, template.delta_bound)] * self.dim)
        self.cuts: list = []           # (a, b) closed half-spaces in z
        self.groups: list = []         # per witness: list of alternatives,
        #                                alternative = list of (a, b)
        self.group_meta: list = []     # Witness or Observation provenance

    def to_c(self, z) -> np.ndarray:
        return self.c0 + self.N @ np.asarray(z)

    def _reduce_cut(self, w, rhs):
        # w . c <= rhs  ->  (N^T w) . z <= rhs - w . c0
        w = np.asarray(w, dtype=float)
        return self.N.T @ w, rhs - float(w @ self.c0)

    def _clause_alternatives(self, clause: Clause, witness: Witness):
        dmap = witness.disturbance_map()
        alternatives = []
        for q, conj in enumerate(clause.dnf):
            alt = []
            for atom in conj:
                point = witness.x
                if atom.arity > len(witness.x):
                    if dmap is None:
                        raise LearnerError(
                            "robust clause witness must carry disturbances")
                    point = tuple(witness.x) + tuple(dmap[q])
                w, rhs = atom.cut(point)
                alt.append(self._reduce_cut(w, rhs))
            alternatives.append(alt)
        return alternatives

    def add_witness(self, cs: ConditionSet, witness: Witness,
                    slack: float = 1e-9, generating_candidate=None) -> None:
        """Record the disjunctive requirement the witness imposes.

        When the candidate that produced the witness is supplied, the
        disjuncts are ordered least-violated-first (ties by index) so the
        depth-first assignment search leans toward the branch closest to
        satisfiable; the search stays deterministic and exhaustive.
        """
        clause = cs.clauses[witness.clause_index]
        x = tuple(witness.x)[:clause.region.arity]
        if not clause.region.contains_slack(x, slack):
            raise LearnerError("witness lies outside its clause region")
        alternatives = self._clause_alternatives(clause, witness)
        if len(alternatives) == 1:
            self.cuts.extend(alternatives[0])
            return
        if generating_candidate is not None:
            from certsynth.conditions import atom_values
            vals = atom_values(clause, generating_candidate, witness.x,
                               witness.disturbance_map())
            order = sorted(range(len(alternatives)),
                           key=lambda q: (max(vals[q]), q))
            alternatives = [alternatives[q] for q in order]
        self.groups.append(alternatives)
        self.group_meta.append(witness)

    def add_observation(self, cs: ConditionSet, clause_index: int,
                        obs: Observation, disjunct: int) -> None:
        """Fix one disjunct of the clause at the observed state: convex cuts."""
        clause = cs.clauses[clause_index]
        witness = Witness(obs.x, clause_index)
        alternatives = self._clause_alternatives(clause, witness)
        if not (0 <= disjunct < len(alternatives)):
            raise LearnerError("disjunct index out of range")
        self.cuts.extend(alternatives[disjunct])

    def satisfies(self, c, tol: float = 1e-7) -> bool:
        z, *_ = np.linalg.lstsq(self.N, np.asarray(c) - self.c0, rcond=None)
        if not all(iv.lo - tol <= v <= iv.hi + tol for iv, v in zip(self.bounds, z)):
            return False
        if any(float(a @ z) > b + tol for a, b in self.cuts):
            return False
        for group in self.groups:
            if not any(all(float(a @ z) <= b + tol for a, b in alt)
                       for alt in group):
                return False
        return True


def _greedy_assignment(region: CandidateRegion, max_sweeps: int = 4):
    """Coherent disjunct choices swept to a fixed point from several
    deterministic starting points; the feasible assignment with the largest
    uniform slack wins.  Probing both extremes of every coordinate keeps a
    single early branch choice from confining the whole search to one side
    of parameter space.  Returns per-group cut lists, or None when every
    greedy chain hits infeasibility (the exhaustive search takes over)."""
    groups = region.groups
    if not groups:
        return []
    z0 = _feasible_point(list(region.cuts), region.bounds)
    if z0 is None:
        return None
    r = region.dim
    half = region.template.delta_bound / 2
    starts = [z0]
    for i in range(r):
        e = np.zeros(r)
        e[i] = half
        starts.append(z0 + e)
        starts.append(z0 - e)

    def slack_key(alt, point):
        return max(float(np.dot(a, point)) - b for a, b in alt)

    def sweep(z):
        choice = None
        slack = -math.inf
        for _ in range(max_sweeps):
            new_choice = [min(range(len(g)),
                              key=lambda q: (slack_key(g[q], z), q))
                          for g in groups]
            cuts = list(region.cuts)
            for g, q in zip(groups, new_choice):
                cuts.extend(g[q])
            z_new, slack = _feasible_point_slack(cuts, region.bounds)
            if z_new is None:
                return None, -math.inf
            z = z_new
            if new_choice == choice:
                break
            choice = new_choice
        return choice, slack

    best = None
    best_slack = -math.inf
    for z in starts:
        choice, slack = sweep(z)
        if choice is not None and slack > best_slack + 1e-12:
            best, best_slack = choice, slack
    if best is None:
        return None
    return [g[q] for g, q in zip(groups, best)]


def _dfs_feasible(region: CandidateRegion, center_of, max_lp_calls=20_000):
    """Disjunct assignment search: a greedy coherent pass first, then
    exhaustive depth-first with LP pruning, so Empty stays a proof.

    Groups are visited fewest-alternatives-first, which narrows the tree
    early; the LP budget guards against combinatorial blowup on systems
    with no certificate, where the region never stops being almost-empty.
    """
    groups = region.groups
    greedy = _greedy_assignment(region)
    if greedy is not None:
        cuts = list(region.cuts)
        for alt in greedy:
            cuts.extend(alt)
        result = center_of(cuts)
        if result is not None:
            return result

    order = sorted(range(len(groups)), key=lambda g: (len(groups[g]), g))
    ordered = [groups[g] for g in order]
    calls = [0]

    def feasible(cuts):
        calls[0] += 1
        if calls[0] > max_lp_calls:
            raise DisjunctSearchBudget(
                f"disjunct search exceeded {max_lp_calls} LP calls")
        return _feasible_point(cuts, region.bounds) is not None

    def descend(prefix_cuts, gi):
        if gi == len(ordered):
            return center_of(prefix_cuts)
        for alt in ordered[gi]:
            cuts = prefix_cuts + alt
            if not feasible(cuts):
                continue
            result = descend(cuts, gi + 1)
            if result is not None:
                return result
        return None

    return descend(list(region.cuts), 0)


def find_candidate(region: CandidateRegion, policy: str = "first_feasible",
                   seed: int = 0, precondition=None):
    """A coefficient vector satisfying every accumulated constraint, or Empty.

    Disjunctive witness groups are resolved by depth-first search over
    per-witness disjunct choices with LP feasibility pruning; the Empty
    verdict is therefore exhaustive, not heuristic.
    """
    if policy == "mve":
        c, _ = mve_candidate(region, precondition=precondition)
        return c

    def center_of(cuts):
        if policy == "first_feasible":
            z = _feasible_point(cuts, region.bounds)
        elif policy == "chebyshev":
            z, _ = chebyshev_center(cuts, region.bounds)
        elif policy == "analytic":
            z = analytic_center(cuts, region.bounds)
        else:
            raise LearnerError(f"unknown candidate policy {policy!r}")
        if z is None:
            return None
        return region.to_c(z)

    result = _dfs_feasible(region, center_of)
    if result is None:
        return INFEASIBLE
    return result


def mve_candidate(region: CandidateRegion, precondition=None):
    """MVE-center candidate plus the inscribed ellipsoid (for the volume stop)."""
    found = {}

    def center_of(cuts):
        ell = mve_center(cuts, region.bounds, precondition=precondition)
        found["ellipsoid"] = ell
        return region.to_c(ell.center)

    result = _dfs_feasible(region, center_of)
    if result is None:
        return INFEASIBLE, None
    return result, found["ellipsoid"]
