"""Geometric carriers: balls, polytopes, compact basic semialgebraic sets.

A semialgebraic region is a compact bounding box plus polynomial sign
constraints; membership requires both.  Boundary decomposition of a box
yields its 2n faces (one coordinate pinned), not the exponentially many
lower-dimensional facets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from certsynth.intervals import Box, Interval
from certsynth.poly import Polynomial

RELATIONS = ("<=0", "<0", ">=0", ">0")


class RegionError(ValueError):
    pass


class EmptySampleSpace(RuntimeError):
    """Rejection sampling exhausted its budget (region too thin)."""


def _rel_holds(value: float, rel: str) -> bool:
    if rel == "<=0":
        return value <= 0.0
    if rel == "<0":
        return value < 0.0
    if rel == ">=0":
        return value >= 0.0
    if rel == ">0":
        return value > 0.0
    raise RegionError(f"unknown relation {rel!r}")


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise RegionError("ball radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def arity(self) -> int:
        return len(self.center)

    def contains(self, x) -> bool:
        if len(x) != self.arity:
            raise RegionError("arity mismatch")
        return sum((float(v) - c) ** 2 for v, c in zip(x, self.center)) <= self.radius ** 2

    def bounding_box(self) -> Box:
        return Box([(c - self.radius, c + self.radius) for c in self.center])

    def indicator_poly(self) -> Polynomial:
        """||x - center||^2 - r^2, nonpositive exactly on the ball."""
        n = self.arity
        p = Polynomial.constant(n, -self.radius ** 2)
        for i, c in enumerate(self.center):
            xi = Polynomial.variable(n, i)
            p = p + (xi - c) * (xi - c)
        return p

    def to_region(self) -> "SemialgebraicRegion":
        return SemialgebraicRegion(self.bounding_box(), [(self.indicator_poly(), "<=0")])


@dataclass(frozen=True)
class HalfSpace:
    a: tuple
    b: float
    strict: bool = False

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))

    def holds(self, c) -> bool:
        lhs = float(np.dot(self.a, c))
        return lhs < self.b if self.strict else lhs <= self.b


class Polytope:
    """Intersection of half-spaces a.c {<,<=} b in parameter space."""

    def __init__(self, halfspaces):
        self.halfspaces = [h if isinstance(h, HalfSpace) else HalfSpace(*h)
                           for h in halfspaces]
        arities = {len(h.a) for h in self.halfspaces}
        if len(arities) > 1:
            raise RegionError("half-space arity mismatch")

    @property
    def arity(self) -> int:
        return len(self.halfspaces[0].a) if self.halfspaces else 0

    def contains(self, c) -> bool:
        return all(h.holds(c) for h in self.halfspaces)

    def closure(self) -> "Polytope":
        return Polytope([HalfSpace(h.a, h.b, strict=False) for h in self.halfspaces])

    def matrix_form(self):
        A = np.array([h.a for h in self.halfspaces], dtype=float)
        b = np.array([h.b for h in self.halfspaces], dtype=float)
        return A, b


class SemialgebraicRegion:
    """Compact box intersected with polynomial sign constraints."""

    def __init__(self, box: Box, constraints=None, names=None):
        self.box = box if isinstance(box, Box) else Box(box)
        self.constraints = []
        for p, rel in (constraints or []):
            if rel not in RELATIONS:
                raise RegionError(f"unknown relation {rel!r}")
            if p.arity != self.box.arity:
                raise RegionError("constraint arity does not match box")
            self.constraints.append((p, rel))
        if names is not None and len(names) != len(self.constraints):
            raise RegionError("constraint name count mismatch")
        self.names = list(names) if names is not None else \
            [f"p{i + 1}" for i in range(len(self.constraints))]

    @property
    def arity(self) -> int:
        return self.box.arity

    def contains(self, x) -> bool:
        if len(x) != self.arity:
            raise RegionError("arity mismatch")
        if not self.box.contains(x):
            return False
        return all(_rel_holds(p.evaluate(x), rel) for p, rel in self.constraints)

    def contains_slack(self, x, slack: float) -> bool:
        """Membership relaxed by an absolute tolerance per constraint."""
        if len(x) != self.arity:
            raise RegionError("arity mismatch")
        if not all(iv.lo - slack <= v <= iv.hi + slack
                   for iv, v in zip(self.box, x)):
            return False
        for p, rel in self.constraints:
            v = p.evaluate(x)
            if rel in ("<=0", "<0") and v > slack:
                return False
            if rel in (">=0", ">0") and v < -slack:
                return False
        return True

    def with_constraint(self, p: Polynomial, rel: str, name=None) -> "SemialgebraicRegion":
        names = self.names + [name or f"p{len(self.constraints) + 1}"]
        return SemialgebraicRegion(self.box, self.constraints + [(p, rel)], names)

    def intersect_box(self, box: Box) -> "SemialgebraicRegion":
        ivs = []
        for a, b in zip(self.box, box):
            lo, hi = max(a.lo, b.lo), min(a.hi, b.hi)
            if lo > hi:
                raise RegionError("empty box intersection")
            ivs.append(Interval(lo, hi))
        return SemialgebraicRegion(Box(ivs), self.constraints, self.names)


def as_region(obj) -> SemialgebraicRegion:
    if isinstance(obj, SemialgebraicRegion):
        return obj
    if isinstance(obj, Ball):
        return obj.to_region()
    if isinstance(obj, Box):
        return SemialgebraicRegion(obj, [])
    raise RegionError(f"cannot interpret {type(obj).__name__} as a region")


def contains(region, x) -> bool:
    """Membership with strictness honored, for any region kind."""
    if isinstance(region, (Ball, SemialgebraicRegion, Polytope, Box)):
        return region.contains(x)
    raise RegionError(f"unsupported region type {type(region).__name__}")


def box_faces(b: Box) -> list[SemialgebraicRegion]:
    """The 2n faces of a compact box, one coordinate pinned per face."""
    faces = []
    for i, iv in enumerate(b.ivs):
        for endpoint in (iv.lo, iv.hi):
            ivs = list(b.ivs)
            ivs[i] = Interval(endpoint, endpoint)
            faces.append(SemialgebraicRegion(Box(ivs), []))
    return faces


def exclude_interior(outer, inner) -> SemialgebraicRegion:
    """Points of `outer` at distance >= radius from the ball center.

    `inner` is a Ball or a (center, radius) pair; radius 0 degenerates to
    excluding the single center point.
    """
    region = as_region(outer)
    if isinstance(inner, Ball):
        center, radius = inner.center, inner.radius
    else:
        center, radius = tuple(float(c) for c in inner[0]), float(inner[1])
    if len(center) != region.arity:
        raise RegionError("arity mismatch")
    if not region.box.contains(center):
        raise RegionError("ball center must lie inside the outer bounding box")
    n = region.arity
    ind = Polynomial.constant(n, -radius ** 2)
    for i, c in enumerate(center):
        xi = Polynomial.variable(n, i)
        ind = ind + (xi - c) * (xi - c)
    rel = "<0" if radius == 0.0 else "<=0"
    return region.with_constraint(-ind, rel, name=f"outside_r{radius:g}")


def sample(region, seed, max_rejections: int = 100_000):
    """Rejection-sample a member point; deterministic for a fixed seed."""
    region = as_region(region)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    for _ in range(max_rejections):
        x = region.box.sample(rng)
        if region.contains(x):
            return x
    raise EmptySampleSpace(
        f"no member found in {max_rejections} draws; region may be thin or empty")


def sample_many(region, count: int, seed, max_rejections: int = 100_000):
    region = as_region(region)
    rng = np.random.default_rng(seed)
    return [sample(region, rng, max_rejections) for _ in range(count)]
