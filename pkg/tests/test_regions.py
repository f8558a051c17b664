import numpy as np
import pytest

from certsynth.intervals import Box
from certsynth.poly import parse_poly
from certsynth.regions import (Ball, EmptySampleSpace, HalfSpace, Polytope,
                               SemialgebraicRegion, box_faces, contains,
                               exclude_interior, sample, sample_many)


# ---------------------------------------------------------------- box faces

def test_box_faces_2d_count():
    faces = box_faces(Box([(-1, 1), (-1, 1)]))
    assert len(faces) == 4


def test_box_faces_4d_count():
    # 2n faces, not the 80 vertex-incident facets of a 4-D box
    faces = box_faces(Box([(-1, 1)] * 4))
    assert len(faces) == 8


def test_box_faces_cover_boundary():
    b = Box([(0, 2), (0, 3)])
    faces = box_faces(b)
    rng = np.random.default_rng(3)
    for _ in range(500):
        # draw a boundary point: pin one coordinate to an endpoint
        dim = rng.integers(0, 2)
        side = rng.integers(0, 2)
        x = [rng.uniform(0, 2), rng.uniform(0, 3)]
        x[dim] = (b[dim].lo, b[dim].hi)[side]
        hits = sum(f.contains(tuple(x)) for f in faces)
        assert hits in (1, 2)


def test_box_faces_inside_box_not_interior():
    b = Box([(0, 2), (0, 3)])
    rng = np.random.default_rng(5)
    for f in box_faces(b):
        for _ in range(50):
            x = f.box.sample(rng)
            assert b.contains(x)
            strictly_inside = all(iv.lo < v < iv.hi for iv, v in zip(b, x))
            assert not strictly_inside


# ---------------------------------------------------------------- exclusion

def test_exclude_unit_ball():
    region = exclude_interior(Box([(-2, 2), (-2, 2)]), Ball((0.0, 0.0), 1.0))
    assert not region.contains((0.0, 0.0))
    assert region.contains((1.5, 0.0))


def test_exclude_matches_predicate_on_grid():
    S = Box([(-1, 1), (-1, 1)])
    G = Ball((0.0, 0.0), 0.2)
    region = exclude_interior(S, G)
    xs = np.linspace(-1.2, 1.2, 100)
    for x in xs:
        for y in xs:
            direct = S.contains((x, y)) and (x * x + y * y) >= 0.04
            assert region.contains((x, y)) == direct


def test_exclude_radius_zero():
    outer = Box([(-1, 1), (-1, 1)])
    region = exclude_interior(outer, (((0.0, 0.0)), 0.0))
    assert not region.contains((0.0, 0.0))
    rng = np.random.default_rng(9)
    for _ in range(200):
        x = outer.sample(rng)
        assert region.contains(x) == (x != (0.0, 0.0))


def test_exclude_center_outside_box():
    with pytest.raises(Exception):
        exclude_interior(Box([(0, 1), (0, 1)]), Ball((5.0, 5.0), 0.5))


# ---------------------------------------------------------------- sampling

def test_sample_box_member():
    b = Box([(0, 1), (0, 1)])
    x = sample(b, seed=0)
    assert b.contains(x)


def test_sample_ball_members():
    ball = Ball((0.0, 0.0), 0.8)
    pts = sample_many(ball, 1000, seed=1)
    for x in pts:
        assert x[0] ** 2 + x[1] ** 2 <= 0.8 ** 2 + 1e-12


def test_sample_deterministic():
    region = Ball((0.0, 0.0), 0.5).to_region()
    assert sample(region, seed=42) == sample(region, seed=42)


def test_sample_mean_near_center():
    b = Box([(0, 1), (0, 2)])
    pts = np.array(sample_many(b, 100_000, seed=2))
    assert np.abs(pts.mean(axis=0) - [0.5, 1.0]).max() < 0.02


def test_sample_budget_exhausted():
    thin = SemialgebraicRegion(Box([(0, 1)]),
                               [(parse_poly("x - 2", ["x"]), ">=0")])
    with pytest.raises(EmptySampleSpace):
        sample(thin, seed=0, max_rejections=100)


# ---------------------------------------------------------------- contains

def test_contains_ball_origin():
    assert contains(Ball((0.0, 0.0), 0.5), (0.0, 0.0))


def test_contains_polytope_strict():
    poly = Polytope([HalfSpace((1.0, 0.0), 10.0, strict=True)])
    assert not poly.contains((10.0, 0.0))
    assert poly.contains((9.999, 0.0))


def test_contains_agrees_with_per_constraint_check():
    rng = np.random.default_rng(13)
    box = Box([(-1, 1), (-1, 1)])
    p1 = parse_poly("x^2 + y^2 - 0.5", ["x", "y"])
    p2 = parse_poly("x - y", ["x", "y"])
    region = SemialgebraicRegion(box, [(p1, "<=0"), (p2, ">0")])
    for _ in range(500):
        x = tuple(rng.uniform(-1.2, 1.2, size=2))
        expect = (box.contains(x) and p1.evaluate(x) <= 0.0 and p2.evaluate(x) > 0.0)
        assert region.contains(x) == expect


def test_polytope_closure_idempotent():
    poly = Polytope([HalfSpace((1.0,), 1.0, strict=True),
                     HalfSpace((-1.0,), 0.0, strict=False)])
    closed = poly.closure()
    assert all(not h.strict for h in closed.halfspaces)
    twice = closed.closure()
    assert [(h.a, h.b, h.strict) for h in twice.halfspaces] == \
           [(h.a, h.b, h.strict) for h in closed.halfspaces]
