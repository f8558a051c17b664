"""Closed intervals and axis-aligned boxes with outward-slack arithmetic.

The arithmetic here backs the branch-and-bound falsifier.  It uses plain
floats widened by a small configurable slack per operation instead of
directed rounding; the downstream decision procedure is itself numerical,
so rigorous rounding is out of scope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# per-operation outward widening, relative to magnitude (plus absolute floor)
DEFAULT_SLACK = 1e-12


def _widen(lo: float, hi: float, slack: float) -> tuple[float, float]:
    if slack == 0.0:
        return lo, hi
    pad = slack * max(1.0, abs(lo), abs(hi))
    return lo - pad, hi + pad


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo <= self.hi):
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @staticmethod
    def point(v: float) -> "Interval":
        return Interval(v, v)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, v: float) -> bool:
        return self.lo <= v <= self.hi

    def add(self, other: "Interval", slack: float = DEFAULT_SLACK) -> "Interval":
        return Interval(*_widen(self.lo + other.lo, self.hi + other.hi, slack))

    def scale(self, k: float, slack: float = DEFAULT_SLACK) -> "Interval":
        a, b = k * self.lo, k * self.hi
        if a > b:
            a, b = b, a
        return Interval(*_widen(a, b, slack))

    def mul(self, other: "Interval", slack: float = DEFAULT_SLACK) -> "Interval":
        cands = (self.lo * other.lo, self.lo * other.hi,
                 self.hi * other.lo, self.hi * other.hi)
        return Interval(*_widen(min(cands), max(cands), slack))

    def power(self, k: int, slack: float = DEFAULT_SLACK) -> "Interval":
        if k < 0:
            raise ValueError("negative exponent")
        if k == 0:
            return Interval(1.0, 1.0)
        if k == 1:
            return self
        lo_k, hi_k = self.lo ** k, self.hi ** k
        if k % 2 == 1:
            return Interval(*_widen(lo_k, hi_k, slack))
        hi_val = max(lo_k, hi_k)
        lo_val = 0.0 if self.lo <= 0.0 <= self.hi else min(lo_k, hi_k)
        return Interval(*_widen(lo_val, hi_val, slack))


class Box:
    """Axis-aligned product of intervals."""

    __slots__ = ("ivs",)

    def __init__(self, ivs):
        ivs = [iv if isinstance(iv, Interval) else Interval(float(iv[0]), float(iv[1]))
               for iv in ivs]
        if not ivs:
            raise ValueError("box needs at least one dimension")
        self.ivs = tuple(ivs)

    @property
    def arity(self) -> int:
        return len(self.ivs)

    def __getitem__(self, i: int) -> Interval:
        return self.ivs[i]

    def __iter__(self):
        return iter(self.ivs)

    def __eq__(self, other):
        return isinstance(other, Box) and self.ivs == other.ivs

    def __repr__(self):
        return "Box(%s)" % ", ".join(f"[{iv.lo:g},{iv.hi:g}]" for iv in self.ivs)

    def midpoint(self):
        return tuple(iv.mid for iv in self.ivs)

    def contains(self, x) -> bool:
        return len(x) == self.arity and all(iv.contains(float(v)) for iv, v in zip(self.ivs, x))

    def widest_dim(self, restrict=None) -> int:
        dims = range(self.arity) if restrict is None else restrict
        return max(dims, key=lambda i: self.ivs[i].width)

    def split(self, dim: int) -> tuple["Box", "Box"]:
        iv = self.ivs[dim]
        m = iv.mid
        left = list(self.ivs)
        right = list(self.ivs)
        left[dim] = Interval(iv.lo, m)
        right[dim] = Interval(m, iv.hi)
        return Box(left), Box(right)

    def volume(self) -> float:
        return math.prod(iv.width for iv in self.ivs)

    def max_width(self, restrict=None) -> float:
        dims = range(self.arity) if restrict is None else restrict
        return max(self.ivs[i].width for i in dims) if dims else 0.0

    def sample(self, rng):
        return tuple(iv.lo + rng.random() * iv.width for iv in self.ivs)

    def corners(self):
        pts = [()]
        for iv in self.ivs:
            pts = [p + (v,) for p in pts for v in (iv.lo, iv.hi)]
        return pts

    def concat(self, other: "Box") -> "Box":
        return Box(self.ivs + other.ivs)
