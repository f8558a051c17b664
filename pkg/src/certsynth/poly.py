"""Sparse multivariate polynomials: parser, algebra, calculus, enclosures.

A polynomial is a map from exponent tuples to nonzero float coefficients,
over a fixed arity.  Terms are kept in graded-lexicographic order when
serialized so equal polynomials print identically.
"""

from __future__ import annotations

import math
import re

import numpy as np

from certsynth.intervals import Box, Interval, DEFAULT_SLACK

Monomial = tuple  # exponent tuple, one entry per variable


class PolyError(ValueError):
    pass


class ParseError(PolyError):
    def __init__(self, msg, pos):
        super().__init__(f"{msg} (at position {pos})")
        self.pos = pos


def _grlex_key(exps):
    # graded lex: total degree first, then lexicographic on exponents
    return (sum(exps), exps)


class Polynomial:
    __slots__ = ("arity", "terms", "_cache")

    def __init__(self, arity: int, terms: dict | None = None):
        if arity < 0:
            raise PolyError("arity must be nonnegative")
        self.arity = arity
        clean = {}
        for exps, coef in (terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != arity:
                raise PolyError(f"monomial {exps} does not match arity {arity}")
            if any(e < 0 for e in exps):
                raise PolyError(f"negative exponent in monomial {exps}")
            c = float(coef)
            if c != 0.0:
                clean[exps] = clean.get(exps, 0.0) + c
                if clean[exps] == 0.0:
                    del clean[exps]
        self.terms = clean
        self._cache = {}

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zero(arity: int) -> "Polynomial":
        return Polynomial(arity, {})

    @staticmethod
    def constant(arity: int, c: float) -> "Polynomial":
        if c == 0.0:
            return Polynomial.zero(arity)
        return Polynomial(arity, {tuple([0] * arity): c})

    @staticmethod
    def variable(arity: int, i: int) -> "Polynomial":
        exps = [0] * arity
        exps[i] = 1
        return Polynomial(arity, {tuple(exps): 1.0})

    @staticmethod
    def monomial(arity: int, exps, coef: float = 1.0) -> "Polynomial":
        return Polynomial(arity, {tuple(exps): coef})

    # -- basic algebra -----------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.arity, float(other))
        if self.arity != other.arity:
            raise PolyError("arity mismatch in +")
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0.0) + c
        return Polynomial(self.arity, out)

    def __radd__(self, other):
        return self.__add__(other)

    def __neg__(self):
        return Polynomial(self.arity, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.arity, float(other))
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            k = float(other)
            return Polynomial(self.arity, {e: c * k for e, c in self.terms.items()})
        if self.arity != other.arity:
            raise PolyError("arity mismatch in *")
        out = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return Polynomial(self.arity, out)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise PolyError("exponent must be a nonnegative integer")
        result = Polynomial.constant(self.arity, 1.0)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __eq__(self, other):
        return (isinstance(other, Polynomial) and self.arity == other.arity
                and self.terms == other.terms)

    def __hash__(self):
        return hash((self.arity, frozenset(self.terms.items())))

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def is_constant(self) -> bool:
        return all(sum(e) == 0 for e in self.terms)

    def constant_value(self) -> float:
        return self.terms.get(tuple([0] * self.arity), 0.0)

    # -- evaluation --------------------------------------------------------

    def _arrays(self):
        arr = self._cache.get("arrays")
        if arr is None:
            if self.terms:
                keys = sorted(self.terms, key=_grlex_key)
                exps = np.array(keys, dtype=np.int64)
                coefs = np.array([self.terms[k] for k in keys])
            else:
                exps = np.zeros((0, self.arity), dtype=np.int64)
                coefs = np.zeros(0)
            arr = (exps, coefs)
            self._cache["arrays"] = arr
        return arr

    def __call__(self, x):
        return self.evaluate(x)

    def evaluate(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.arity:
            raise PolyError(f"point arity {x.shape[-1]} != polynomial arity {self.arity}")
        exps, coefs = self._arrays()
        if len(coefs) == 0:
            return 0.0 if x.ndim == 1 else np.zeros(x.shape[:-1])
        # x**exps over the term axis; supports batched points
        powers = np.power(x[..., None, :], exps)
        vals = (powers.prod(axis=-1) * coefs).sum(axis=-1)
        return float(vals) if x.ndim == 1 else vals

    # -- calculus ----------------------------------------------------------

    def diff(self, i: int) -> "Polynomial":
        if not (0 <= i < self.arity):
            raise PolyError("differentiation index out of range")
        out = {}
        for e, c in self.terms.items():
            if e[i] == 0:
                continue
            de = list(e)
            de[i] -= 1
            out[tuple(de)] = out.get(tuple(de), 0.0) + c * e[i]
        return Polynomial(self.arity, out)

    def gradient(self) -> list:
        if self.arity < 1:
            raise PolyError("gradient needs arity >= 1")
        return [self.diff(i) for i in range(self.arity)]

    def lift(self, arity: int) -> "Polynomial":
        """Embed into a larger arity by appending zero exponents."""
        if arity < self.arity:
            raise PolyError("cannot lift to smaller arity")
        if arity == self.arity:
            return self
        pad = (0,) * (arity - self.arity)
        return Polynomial(arity, {e + pad: c for e, c in self.terms.items()})

    def compose(self, substitutions) -> "Polynomial":
        """Substitute variable i by polynomial substitutions[i]."""
        if len(substitutions) != self.arity:
            raise PolyError("substitution count must match arity")
        if not substitutions:
            return Polynomial(0, dict(self.terms))
        target = substitutions[0].arity
        result = Polynomial.zero(target)
        for e, c in self.terms.items():
            term = Polynomial.constant(target, c)
            for i, k in enumerate(e):
                if k:
                    term = term * (substitutions[i] ** k)
            result = result + term
        return result

    def shift(self, offsets) -> "Polynomial":
        """Substitute x_i -> x_i + offsets[i] (change of origin)."""
        subs = [Polynomial.variable(self.arity, i) + float(offsets[i])
                for i in range(self.arity)]
        return self.compose(subs)

    # -- enclosure ---------------------------------------------------------

    def interval_eval(self, box: Box, slack: float = DEFAULT_SLACK) -> Interval:
        if box.arity != self.arity:
            raise PolyError(f"box arity {box.arity} != polynomial arity {self.arity}")
        total = Interval(0.0, 0.0)
        for e, c in self.terms.items():
            term = Interval(c, c)
            for i, k in enumerate(e):
                if k:
                    term = term.mul(box[i].power(k, slack), slack)
            total = total.add(term, slack)
        return total

    def bound_batch(self, los: np.ndarray, his: np.ndarray,
                    slack: float = DEFAULT_SLACK) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized enclosure over a batch of boxes given as (B, n) lo/hi arrays."""
        exps, coefs = self._arrays()
        B = los.shape[0]
        tot_lo = np.zeros(B)
        tot_hi = np.zeros(B)
        for e, c in zip(exps, coefs):
            t_lo = np.full(B, c)
            t_hi = np.full(B, c)
            for i, k in enumerate(e):
                if k == 0:
                    continue
                a, b = los[:, i], his[:, i]
                ak, bk = a ** k, b ** k
                if k % 2 == 1:
                    p_lo, p_hi = ak, bk
                else:
                    p_hi = np.maximum(ak, bk)
                    p_lo = np.where((a <= 0.0) & (b >= 0.0), 0.0, np.minimum(ak, bk))
                cands = np.stack([t_lo * p_lo, t_lo * p_hi, t_hi * p_lo, t_hi * p_hi])
                t_lo, t_hi = cands.min(axis=0), cands.max(axis=0)
            tot_lo += t_lo
            tot_hi += t_hi
        if slack:
            pad = slack * np.maximum(1.0, np.maximum(np.abs(tot_lo), np.abs(tot_hi)))
            # bound widening grows with term count; one aggregate pad per term+1 ops
            pad *= (len(coefs) * (1 + int(exps.sum(axis=1).max(initial=0))) + 1)
            tot_lo -= pad
            tot_hi += pad
        return tot_lo, tot_hi

    # -- printing / parsing ------------------------------------------------

    def to_string(self, names=None) -> str:
        if names is None:
            names = [f"x{i + 1}" for i in range(self.arity)]
        if len(names) != self.arity:
            raise PolyError("variable name count must match arity")
        if not self.terms:
            return "0"
        parts = []
        for e in sorted(self.terms, key=_grlex_key, reverse=True):
            c = self.terms[e]
            factors = []
            for name, k in zip(names, e):
                if k == 1:
                    factors.append(name)
                elif k > 1:
                    factors.append(f"{name}^{k}")
            coef_txt = repr(abs(c))
            if factors and abs(c) == 1.0:
                body = "*".join(factors)
            elif factors:
                body = coef_txt + "*" + "*".join(factors)
            else:
                body = coef_txt
            parts.append(("- " if c < 0 else "+ ") + body)
        text = " ".join(parts)
        return text[2:] if text.startswith("+ ") else "-" + text[2:]

    def __repr__(self):
        return f"Polynomial({self.to_string()})"


# -- parser ----------------------------------------------------------------

_TOKEN_RE = re.compile(r"\s*(?:(\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?"
                       r"|\d+(?:[eE][+-]?\d+)?)|([A-Za-z_][A-Za-z_0-9']*)|([-+*^()]))")


def _tokenize(text):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            if text[pos:].strip() == "":
                break
            raise ParseError(f"unexpected character {text[pos:].strip()[0]!r}", pos)
        num, name, op = m.groups()
        if num is not None:
            tokens.append(("num", float(num), pos))
        elif name is not None:
            tokens.append(("name", name, pos))
        else:
            tokens.append(("op", op, pos))
        pos = m.end()
    tokens.append(("end", None, len(text)))
    return tokens


class _Parser:
    def __init__(self, tokens, var_index, arity):
        self.tokens = tokens
        self.i = 0
        self.var_index = var_index
        self.arity = arity

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expr(self):
        kind, val, pos = self.peek()
        negate = False
        while kind == "op" and val in "+-":
            self.next()
            if val == "-":
                negate = not negate
            kind, val, pos = self.peek()
        result = self.term()
        if negate:
            result = -result
        while True:
            kind, val, pos = self.peek()
            if kind == "op" and val in "+-":
                self.next()
                rhs = self.term()
                result = result - rhs if val == "-" else result + rhs
            else:
                return result

    def term(self):
        result = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val == "*":
                self.next()
                result = result * self.factor()
            else:
                return result

    def factor(self):
        kind, val, pos = self.peek()
        negate = False
        while kind == "op" and val == "-":
            self.next()
            negate = not negate
            kind, val, pos = self.peek()
        base = self.atom()
        kind, val, pos = self.peek()
        if kind == "op" and val == "^":
            self.next()
            ekind, eval_, epos = self.next()
            sign = 1
            if ekind == "op" and eval_ == "-":
                sign = -1
                ekind, eval_, epos = self.next()
            if ekind != "num" or eval_ != int(eval_):
                raise ParseError("exponent must be an integer", epos)
            exp = sign * int(eval_)
            if exp < 0:
                raise ParseError(f"negative exponent {exp}", epos)
            base = base ** exp
        return -base if negate else base

    def atom(self):
        kind, val, pos = self.next()
        if kind == "num":
            return Polynomial.constant(self.arity, val)
        if kind == "name":
            if val not in self.var_index:
                raise ParseError(f"unknown variable {val!r}", pos)
            return Polynomial.variable(self.arity, self.var_index[val])
        if kind == "op" and val == "(":
            inner = self.expr()
            kind, val, pos = self.next()
            if not (kind == "op" and val == ")"):
                raise ParseError("expected ')'", pos)
            return inner
        raise ParseError("expected a number, variable, or '('", pos)


def parse_poly(text: str, vars) -> Polynomial:
    """Parse a polynomial expression over the given ordered variable names."""
    vars = list(vars)
    var_index = {v: i for i, v in enumerate(vars)}
    if len(var_index) != len(vars):
        raise PolyError("duplicate variable names")
    parser = _Parser(_tokenize(text), var_index, len(vars))
    result = parser.expr()
    kind, val, pos = parser.peek()
    if kind != "end":
        raise ParseError(f"unexpected trailing input {val!r}", pos)
    return result


# -- module-level operation aliases ----------------------------------------

def evaluate(p: Polynomial, x) -> float:
    return p.evaluate(x)


def gradient(p: Polynomial) -> list:
    return p.gradient()


def lie_derivative(p: Polynomial, field) -> Polynomial:
    """Derivative of p along the vector field, sum_i dp/dx_i * field[i].

    Field components may live in a larger arity (extra symbolic inputs);
    p and its partials are lifted to match.
    """
    field = list(field)
    if len(field) != p.arity:
        raise PolyError(f"field length {len(field)} != arity {p.arity}")
    target = max([p.arity] + [f.arity for f in field])
    result = Polynomial.zero(target)
    for i, f in enumerate(field):
        result = result + p.diff(i).lift(target) * f.lift(target)
    return result


def interval_eval(p: Polynomial, box: Box, slack: float = DEFAULT_SLACK) -> Interval:
    return p.interval_eval(box, slack)
