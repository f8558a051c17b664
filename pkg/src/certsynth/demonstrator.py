"""Black-box demonstration oracles.

The continuous-input demonstrator is a projected-gradient nonlinear MPC on
a forward-Euler discretization; gradients are reverse-mode accumulated
through the rollout.  The switched-plant demonstrator enumerates short
mode sequences.  The safety variant also reports whether the
demonstrator's own rollout stays inside the safe set.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from certsynth.intervals import Box
from certsynth.model import ControlAffinePlant, Safety, SwitchedPlant


class DemonstratorError(RuntimeError):
    pass


class DivergentRollout(DemonstratorError):
    def __init__(self, step):
        super().__init__(f"rollout diverged (state norm > 1e6) at step {step}")
        self.step = step


@dataclass(frozen=True)
class MpcConfig:
    tau: float
    N: int
    Qp: tuple               # state weights, diag(Q')
    Rp: tuple               # input weights, diag(R')
    iterations: int = 200
    step_size: float = 0.1
    backtrack: float = 0.5

    def __post_init__(self):
        if self.tau <= 0 or self.N < 1:
            raise DemonstratorError("need tau > 0 and N >= 1")
        if any(w < 0 for w in self.Qp) or any(w < 0 for w in self.Rp):
            raise DemonstratorError("weights must be nonnegative")
        object.__setattr__(self, "Qp", tuple(float(w) for w in self.Qp))
        object.__setattr__(self, "Rp", tuple(float(w) for w in self.Rp))


@dataclass(frozen=True)
class Demonstration:
    u: object                    # input vector (tuple) or mode name
    flag: bool | None = None
    cost: float = float("nan")
    plan: tuple = ()             # the full optimized input sequence


def _mode_field_eval(field_polys, x):
    return np.array([f.evaluate(x) for f in field_polys])


class _Rollout:
    """Euler rollout of a control-affine plant with reverse-mode cost gradient.

    Cost: sum_k (x_k' Q x_k + u_k' R u_k) + x_N' H x_N with H = N diag(Q').
    """

    def __init__(self, plant: ControlAffinePlant, cfg: MpcConfig):
        self.plant = plant
        self.cfg = cfg
        n, m = plant.arity, plant.n_inputs
        self.Q = np.asarray(cfg.Qp, dtype=float)
        self.R = np.asarray(cfg.Rp, dtype=float)
        self.H = cfg.N * self.Q
        if len(self.Q) != n or len(self.R) != m:
            raise DemonstratorError("weight lengths must match state/input arity")
        # Jacobian polynomials d f_i / d x_j for f = f0 + sum f_k u_k
        self.jac0 = [[p.diff(j) for j in range(n)] for p in plant.f0]
        self.jac_in = [[[p.diff(j) for j in range(n)] for p in fk]
                       for fk in plant.fi]

    def field(self, x, u):
        f = np.array([p.evaluate(x) for p in self.plant.f0])
        for k, uk in enumerate(u):
            f += uk * np.array([p.evaluate(x) for p in self.plant.fi[k]])
        return f

    def jacobian(self, x, u):
        n = self.plant.arity
        A = np.array([[self.jac0[i][j].evaluate(x) for j in range(n)]
                      for i in range(n)])
        for k, uk in enumerate(u):
            A += uk * np.array([[self.jac_in[k][i][j].evaluate(x)
                                 for j in range(n)] for i in range(n)])
        return A

    def input_matrix(self, x):
        return np.array([[p.evaluate(x) for p in fk]
                         for fk in self.plant.fi]).T       # n x m

    def simulate(self, x0, U):
        xs = [np.asarray(x0, dtype=float)]
        for k in range(self.cfg.N):
            x = xs[-1]
            nxt = x + self.cfg.tau * self.field(x, U[k])
            if not np.all(np.isfinite(nxt)) or np.linalg.norm(nxt) > 1e6:
                raise DivergentRollout(k)
            xs.append(nxt)
        return xs

    def cost(self, xs, U):
        J = 0.0
        for k in range(self.cfg.N):
            J += float(xs[k] @ (self.Q * xs[k])) + float(U[k] @ (self.R * U[k]))
        J += float(xs[-1] @ (self.H * xs[-1]))
        return J

    def cost_and_grad(self, x0, U):
        xs = self.simulate(x0, U)
        J = self.cost(xs, U)
        lam = 2.0 * self.H * xs[-1]
        grad = np.zeros_like(U)
        for k in reversed(range(self.cfg.N)):
            x = xs[k]
            Bk = self.input_matrix(x)
            grad[k] = 2.0 * self.R * U[k] + self.cfg.tau * (Bk.T @ lam)
            Ak = self.jacobian(x, U[k])
            lam = 2.0 * self.Q * x + (np.eye(len(x)) + self.cfg.tau * Ak).T @ lam
        return J, grad


def _project(U, box: Box):
    lo = np.array([iv.lo for iv in box])
    hi = np.array([iv.hi for iv in box])
    return np.clip(U, lo, hi)


def mpc_demonstrate(plant: ControlAffinePlant, cfg: MpcConfig, x) -> Demonstration:
    """Projected gradient descent on the discretized cost; returns u(0).

    The cost never increases across accepted steps (backtracking line
    search); every returned input lies exactly inside the input box.
    """
    x0 = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise DemonstratorError("state must be finite")
    roll = _Rollout(plant, cfg)
    U = _project(np.zeros((cfg.N, plant.n_inputs)), plant.input_box)
    roll.simulate(x0, U)        # surfaces divergence of the zero plan early
    J, grad = roll.cost_and_grad(x0, U)
    step = cfg.step_size
    for _ in range(cfg.iterations):
        accepted = False
        t = step
        for _ in range(30):
            cand = _project(U - t * grad, plant.input_box)
            try:
                xs = roll.simulate(x0, cand)
            except DivergentRollout:
                t *= cfg.backtrack
                continue
            Jc = roll.cost(xs, cand)
            if Jc <= J:
                accepted = True
                break
            t *= cfg.backtrack
        if not accepted or np.allclose(cand, U):
            break
        U = cand
        J, grad = roll.cost_and_grad(x0, U)
        step = min(t / cfg.backtrack, cfg.step_size * 10)
    return Demonstration(u=tuple(U[0]), cost=J,
                         plan=tuple(tuple(row) for row in U))


def mode_demonstrate(plant: SwitchedPlant, horizon: int, tau: float,
                     state_weights, x) -> Demonstration:
    """Exhaustive short-horizon mode search under Euler rollout.

    Ties break in mode declaration order, so the result is deterministic.
    """
    if horizon > 6:
        raise DemonstratorError(
            f"mode enumeration over horizon {horizon} exceeds the budget")
    x0 = np.asarray(x, dtype=float)
    Q = np.asarray(state_weights, dtype=float)
    best = None
    for seq in itertools.product(range(len(plant.modes)), repeat=horizon):
        xk = x0.copy()
        J = 0.0
        diverged = False
        for mi in seq:
            xk = xk + tau * _mode_field_eval(plant.modes[mi].field, xk)
            if not np.all(np.isfinite(xk)) or np.linalg.norm(xk) > 1e6:
                diverged = True
                break
            J += float(xk @ (Q * xk))
        if diverged:
            continue
        if best is None or J < best[0]:
            best = (J, seq[0])
    if best is None:
        raise DemonstratorError("every mode sequence diverged")
    return Demonstration(u=plant.modes[best[1]].name, cost=best[0])


def demonstrate_with_flag(plant, cfg, spec: Safety, x) -> Demonstration:
    """Demonstration plus a flag: does the oracle's own rollout stay in S?"""
    if not isinstance(spec, Safety):
        raise DemonstratorError("flagged demonstration requires a safety spec")
    S = spec.S
    x0 = np.asarray(x, dtype=float)
    if not S.contains(tuple(x0)):
        if isinstance(plant, SwitchedPlant):
            demo = mode_demonstrate(plant, min(cfg.N, 4), cfg.tau, cfg.Qp, x0)
        else:
            demo = mpc_demonstrate(plant, cfg, x0)
        return Demonstration(u=demo.u, flag=False, cost=demo.cost)

    if isinstance(plant, SwitchedPlant):
        demo = mode_demonstrate(plant, min(cfg.N, 4), cfg.tau, cfg.Qp, x0)
        mode = plant.mode_named(demo.u)
        xk = x0.copy()
        ok = True
        for _ in range(cfg.N):
            xk = xk + cfg.tau * _mode_field_eval(mode.field, xk)
            if not S.contains(tuple(xk)):
                ok = False
                break
        return Demonstration(u=demo.u, flag=ok, cost=demo.cost)

    roll = _Rollout(plant, cfg)
    demo = mpc_demonstrate(plant, cfg, x0)
    U = np.asarray(demo.plan, dtype=float)
    try:
        xs = roll.simulate(x0, U)
        ok = all(S.contains(tuple(xk)) for xk in xs)
    except DivergentRollout:
        ok = False
    return Demonstration(u=demo.u, flag=ok, cost=demo.cost, plan=demo.plan)
