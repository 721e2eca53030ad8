"""Method of Moving Asymptotes for box-bounded problems with few constraints.

One mma_step builds the usual convex separable approximation around the
current iterate (moving lower/upper asymptotes, shifted-reciprocal terms) and
solves its dual: with m constraints and n >> m variables the primal minimizer
is available in closed form per variable for fixed multipliers, so the dual is
solved by per-constraint bisection sweeps. Everything is deterministic: equal
inputs and state produce bit-equal outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MmaInfeasibleError(RuntimeError):
    """A subproblem constraint cannot be met inside the move limits."""


@dataclass
class MmaOptions:
    asyinit: float = 0.5
    asyincr: float = 1.2
    asydecr: float = 0.7
    albefa: float = 0.1
    span_min: float = 1e-7  # tightest asymptote span, fraction of the box range
    span_max: float = 10.0
    raa0: float = 1e-5
    bisect_iters: int = 80
    max_sweeps: int = 60
    lam_cap: float = 1e12


@dataclass
class MmaState:
    """Carries asymptotes and the two previous iterates between steps."""

    low: np.ndarray | None = None
    upp: np.ndarray | None = None
    xold1: np.ndarray | None = None
    xold2: np.ndarray | None = None
    iteration: int = 0
    options: MmaOptions = field(default_factory=MmaOptions)


@dataclass
class SubproblemResult:
    x: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    low: np.ndarray
    upp: np.ndarray
    p0: np.ndarray
    q0: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    b: np.ndarray

    def objective_gradient(self) -> np.ndarray:
        return self.p0 / (self.upp - self.x) ** 2 - self.q0 / (self.x - self.low) ** 2

    def constraint_values(self) -> np.ndarray:
        return self.P @ (1.0 / (self.upp - self.x)) + self.Q @ (1.0 / (self.x - self.low)) - self.b

    def constraint_gradients(self) -> np.ndarray:
        return self.P / (self.upp - self.x) ** 2 - self.Q / (self.x - self.low) ** 2

    def kkt_residual(self) -> float:
        g = self.constraint_values()
        return kkt_residual(self.x, self.lam, self.objective_gradient(),
                            self.constraint_gradients(), g, self.alpha, self.beta)


def kkt_residual(x, lam, df0, dg, g, lower, upper) -> float:
    """Infinity norm of the KKT violation for min f s.t. g <= 0, box bounds.

    Zero exactly at KKT points; used both on subproblems and as the outer
    convergence diagnostic.
    """
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float).reshape(-1)
    r = np.asarray(df0, dtype=float).copy()
    if lam.size:
        r = r + np.asarray(dg, dtype=float).T @ lam
    at_lo = x <= lower + 1e-12 * np.maximum(1.0, np.abs(lower))
    at_hi = x >= upper - 1e-12 * np.maximum(1.0, np.abs(upper))
    stat = np.abs(r)
    stat = np.where(at_lo, np.maximum(0.0, -r), stat)
    stat = np.where(at_hi & ~at_lo, np.maximum(0.0, r), stat)
    parts = [stat.max() if stat.size else 0.0]
    g = np.asarray(g, dtype=float).reshape(-1)
    if g.size:
        parts.append(np.max(np.maximum(g, 0.0)))
        parts.append(np.max(np.abs(lam * g)))
        parts.append(np.max(np.maximum(-lam, 0.0)))
    return float(max(parts))


def _primal_from_duals(lam, p0, q0, P, Q, low, upp, alpha, beta):
    pl = p0 + (lam @ P if lam.size else 0.0)
    ql = q0 + (lam @ Q if lam.size else 0.0)
    sp = np.sqrt(pl)
    sq = np.sqrt(ql)
    x = (low * sp + upp * sq) / (sp + sq)
    return np.clip(x, alpha, beta)


def _dual_constraint(i, lam, p0, q0, P, Q, low, upp, alpha, beta, b):
    x = _primal_from_duals(lam, p0, q0, P, Q, low, upp, alpha, beta)
    return P[i] @ (1.0 / (upp - x)) + Q[i] @ (1.0 / (x - low)) - b[i]


def _solve_dual(m, p0, q0, P, Q, low, upp, alpha, beta, b, opt: MmaOptions):
    lam = np.zeros(m)
    if m == 0:
        return lam, _primal_from_duals(lam, p0, q0, P, Q, low, upp, alpha, beta)
    for _ in range(opt.max_sweeps):
        lam_prev = lam.copy()
        for i in range(m):
            lam[i] = 0.0
            if _dual_constraint(i, lam, p0, q0, P, Q, low, upp, alpha, beta, b) <= 0.0:
                continue
            hi = max(1.0, 2.0 * lam_prev[i])
            while _dual_constraint(i, _set(lam, i, hi), p0, q0, P, Q, low, upp, alpha, beta, b) > 0.0:
                hi *= 2.0
                if hi > opt.lam_cap:
                    raise MmaInfeasibleError(f"constraint {i} unattainable within move limits")
            lo = 0.0
            for _ in range(opt.bisect_iters):
                mid = 0.5 * (lo + hi)
                if _dual_constraint(i, _set(lam, i, mid), p0, q0, P, Q, low, upp, alpha, beta, b) > 0.0:
                    lo = mid
                else:
                    hi = mid
            lam[i] = hi
        if np.all(np.abs(lam - lam_prev) <= 1e-12 * np.maximum(1.0, np.abs(lam))):
            break
    return lam, _primal_from_duals(lam, p0, q0, P, Q, low, upp, alpha, beta)


def _set(lam, i, v):
    out = lam.copy()
    out[i] = v
    return out


def mma_step(x, f0, df0, g, dg, xmin, xmax, state: MmaState, move=None):
    """One MMA iteration; returns (x_new, state, SubproblemResult).

    g and dg are the constraint values/gradients (arrays of shape (m,) and
    (m, n)); move is an optional per-variable move limit (absolute). If the
    subproblem is infeasible the move limits are relaxed once (doubled) before
    the failure is raised.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    xmin = np.broadcast_to(np.asarray(xmin, dtype=float), (n,)).copy()
    xmax = np.broadcast_to(np.asarray(xmax, dtype=float), (n,)).copy()
    df0 = np.asarray(df0, dtype=float)
    g = np.asarray(g, dtype=float).reshape(-1)
    m = g.size
    dg = np.asarray(dg, dtype=float).reshape(m, n) if m else np.zeros((0, n))
    opt = state.options
    rng = np.maximum(xmax - xmin, 1e-5)

    state.iteration += 1
    if state.iteration < 3 or state.xold1 is None or state.xold2 is None:
        low = x - opt.asyinit * rng
        upp = x + opt.asyinit * rng
    else:
        sign = (x - state.xold1) * (state.xold1 - state.xold2)
        factor = np.ones(n)
        factor[sign > 0] = opt.asyincr
        factor[sign < 0] = opt.asydecr
        low = x - factor * (state.xold1 - state.low)
        upp = x + factor * (state.upp - state.xold1)
        low = np.clip(low, x - opt.span_max * rng, x - opt.span_min * rng)
        upp = np.clip(upp, x + opt.span_min * rng, x + opt.span_max * rng)

    if move is None:
        move_arr = rng.copy()
    else:
        move_arr = np.broadcast_to(np.asarray(move, dtype=float), (n,)).copy()

    def build_and_solve(move_arr):
        alpha = np.maximum.reduce([xmin, low + opt.albefa * (x - low), x - move_arr])
        beta = np.minimum.reduce([xmax, upp - opt.albefa * (upp - x), x + move_arr])
        beta = np.maximum(beta, alpha)  # degenerate (fixed) variables collapse
        ux = upp - x
        xl = x - low
        xmamiinv = 1.0 / rng
        dfp = np.maximum(df0, 0.0)
        dfm = np.maximum(-df0, 0.0)
        pq0 = 0.001 * (dfp + dfm) + opt.raa0 * xmamiinv
        p0 = (dfp + pq0) * ux**2
        q0 = (dfm + pq0) * xl**2
        if m:
            dgp = np.maximum(dg, 0.0)
            dgm = np.maximum(-dg, 0.0)
            P = dgp * ux**2
            Q = dgm * xl**2
            b = P @ (1.0 / ux) + Q @ (1.0 / xl) - g
        else:
            P = np.zeros((0, n))
            Q = np.zeros((0, n))
            b = np.zeros(0)
        lam, xnew = _solve_dual(m, p0, q0, P, Q, low, upp, alpha, beta, b, opt)
        return SubproblemResult(x=xnew, lam=lam, alpha=alpha, beta=beta, low=low,
                                upp=upp, p0=p0, q0=q0, P=P, Q=Q, b=b)

    try:
        sub = build_and_solve(move_arr)
    except MmaInfeasibleError:
        sub = build_and_solve(2.0 * move_arr)  # relax once, then give up for real

    state.xold2 = state.xold1
    state.xold1 = x.copy()
    state.low = low
    state.upp = upp
    return sub.x, state, sub
