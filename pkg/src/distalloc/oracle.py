"""
Centralized reference solver.

Maximizes the concave dual

    q(s) = sum_i min_{y_i in Omega_i} [f_i(y_i) - s^T y_i] + s^T sum_i d_i

by gradient ascent with step halving and doubling; the dual gradient is
``sum d_i - sum y_i(s)``. Each agent subproblem is solved by three-operator
splitting (gradient on the smooth part, prox on the norm term, projection on
the set), with a closed form for scalar box-constrained costs.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .convex import Box, Quadratic, WeightedNormKink
from .problem import KktReport, Problem, kkt_residual

CERTIFY_TOL = 1e-6


@dataclass
class OracleSolution:
    y_star: np.ndarray
    s_star: np.ndarray
    objective: float
    iterations: int
    certified: bool
    kkt: KktReport
    dual_values: list = field(default_factory=list, repr=False)
    message: str = ""


def _scalar_closed_form(agent, s):
    """Minimizer of ``q y^2 + b y + c + rho |y - a| - s y`` over ``[lo, hi]``,
    or ``None`` when the agent does not have that shape."""
    cost, box = agent.cost, agent.feasible_set
    if cost.dim != 1 or not isinstance(box, Box):
        return None
    quads = [t for t in cost.terms if isinstance(t, Quadratic)]
    kinks = [t for t in cost.terms if isinstance(t, WeightedNormKink)]
    if len(quads) + len(kinks) != len(cost.terms) or len(kinks) > 1 or not quads:
        return None
    q = sum(t.Q[0, 0] for t in quads)
    b = sum(t.b[0] for t in quads)
    if q <= 0:
        return None
    rho, a = (kinks[0].weight, kinks[0].anchor[0]) if kinks else (0.0, 0.0)
    right = (s[0] - b - rho) / (2 * q)
    left = (s[0] - b + rho) / (2 * q)
    if right > a:
        y = right
    elif left < a:
        y = left
    else:
        y = a
    return np.clip(np.array([y]), box.lower, box.upper)


def _soft_threshold(z, anchor, thresh):
    v = z - anchor
    n = math.sqrt(float(v @ v))
    if n <= thresh:
        return anchor.copy()
    return anchor + (1.0 - thresh / n) * v


def _splitting_solve(agent, s, y0, tol=1e-13, max_iter=50_000):
    """Three-operator splitting for ``min h(y) - s^T y + rho||y - a|| + I_Omega(y)``
    with a single kink anchor. Returns ``(y, residual)``."""
    cost, omega_set = agent.cost, agent.feasible_set
    kinks = cost.kinks
    rho = sum(k.weight for k in kinks)
    anchor = kinks[0].anchor if kinks else None
    lip = max(cost.curvature_bound(), 1e-12)
    gamma = 1.0 / lip
    z = np.array(y0, dtype=float)
    scale = 1.0 + math.sqrt(float(z @ z))
    resid = np.inf
    x_g = x_f = z
    for _ in range(max_iter):
        x_g = _soft_threshold(z, anchor, gamma * rho) if anchor is not None else z
        grad = cost.smooth_gradient(x_g) - s
        x_f = omega_set.project(2.0 * x_g - z - gamma * grad)
        diff = x_f - x_g
        z = z + diff
        resid = math.sqrt(float(diff @ diff))
        if resid <= tol * scale:
            break
    if omega_set.distance(x_g) <= 1e-12:
        return x_g, resid
    return x_f, resid


def _subgradient_solve(agent, s, y0, max_iter=20_000):
    """Projected subgradient descent with diminishing steps; keeps the best
    iterate."""
    cost, omega_set = agent.cost, agent.feasible_set
    y = omega_set.project(y0)
    best, best_val = y, cost.value(y) - s @ y
    c = 1.0 / max(cost.strong_convexity_modulus, 1e-3)
    for k in range(max_iter):
        g = cost.subgradient(y) - s
        y = omega_set.project(y - (c / (k + 1)) * g)
        val = cost.value(y) - s @ y
        if val < best_val:
            best, best_val = y, val
    return best, 0.0


def _local_minimizer(agent, s, y0):
    y = _scalar_closed_form(agent, s)
    if y is not None:
        return y, 0.0
    anchors = {tuple(k.anchor) for k in agent.cost.kinks}
    if len(anchors) <= 1:
        return _splitting_solve(agent, s, y0)
    return _subgradient_solve(agent, s, y0)


def _inner(p: Problem, s, Y0):
    Y = np.empty_like(Y0)
    worst = 0.0
    for i, a in enumerate(p.agents):
        Y[i], r = _local_minimizer(a, s, Y0[i])
        worst = max(worst, r)
    return Y, worst


def _dual_value(p: Problem, s, Y):
    return float(sum(a.cost.value(Y[i]) - s @ Y[i] for i, a in enumerate(p.agents))
                 + s @ p.total_resource)


def dual_solve(p: Problem, tol=1e-12, max_outer=5_000) -> OracleSolution:
    """Solve the problem centrally.

    The returned solution is ``certified`` when every field of its
    :class:`~distalloc.problem.KktReport` is at most ``1e-6``. Running out of
    iterations returns an uncertified solution with a message instead of
    raising.
    """
    p.check_dimensions()
    n, d = p.n_agents, p.decision_dim
    total = p.total_resource
    Y = np.array([a.feasible_set.project(a.local_resource) for a in p.agents])
    s = np.mean([a.cost.subgradient(Y[i]) for i, a in enumerate(p.agents)], axis=0)
    Y, _ = _inner(p, s, Y)
    q = _dual_value(p, s, Y)
    dual_values = [q]
    omega = p.strong_convexity_modulus
    t = omega / n if omega > 0 else 1e-2
    message = ""
    it = 0
    for it in range(1, max_outer + 1):
        grad = total - Y.sum(axis=0)
        gnorm2 = float(grad @ grad)
        if math.sqrt(gnorm2) <= tol * (1.0 + math.sqrt(float(total @ total))):
            break
        while True:
            s_new = s + t * grad
            Y_new, _ = _inner(p, s_new, Y)
            grad_new = total - Y_new.sum(axis=0)
            # concavity makes q increase by at least t/2 ||g||^2 once the
            # gradient moved by at most half its norm; no value differences
            delta = grad_new - grad
            if math.sqrt(float(delta @ delta)) <= 0.5 * math.sqrt(gnorm2):
                break
            t *= 0.5
            if t < 1e-20:
                message = "step size underflow in dual ascent"
                break
        if message:
            break
        s, Y = s_new, Y_new
        q = _dual_value(p, s, Y)
        dual_values.append(q)
        t *= 2.0
    else:
        message = f"dual ascent hit the iteration cap ({max_outer})"
    y = Y.ravel()
    kkt = kkt_residual(p, y, s)
    return OracleSolution(
        y_star=y,
        s_star=s,
        objective=p.objective(y),
        iterations=it,
        certified=kkt.max_residual() <= CERTIFY_TOL,
        kkt=kkt,
        dual_values=dual_values,
        message=message,
    )


def compare(traj, sol: OracleSolution) -> float:
    """Infinity-norm distance between the trajectory's final decision and the
    oracle optimum."""
    if not sol.certified:
        raise ValueError("oracle solution is not certified")
    return float(np.max(np.abs(traj.final.y - sol.y_star)))
