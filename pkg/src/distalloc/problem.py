"""
The resource allocation problem

    minimize    sum_i f_i(y_i)
    subject to  sum_i y_i = sum_i d_i,   y_i in Omega_i,

its validation, an optimality residual and the gain bounds of both
distributed algorithms.

Stacked vectors (``y``, ``s``, ...) are flat arrays of length ``N*d`` with
agent ``i`` occupying ``[i*d, (i+1)*d)``.
"""

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import Callable

import numpy as np

from .convex import ConvexSet, CostFunction, admissibility_errors, strong_convexity_slack
from .graph import (
    Digraph,
    is_connected,
    is_strongly_connected,
    is_undirected,
    is_weight_balanced,
    laplacian,
    orthogonal_decomposition,
)

# all KktReport fields below this certify approximate optimality
CERTIFY_TOL = 1e-3


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class AgentSpec:
    cost: CostFunction
    feasible_set: ConvexSet
    local_resource: np.ndarray

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.local_resource, dtype=float))
        object.__setattr__(self, "local_resource", d)


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning" | "info"
    message: str
    agent: int | None = None

    def __str__(self):
        where = f"agent {self.agent}: " if self.agent is not None else ""
        return f"[{self.severity}] {where}{self.message}"


class Problem:
    """Agents plus the communication graph.

    Parameters
    ----------
    agents : sequence of AgentSpec
    graph : Digraph
    """

    def __init__(self, agents, graph: Digraph):
        self.agents = tuple(agents)
        if not self.agents:
            raise ValueError("problem needs at least one agent")
        self.graph = graph
        self.decision_dim = self.agents[0].cost.dim
        self.laplacian = laplacian(graph)

    @cached_property
    def decomposition(self):
        """``(r, R, J)`` from :func:`~distalloc.graph.orthogonal_decomposition`."""
        return orthogonal_decomposition(self.laplacian)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def strong_convexity_modulus(self) -> float:
        return min(a.cost.strong_convexity_modulus for a in self.agents)

    @property
    def resources(self):
        """Local resources stacked into an ``(N, d)`` array."""
        return np.array([a.local_resource for a in self.agents])

    @property
    def total_resource(self):
        return self.resources.sum(axis=0)

    def blocks(self, v):
        return np.asarray(v, dtype=float).reshape(self.n_agents, self.decision_dim)

    def check_dimensions(self):
        """Raise :class:`ValidationError` on any size inconsistency."""
        d = self.decision_dim
        if self.graph.n_nodes != self.n_agents:
            raise ValidationError(
                f"graph has {self.graph.n_nodes} nodes but the problem has {self.n_agents} agents"
            )
        for i, a in enumerate(self.agents):
            sizes = (a.cost.dim, a.feasible_set.dim, a.local_resource.size)
            if sizes != (d, d, d):
                raise ValidationError(
                    f"agent {i}: cost/set/resource dimensions {sizes} disagree with decision dim {d}"
                )

    def project(self, x):
        X = self.blocks(x)
        return np.concatenate([a.feasible_set.project(xi) for a, xi in zip(self.agents, X)])

    def subgradients(self, y):
        """Stacked min-norm subgradients."""
        Y = self.blocks(y)
        return np.concatenate([a.cost.subgradient(yi) for a, yi in zip(self.agents, Y)])

    def objective(self, y) -> float:
        return float(sum(a.cost.value(yi) for a, yi in zip(self.agents, self.blocks(y))))

    def permuted(self, perm):
        """Relabel agents so that new agent ``k`` is old agent ``perm[k]``."""
        return Problem([self.agents[j] for j in perm], self.graph.permuted(perm))


def _slater_point(p: Problem, margin, max_iter=5000, tol=1e-9):
    """Look for ``x_i`` inside the ``margin``-shrunken sets with
    ``sum x_i = sum d_i`` via Dykstra between the product of shrunken sets
    and the resource hyperplane. Returns the point or ``None``."""
    inner = [a.feasible_set.shrunk(margin) for a in p.agents]
    if any(s is None for s in inner):
        return None
    total = p.total_resource
    n = p.n_agents

    def onto_sets(Y):
        return np.array([s.project(yi) for s, yi in zip(inner, Y)])

    def onto_plane(Y):
        return Y - (Y.sum(axis=0) - total) / n

    Y = p.resources.copy()
    inc_a = np.zeros_like(Y)
    inc_b = np.zeros_like(Y)
    scale = 1.0 + np.linalg.norm(total)
    for _ in range(max_iter):
        Z = onto_sets(Y + inc_a)
        inc_a = Y + inc_a - Z
        Y_new = onto_plane(Z + inc_b)
        inc_b = Z + inc_b - Y_new
        gap = np.linalg.norm(Z.sum(axis=0) - total)
        if gap <= tol * scale and np.linalg.norm(Y_new - Y) <= tol * scale:
            return Z
        Y = Y_new
    Z = onto_sets(Y)
    if np.linalg.norm(Z.sum(axis=0) - total) <= 1e-6 * scale:
        return Z
    return None


def validate(p: Problem, seed=0, slater_margin=1e-6):
    """Check a problem before running it.

    Dimension mismatches raise :class:`ValidationError`. Everything else is
    reported as a list of :class:`Diagnostic`; severity ``"error"`` marks
    costs that are not convex on their set, ``"warning"`` marks conditions
    that cannot be certified cheaply (interior existence, strong convexity,
    graph assumptions).
    """
    p.check_dimensions()
    out = []
    rng = np.random.default_rng(seed)
    for i, a in enumerate(p.agents):
        for msg in admissibility_errors(a.cost, a.feasible_set):
            out.append(Diagnostic("error", msg, i))
        if a.feasible_set.shrunk(slater_margin) is None:
            out.append(Diagnostic("warning", "feasible set has empty interior", i))
        if a.cost.strong_convexity_modulus > 0:
            pts = a.feasible_set.sample(rng, 50)
            slack = strong_convexity_slack(a.cost, pts, rng)
            if slack < -1e-9 * (1.0 + abs(a.cost.value(pts[0]))):
                out.append(Diagnostic(
                    "warning",
                    f"declared strong convexity modulus {a.cost.strong_convexity_modulus} "
                    f"violated on sampled pairs (slack {slack:.3e})",
                    i,
                ))
    if _slater_point(p, slater_margin) is None:
        out.append(Diagnostic(
            "warning",
            "no interior allocation meeting the resource constraint was found "
            "(Slater condition could not be confirmed)",
        ))
    g = p.graph
    if not is_strongly_connected(g):
        out.append(Diagnostic("warning", "communication graph is not strongly connected"))
    if not is_weight_balanced(g):
        out.append(Diagnostic("warning", "communication graph is not weight-balanced"))
    return out


@dataclass(frozen=True)
class KktReport:
    """Optimality residuals; all four at or below a tolerance certify an
    approximate optimum."""

    resource_gap: float
    stationarity_residuals: np.ndarray
    multiplier_spread: float
    feasibility_violations: np.ndarray

    def max_residual(self) -> float:
        return float(max(
            self.resource_gap,
            np.max(self.stationarity_residuals),
            self.multiplier_spread,
            np.max(self.feasibility_violations),
        ))

    def certifies(self, tol=CERTIFY_TOL) -> bool:
        return self.max_residual() <= tol

    def as_dict(self):
        return {
            "resource_gap": float(self.resource_gap),
            "stationarity_residuals": [float(v) for v in self.stationarity_residuals],
            "multiplier_spread": float(self.multiplier_spread),
            "feasibility_violations": [float(v) for v in self.feasibility_violations],
        }


def kkt_residual(p: Problem, y, s, eta=1e-6, kink_tol=None) -> KktReport:
    """Residuals of ``0 in df_i(y_i) - s_i + N_i(y_i)`` and ``sum y = sum d``.

    Stationarity of agent ``i`` is the projected-gradient residual
    ``||y_i - P_i(y_i - eta*(g_i - s_i))|| / eta`` where ``g_i`` is the
    element of the subdifferential closest to ``s_i``. The subdifferential
    of a norm term in ``d > 1`` is a ball and is handled exactly here.

    Parameters
    ----------
    y : array, length N*d
    s : array, length N*d or d
        Per-agent multipliers, or one common multiplier.
    eta : float
        Probe step, must be positive.
    kink_tol : float, optional
        Treat a norm term as sitting on its kink when its anchor is within
        this distance. Useful for endpoints of discretized trajectories,
        which hover around kinks at the scale of the step size.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    n, d = p.n_agents, p.decision_dim
    Y = p.blocks(y)
    s = np.asarray(s, dtype=float)
    S = np.tile(s, (n, 1)) if s.size == d else p.blocks(s)
    stat = np.empty(n)
    feas = np.empty(n)
    for i, a in enumerate(p.agents):
        g = a.cost.subdifferential(Y[i], kink_tol).closest_to(S[i])
        probe = a.feasible_set.project(Y[i] - eta * (g - S[i]))
        stat[i] = np.linalg.norm(Y[i] - probe) / eta
        feas[i] = a.feasible_set.distance(Y[i])
    spread = max((np.linalg.norm(S[i] - S[j]) for i, j in combinations(range(n), 2)), default=0.0)
    gap = np.linalg.norm(Y.sum(axis=0) - p.total_resource)
    return KktReport(float(gap), stat, float(spread), feas)


@dataclass(frozen=True)
class GainBounds:
    """Lower bounds on the gains ``k1``, ``k2`` (``k3`` only needs ``> 0``).

    Unpacks as ``(k1_min, k2_min)`` where ``k2_min`` maps ``k1`` to the
    bound on ``k2``.
    """

    algorithm: str
    k1_min: float
    k2_min: Callable[[float], float]
    lambda2: float
    norm_L: float
    omega: float
    notes: tuple = field(default=())

    def __iter__(self):
        return iter((self.k1_min, self.k2_min))

    def check(self, k1, k2, k3):
        """Per-gain pass/fail (strict inequalities)."""
        return {
            "k1": bool(k1 > self.k1_min),
            "k2": bool(k1 > 0 and k2 > self.k2_min(k1)),
            "k3": bool(k3 > 0),
        }


def _require_omega(p):
    omega = p.strong_convexity_modulus
    if not omega > 0:
        raise ValueError(
            "gain bounds need a positive strong convexity modulus; with strictly "
            "convex costs on an undirected graph any positive gains are admissible"
        )
    return omega


def parameter_bounds_alg1(p: Problem) -> GainBounds:
    """Bounds for the first algorithm on a strongly connected, weight-balanced
    digraph: ``k1 > ||L||^2 / (lambda2 * omega)`` and
    ``k2 > k1^2 / lambda2^2``.

    The constant in the ``k2`` bound is not defined where the bound is
    stated; it is read as ``lambda2``, the second-smallest eigenvalue of
    ``Sym(L)``, which is the value that makes the Lyapunov decrease
    coefficient ``k2*lambda2 - k1^2/lambda2`` positive.
    """
    g = p.graph
    if not (is_strongly_connected(g) and is_weight_balanced(g)):
        raise ValueError("the first algorithm's bounds need a strongly connected, weight-balanced digraph")
    omega = _require_omega(p)
    lb = p.laplacian
    lam, nrm = lb.lambda2_sym, lb.spectral_norm_L
    return GainBounds(
        algorithm="alg1",
        k1_min=nrm ** 2 / (lam * omega),
        k2_min=lambda k1: k1 ** 2 / lam ** 2,
        lambda2=lam,
        norm_L=nrm,
        omega=omega,
        notes=("assumption: the spectral constant in the k2 bound is read as lambda2(Sym(L))",),
    )


def parameter_bounds_alg2(p: Problem) -> GainBounds:
    """Bounds for the initialization-free algorithm on a connected undirected
    graph: ``k1 > ||L||^2 / (lambda2^2 * omega)`` and
    ``k2 > k1^2 * ||L||^2 / lambda2^3``."""
    if not is_undirected(p.graph):
        raise ValueError("the initialization-free algorithm is only defined for undirected graphs")
    lb = p.laplacian
    if not is_connected(lb):
        raise ValueError("graph is not connected")
    omega = _require_omega(p)
    lam, nrm = lb.lambda2_sym, lb.spectral_norm_L
    return GainBounds(
        algorithm="alg2",
        k1_min=nrm ** 2 / (lam ** 2 * omega),
        k2_min=lambda k1: k1 ** 2 * nrm ** 2 / lam ** 3,
        lambda2=lam,
        norm_L=nrm,
        omega=omega,
    )
