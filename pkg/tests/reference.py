"""Hand-built reference problems, independent of the config loader."""

import numpy as np

from distalloc.convex import (
    Ball,
    Box,
    CostFunction,
    LogSumExpPair,
    Polyhedron,
    Quadratic,
    RationalSaturation,
    WeightedNormKink,
)
from distalloc.graph import Digraph
from distalloc.problem import AgentSpec, Problem

RING = [(0, 1), (1, 2), (2, 3), (3, 0)]

# (alpha, beta, gamma, pmin, pmax, demand) per generator
DISPATCH_TABLE = [
    (0.5, 3.0, 2.0, 20.0, 40.0, 45.0),
    (1.5, 4.0, 1.0, 25.0, 35.0, 40.0),
    (3.0, 5.0, 0.5, 35.0, 50.0, 25.0),
    (1.0, 2.0, 1.5, 25.0, 45.0, 35.0),
]
# closed form: agents 1 and 2 sit at 35 and 50, agents 0 and 3 share 60 at a
# common marginal price 4p - 3 = 3q - 2, so p = 181/7
DISPATCH_OPTIMUM = np.array([181 / 7, 35.0, 50.0, 239 / 7])
DISPATCH_PRICE = 4 * 181 / 7 - 3
ROUNDED_DISPATCH_OPTIMUM = np.array([25.8569, 35.0000, 50.0000, 34.1431])


def directed_ring():
    return Digraph.from_edges(4, RING)


def undirected_ring():
    return Digraph.from_edges(4, RING, undirected=True)


def dispatch_problem(graph=None):
    agents = []
    for a, b, g, lo, hi, dem in DISPATCH_TABLE:
        cost = CostFunction([Quadratic([[g]], [0.0], a), WeightedNormKink(b, [35.0])],
                            strong_convexity_modulus=2 * g)
        agents.append(AgentSpec(cost, Box([lo], [hi]), [dem]))
    return Problem(agents, directed_ring() if graph is None else graph)


def planar_problem(graph=None):
    eye = np.eye(2)
    agents = [
        AgentSpec(CostFunction([Quadratic(eye), WeightedNormKink(1.0, [2, 2])], strong_convexity_modulus=2),
                  Ball([2, 2], 2), [2, 1]),
        AgentSpec(CostFunction([Quadratic(eye), RationalSaturation(20)], strong_convexity_modulus=1.5),
                  Box([1, 0], [2, 1]), [2, 3]),
        AgentSpec(CostFunction([Quadratic(eye, [-4, -6], 13)], strong_convexity_modulus=2),
                  Polyhedron([[-1, 0], [0, -1], [1, 1]], [-0.5, -1, 6]), [2, 4]),
        AgentSpec(CostFunction([LogSumExpPair(0.05), Quadratic(eye)], strong_convexity_modulus=2),
                  Ball([3, 5], 2), [1, 5]),
    ]
    return Problem(agents, directed_ring() if graph is None else graph)


PLANAR_TOTAL = np.array([7.0, 13.0])


def planar_objective(Y1, Y2, Y3, Y4):
    """The four planar costs written out directly and summed, vectorized over
    leading axes."""
    def sq(v):
        return np.sum(v * v, axis=-1)

    f1 = sq(Y1) + np.linalg.norm(Y1 - 2.0, axis=-1)
    f2 = sq(Y2) + np.sum(Y2 * Y2 / (20 * Y2 * Y2 + 1), axis=-1)
    f3 = sq(Y3 - np.array([2.0, 3.0]))
    f4 = np.sum(np.log(np.exp(-0.05 * Y4) + np.exp(0.05 * Y4)), axis=-1) + sq(Y4)
    return f1 + f2 + f3 + f4


def _onto_ball(Z, c, r):
    v = Z - c
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return c + v * np.minimum(1.0, r / np.maximum(n, 1e-300))


def _onto_triangle_near_face(Z):
    # exact wherever only the face x + y = 6 can be active
    excess = np.maximum(0.0, Z.sum(axis=-1, keepdims=True) - 6.0) / 2
    return np.maximum(Z - excess, [0.5, 1.0])


def planar_grid_optimum(points=11, refinements=3, pad=1.5):
    """Coarse-to-fine grid search for the planar instance.

    The last agent is eliminated through the resource constraint. Grid points
    for the first three agents are mapped onto their sets before evaluation,
    so that constrained minimizers are approached at the grid spacing rather
    than its square root. Returns ``(y, objective, spacing)``.
    """
    lo = np.array([0.0, 0.0, 1.0, 0.0, 0.5, 1.0])
    hi = np.array([4.0, 4.0, 2.0, 1.0, 5.0, 5.5])
    best_y, best_v, z_best = None, np.inf, None
    for _ in range(refinements + 1):
        axes = [np.linspace(a, b, points) for a, b in zip(lo, hi)]
        step = (hi - lo) / (points - 1)
        rest = np.stack(np.meshgrid(*axes[2:], indexing="ij"), -1).reshape(-1, 4)
        Y2 = np.clip(rest[:, :2], [1.0, 0.0], [2.0, 1.0])
        Y3 = _onto_triangle_near_face(rest[:, 2:])
        for a0 in axes[0]:
            for a1 in axes[1]:
                Y1 = _onto_ball(np.array([a0, a1]), np.array([2.0, 2.0]), 2.0)
                Y4 = PLANAR_TOTAL - Y1 - Y2 - Y3
                v = planar_objective(Y1, Y2, Y3, Y4)
                v[np.linalg.norm(Y4 - [3.0, 5.0], axis=-1) > 2.0] = np.inf
                k = int(np.argmin(v))
                if v[k] < best_v:
                    best_v = float(v[k])
                    best_y = np.concatenate([Y1, Y2[k], Y3[k], Y4[k]])
                    z_best = np.concatenate([[a0, a1], rest[k]])
        lo, hi = z_best - pad * step, z_best + pad * step
    return best_y, best_v, float(step.max())
