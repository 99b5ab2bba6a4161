"""Projectable convex sets and nonsmooth convex costs."""

from .sets import (
    Ball,
    Box,
    ConvexSet,
    Polyhedron,
    Product,
    ProjectionError,
    WholeSpace,
    project,
)
from .costs import (
    CostFunction,
    LogSumExpPair,
    Quadratic,
    RationalSaturation,
    Subdifferential,
    SubdifferentialBox,
    WeightedNormKink,
    admissibility_errors,
    curvature_deficit,
    evaluate,
    strong_convexity_slack,
    subdifferential_interval,
    subgradient,
)

__all__ = [
    "Ball", "Box", "ConvexSet", "Polyhedron", "Product", "ProjectionError",
    "WholeSpace", "project", "CostFunction", "LogSumExpPair", "Quadratic",
    "RationalSaturation", "Subdifferential", "SubdifferentialBox",
    "WeightedNormKink", "admissibility_errors", "curvature_deficit", "evaluate",
    "strong_convexity_slack", "subdifferential_interval", "subgradient",
]
