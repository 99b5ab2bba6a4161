"""
Nonsmooth convex costs built from a few primitive terms.

Every cost is ``smooth(y) + sum_k w_k * ||y - a_k||``. At any point the
convex subdifferential is therefore a Euclidean ball
``center + B(0, radius)`` where ``radius`` sums the weights of the norm
terms whose anchor coincides with ``y``. All subgradient queries go through
that representation.
"""

import math
from typing import NamedTuple

import numpy as np

# relative distance under which a point is treated as sitting on a kink
KINK_RTOL = 1e-12


def _norm(v):
    return math.sqrt(float(v @ v))


class Quadratic:
    """``y^T Q y + b^T y + c``."""

    kind = "quadratic"

    def __init__(self, Q, b=None, c=0.0):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if Q.shape[0] != Q.shape[1]:
            raise ValueError(f"Q must be square, got shape {Q.shape}")
        self.Q = Q
        self.b = np.zeros(Q.shape[0]) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
        if self.b.shape != (Q.shape[0],):
            raise ValueError("b must match the size of Q")
        self.c = float(c)
        self._H = Q + Q.T
        eigs = np.linalg.eigvalsh(0.5 * self._H)
        if eigs[0] < -1e-12 * max(1.0, abs(eigs[-1])):
            raise ValueError(f"Q must be positive semidefinite, min eigenvalue {eigs[0]:.3e}")
        self.min_eig, self.max_eig = float(eigs[0]), float(eigs[-1])

    dim = property(lambda self: self.Q.shape[0])

    def value(self, y):
        return float(y @ self.Q @ y + self.b @ y + self.c)

    def gradient(self, y):
        return self._H @ y + self.b

    def diag_curvature(self, y):
        return np.diag(self._H).copy()

    def curvature_bound(self):
        return 2.0 * self.max_eig


class WeightedNormKink:
    """``weight * ||y - anchor||`` (Euclidean norm)."""

    kind = "norm_kink"

    def __init__(self, weight, anchor):
        if weight < 0:
            raise ValueError("kink weight must be nonnegative")
        self.weight = float(weight)
        self.anchor = np.atleast_1d(np.asarray(anchor, dtype=float))
        self._tol = KINK_RTOL * max(1.0, _norm(self.anchor))

    dim = property(lambda self: self.anchor.size)

    def value(self, y):
        return self.weight * _norm(y - self.anchor)

    def at_kink(self, y, tol=None):
        return _norm(y - self.anchor) <= (self._tol if tol is None else tol)


class LogSumExpPair:
    """``sum_j ln(exp(-a*y_j) + exp(a*y_j))``, a smooth absolute value."""

    kind = "logsumexp_pair"
    dim = None

    def __init__(self, scale):
        self.scale = float(scale)

    def value(self, y):
        z = np.abs(self.scale * y)
        return float(np.sum(z + np.log1p(np.exp(-2.0 * z))))

    def gradient(self, y):
        return self.scale * np.tanh(self.scale * y)

    def diag_curvature(self, y):
        return self.scale ** 2 / np.cosh(self.scale * y) ** 2

    def curvature_bound(self):
        return self.scale ** 2


class RationalSaturation:
    """``sum_j y_j^2 / (c*y_j^2 + 1)``. Nonconvex alone; only admissible next
    to a quadratic that dominates its negative curvature."""

    kind = "rational_saturation"
    dim = None

    def __init__(self, denomscale):
        if not denomscale > 0:
            raise ValueError("denomscale must be positive")
        self.denomscale = float(denomscale)

    def value(self, y):
        y2 = y * y
        return float(np.sum(y2 / (self.denomscale * y2 + 1.0)))

    def gradient(self, y):
        return 2.0 * y / (self.denomscale * y * y + 1.0) ** 2

    def diag_curvature(self, y):
        u = self.denomscale * y * y
        return (2.0 - 6.0 * u) / (u + 1.0) ** 3

    def curvature_bound(self):
        # |g''| peaks at y = 0
        return 2.0


SMOOTH_TERMS = (Quadratic, LogSumExpPair, RationalSaturation)


class Subdifferential(NamedTuple):
    """The ball ``center + B(0, radius)``."""

    center: np.ndarray
    radius: float

    def min_norm(self):
        n = _norm(self.center)
        if n <= self.radius:
            return np.zeros_like(self.center)
        return self.center * (1.0 - self.radius / n)

    def closest_to(self, target):
        v = target - self.center
        n = _norm(v)
        if n <= self.radius:
            return np.array(target, dtype=float)
        return self.center + (self.radius / n) * v


class SubdifferentialBox(NamedTuple):
    lower: np.ndarray
    upper: np.ndarray
    exact: bool  # False when a multi-dimensional ball was boxed


class CostFunction:
    """Sum of primitive terms plus a declared strong convexity modulus.

    Parameters
    ----------
    terms : list
        Primitive terms. Terms without an intrinsic size (log-sum-exp,
        rational) act coordinatewise.
    dim : int, optional
        Decision dimension; inferred from sized terms when omitted.
    strong_convexity_modulus : float
        User-declared modulus, validated by spot checks elsewhere.
    """

    def __init__(self, terms, dim=None, strong_convexity_modulus=0.0):
        self.terms = list(terms)
        if not self.terms:
            raise ValueError("cost needs at least one term")
        sizes = {t.dim for t in self.terms if t.dim is not None}
        if dim is not None:
            sizes.add(int(dim))
        if len(sizes) != 1:
            raise ValueError(f"cannot infer a single dimension from terms (sizes {sorted(sizes)})")
        self.dim = sizes.pop()
        if strong_convexity_modulus < 0:
            raise ValueError("strong convexity modulus must be nonnegative")
        self.strong_convexity_modulus = float(strong_convexity_modulus)
        quads = [t for t in self.terms if isinstance(t, Quadratic)]
        if quads and self.strong_convexity_modulus > 2.0 * sum(q.min_eig for q in quads) + 1e-12:
            raise ValueError(
                "declared strong convexity modulus exceeds twice the quadratic's smallest eigenvalue"
            )
        self._smooth = [t for t in self.terms if isinstance(t, SMOOTH_TERMS)]
        self._kinks = [t for t in self.terms if isinstance(t, WeightedNormKink)]

    @property
    def kinks(self):
        return list(self._kinks)

    def _vec(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (self.dim,):
            raise ValueError(f"expected a vector of length {self.dim}, got shape {y.shape}")
        return y

    def value(self, y) -> float:
        y = self._vec(y)
        return float(sum(t.value(y) for t in self.terms))

    def smooth_gradient(self, y):
        y = self._vec(y)
        g = self._smooth[0].gradient(y) if self._smooth else np.zeros(self.dim)
        for t in self._smooth[1:]:
            g = g + t.gradient(y)
        return g

    def subdifferential(self, y, kink_tol=None) -> Subdifferential:
        """Exact subdifferential as a ball.

        ``kink_tol`` widens the notion of "on the kink": a norm term whose
        anchor lies within ``kink_tol`` of ``y`` contributes its full ball.
        """
        y = self._vec(y)
        center = self.smooth_gradient(y)
        radius = 0.0
        for k in self._kinks:
            v = y - k.anchor
            dist = _norm(v)
            if dist <= (k._tol if kink_tol is None else kink_tol):
                radius += k.weight
            else:
                center += (k.weight / dist) * v
        return Subdifferential(center, radius)

    def subgradient(self, y):
        """Minimum-norm element of the subdifferential."""
        return self.subdifferential(y).min_norm()

    def subdifferential_interval(self, y) -> SubdifferentialBox:
        sd = self.subdifferential(y)
        exact = self.dim == 1 or sd.radius == 0.0
        return SubdifferentialBox(sd.center - sd.radius, sd.center + sd.radius, exact)

    def diag_curvature(self, y):
        """Per-coordinate second derivative of the smooth part."""
        y = self._vec(y)
        return sum(t.diag_curvature(y) for t in self._smooth) if self._smooth else np.zeros(self.dim)

    def curvature_bound(self) -> float:
        """Lipschitz constant of the smooth gradient."""
        return float(sum(t.curvature_bound() for t in self._smooth))

    def __repr__(self):
        return f"CostFunction(dim={self.dim}, terms={[t.kind for t in self.terms]})"


def evaluate(f: CostFunction, y) -> float:
    return f.value(y)


def subgradient(f: CostFunction, y):
    return f.subgradient(y)


def subdifferential_interval(f: CostFunction, y) -> SubdifferentialBox:
    """Componentwise box containing the subdifferential at ``y``; the box is
    the subdifferential itself in one dimension."""
    return f.subdifferential_interval(y)


def curvature_deficit(f: CostFunction, lower, upper, n_grid=100, window=10.0):
    """Smallest per-coordinate second derivative of the smooth part over a
    grid spanning ``[lower, upper]`` (infinite sides cut at ``window``).

    Coordinates are probed one at a time with the others held at the box
    midpoint. A negative return means the cost is not convex on the box.
    """
    lower = np.where(np.isfinite(lower), lower, -window)
    upper = np.where(np.isfinite(upper), upper, window)
    mid = 0.5 * (lower + upper)
    worst = np.inf
    for j in range(f.dim):
        for t in np.linspace(lower[j], upper[j], n_grid):
            y = mid.copy()
            y[j] = t
            worst = min(worst, float(f.diag_curvature(y)[j]))
    return worst


def admissibility_errors(f: CostFunction, feasible_set, n_grid=100):
    """Reasons why ``f`` is not admissible on ``feasible_set`` (empty if fine)."""
    errors = []
    if any(isinstance(t, RationalSaturation) for t in f.terms):
        if not any(isinstance(t, Quadratic) for t in f.terms):
            errors.append("rational saturation term requires a dominating quadratic term")
        else:
            lo, hi = feasible_set.bounds()
            worst = curvature_deficit(f, lo, hi, n_grid)
            if worst < 0:
                errors.append(f"cost is not convex on the feasible set (curvature {worst:.3e})")
    return errors


def strong_convexity_slack(f: CostFunction, points, rng, n_pairs=200):
    """Minimum of ``f(z) - f(y) - g^T(z-y) - (w/2)||z-y||^2`` over random
    pairs from ``points`` with ``g`` the min-norm subgradient at ``y``."""
    points = np.asarray(points)
    w = f.strong_convexity_modulus
    worst = np.inf
    for _ in range(n_pairs):
        i, j = rng.integers(0, len(points), size=2)
        y, z = points[i], points[j]
        g = f.subgradient(y)
        gap = f.value(z) - f.value(y) - g @ (z - y) - 0.5 * w * float((z - y) @ (z - y))
        worst = min(worst, gap)
    return worst
