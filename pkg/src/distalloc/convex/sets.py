"""
Closed convex sets with Euclidean projection.
"""

import numpy as np

# Dykstra defaults for polyhedra
DYKSTRA_MAX_ITER = 10_000
DYKSTRA_TOL = 1e-12
MEMBERSHIP_TOL = 1e-9


class ProjectionError(RuntimeError):
    """Raised when an iterative projection fails to reach the set."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class ConvexSet:
    """Base class. Subclasses implement ``dim``, ``project`` and ``bounds``."""

    kind = "abstract"

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def project(self, p):
        raise NotImplementedError

    def bounds(self):
        """Componentwise bounding box ``(lower, upper)``; entries may be infinite."""
        raise NotImplementedError

    def shrunk(self, margin):
        """Inner set at distance ``margin`` from the boundary, or ``None`` if empty."""
        raise NotImplementedError

    def distance(self, p) -> float:
        p = self._check(p)
        return float(np.linalg.norm(p - self.project(p)))

    def contains(self, p, tol=MEMBERSHIP_TOL) -> bool:
        return self.distance(p) <= tol

    def sample(self, rng, n, window=10.0):
        """Draw ``n`` points of the set by projecting uniform draws from the
        bounding box (unbounded sides are cut at ``window``)."""
        lo, hi = self.bounds()
        lo = np.where(np.isfinite(lo), lo, -window)
        hi = np.where(np.isfinite(hi), hi, window)
        raw = rng.uniform(lo, hi, size=(n, self.dim))
        return np.array([self.project(q) for q in raw])

    def _check(self, p):
        p = np.asarray(p, dtype=float)
        if p.shape != (self.dim,):
            raise ValueError(f"expected a vector of length {self.dim}, got shape {p.shape}")
        return p


class WholeSpace(ConvexSet):
    kind = "whole_space"

    def __init__(self, dim):
        if dim < 1:
            raise ValueError("dim must be positive")
        self._dim = int(dim)

    @property
    def dim(self):
        return self._dim

    def project(self, p):
        return self._check(p).copy()

    def bounds(self):
        return np.full(self._dim, -np.inf), np.full(self._dim, np.inf)

    def shrunk(self, margin):
        return self

    def __repr__(self):
        return f"WholeSpace(dim={self._dim})"


class Box(ConvexSet):
    kind = "box"

    def __init__(self, lower, upper):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("box bounds must be vectors of equal length")
        if np.any(lower > upper):
            raise ValueError(f"box lower bound exceeds upper bound: {lower} > {upper}")
        self.lower, self.upper = lower, upper

    @property
    def dim(self):
        return self.lower.size

    def project(self, p):
        return np.clip(self._check(p), self.lower, self.upper)

    def bounds(self):
        return self.lower.copy(), self.upper.copy()

    def shrunk(self, margin):
        lo, hi = self.lower + margin, self.upper - margin
        if np.any(lo > hi):
            return None
        return Box(lo, hi)

    def __repr__(self):
        return f"Box(lower={self.lower.tolist()}, upper={self.upper.tolist()})"


class Ball(ConvexSet):
    kind = "ball"

    def __init__(self, center, radius):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        if not radius > 0:
            raise ValueError(f"ball radius must be positive, got {radius}")
        self.radius = float(radius)

    @property
    def dim(self):
        return self.center.size

    def project(self, p):
        p = self._check(p)
        v = p - self.center
        dist = np.linalg.norm(v)
        if dist <= self.radius:
            return p.copy()
        return self.center + (self.radius / dist) * v

    def bounds(self):
        return self.center - self.radius, self.center + self.radius

    def shrunk(self, margin):
        if margin >= self.radius:
            return None
        return Ball(self.center, self.radius - margin)

    def __repr__(self):
        return f"Ball(center={self.center.tolist()}, radius={self.radius})"


class Polyhedron(ConvexSet):
    """Intersection of halfspaces ``normals @ y <= offsets``.

    Projection runs Dykstra's alternating projections over the halfspaces,
    then tries to polish the result by solving the equality-constrained
    projection on the detected active set.
    """

    kind = "polyhedron"

    def __init__(self, normals, offsets, max_iter=DYKSTRA_MAX_ITER, tol=DYKSTRA_TOL):
        A = np.atleast_2d(np.asarray(normals, dtype=float))
        b = np.atleast_1d(np.asarray(offsets, dtype=float))
        if A.shape[0] < 1 or b.shape != (A.shape[0],):
            raise ValueError("polyhedron needs at least one row and one offset per row")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms == 0):
            raise ValueError("polyhedron rows must have nonzero normals")
        self.normals, self.offsets = A, b
        self._sqnorms = norms ** 2
        self.max_iter, self.tol = max_iter, tol

    @classmethod
    def from_rows(cls, rows, **kwargs):
        """Build from ``[(normal, offset), ...]``."""
        normals = [r[0] for r in rows]
        offsets = [r[1] for r in rows]
        return cls(normals, offsets, **kwargs)

    @property
    def rows(self):
        return [(a.copy(), float(c)) for a, c in zip(self.normals, self.offsets)]

    @property
    def dim(self):
        return self.normals.shape[1]

    def violation(self, p) -> float:
        return float(max(np.max(self.normals @ p - self.offsets), 0.0))

    def project(self, p):
        p = self._check(p)
        if np.all(self.normals @ p <= self.offsets):
            return p.copy()
        x = self._dykstra(p)
        polished = self._polish(p, x)
        if polished is not None:
            x = polished
        resid = self.violation(x)
        if resid > MEMBERSHIP_TOL:
            raise ProjectionError("Dykstra projection did not reach the polyhedron", resid)
        return x

    def _dykstra(self, p):
        A, b, sq = self.normals, self.offsets, self._sqnorms
        x = p.copy()
        incs = np.zeros_like(A)
        for _ in range(self.max_iter):
            x_cycle, incs_cycle = x, incs.copy()
            for k in range(A.shape[0]):
                z = x + incs[k]
                excess = A[k] @ z - b[k]
                x = z - (excess / sq[k]) * A[k] if excess > 0 else z
                incs[k] = z - x
            # the iterate can pause for a whole cycle while the increments
            # still move, so both must settle
            if np.linalg.norm(x - x_cycle) + np.linalg.norm(incs - incs_cycle) < self.tol:
                break
        return x

    def _polish(self, p, x):
        A, b = self.normals, self.offsets
        scale = 1.0 + np.abs(b)
        active = A @ x >= b - 1e-7 * scale
        if not np.any(active):
            return None
        Aa, ba = A[active], b[active]
        mult, *_ = np.linalg.lstsq(Aa @ Aa.T, Aa @ p - ba, rcond=None)
        if np.any(mult < -1e-12):
            return None
        y = p - Aa.T @ mult
        if np.any(A @ y > b + 1e-12 * scale):
            return None
        return y

    def bounds(self):
        from scipy.optimize import linprog

        lo = np.full(self.dim, -np.inf)
        hi = np.full(self.dim, np.inf)
        for j in range(self.dim):
            c = np.zeros(self.dim)
            c[j] = 1.0
            for sign, out in ((1.0, lo), (-1.0, hi)):
                res = linprog(sign * c, A_ub=self.normals, b_ub=self.offsets,
                              bounds=[(None, None)] * self.dim, method="highs")
                if res.status == 0:
                    out[j] = res.x[j]
        return lo, hi

    def chebyshev_radius(self) -> float:
        """Radius of the largest inscribed ball (0 when the interior is empty,
        ``inf`` when unbounded)."""
        from scipy.optimize import linprog

        norms = np.sqrt(self._sqnorms)
        A_ub = np.hstack([self.normals, norms[:, None]])
        c = np.zeros(self.dim + 1)
        c[-1] = -1.0
        res = linprog(c, A_ub=A_ub, b_ub=self.offsets,
                      bounds=[(None, None)] * self.dim + [(0, None)], method="highs")
        if res.status == 3:
            return np.inf
        if res.status != 0:
            return 0.0
        return float(res.x[-1])

    def shrunk(self, margin):
        inner = Polyhedron(self.normals, self.offsets - margin * np.sqrt(self._sqnorms),
                           max_iter=self.max_iter, tol=self.tol)
        if inner.chebyshev_radius() <= 0.0:
            return None
        return inner

    def __repr__(self):
        return f"Polyhedron(normals={self.normals.tolist()}, offsets={self.offsets.tolist()})"


class Product(ConvexSet):
    """Cartesian product; a point is the concatenation of the parts' points."""

    kind = "product"

    def __init__(self, parts):
        parts = list(parts)
        if not parts:
            raise ValueError("product needs at least one part")
        self.parts = parts
        self._splits = np.cumsum([q.dim for q in parts])[:-1]

    @property
    def dim(self):
        return int(sum(q.dim for q in self.parts))

    def _pieces(self, p):
        return np.split(p, self._splits)

    def project(self, p):
        p = self._check(p)
        return np.concatenate([q.project(c) for q, c in zip(self.parts, self._pieces(p))])

    def bounds(self):
        los, his = zip(*(q.bounds() for q in self.parts))
        return np.concatenate(los), np.concatenate(his)

    def shrunk(self, margin):
        inner = [q.shrunk(margin) for q in self.parts]
        if any(q is None for q in inner):
            return None
        return Product(inner)

    def __repr__(self):
        return f"Product({self.parts!r})"


def project(set_: ConvexSet, p):
    """Euclidean projection of ``p`` onto ``set_``."""
    return set_.project(p)
