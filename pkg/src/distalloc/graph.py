"""
Weighted communication digraphs and their Laplacians.

Convention: ``weights[i, j] > 0`` means node ``i`` receives information
from node ``j`` (edge ``j -> i``). The Laplacian is ``diag(in-degree) - A``
with in-degrees taken as row sums, so ``L @ 1 == 0`` always holds.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

# a graph counts as connected when lambda_2(Sym(L)) exceeds this
CONNECTIVITY_TOL = 1e-8


@dataclass(frozen=True)
class Digraph:
    """Immutable weighted digraph on ``n_nodes`` nodes.

    Parameters
    ----------
    weights : array_like, shape (n, n)
        Nonnegative adjacency matrix with zero diagonal.
    """

    weights: np.ndarray

    def __post_init__(self):
        a = np.array(self.weights, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"adjacency matrix must be square, got shape {a.shape}")
        if a.shape[0] < 2:
            raise ValueError("a graph needs at least 2 nodes")
        if not np.all(np.isfinite(a)):
            raise ValueError("adjacency weights must be finite")
        if np.any(a < 0):
            raise ValueError("adjacency weights must be nonnegative")
        if np.any(np.diag(a) != 0):
            raise ValueError("adjacency diagonal must be exactly zero (no self loops)")
        a.setflags(write=False)
        object.__setattr__(self, "weights", a)

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def from_edges(cls, n_nodes, edges, undirected=False):
        """Build a graph from ``(source, target[, weight])`` tuples.

        An edge ``(j, i, w)`` lets node ``i`` hear node ``j`` with weight
        ``w`` (default 1.0). With ``undirected=True`` every edge is mirrored.
        Repeated edges overwrite earlier ones.
        """
        a = np.zeros((n_nodes, n_nodes))
        for edge in edges:
            if len(edge) == 2:
                (src, dst), w = edge, 1.0
            elif len(edge) == 3:
                src, dst, w = edge
            else:
                raise ValueError(f"edge must be (source, target[, weight]), got {edge!r}")
            if not (0 <= src < n_nodes and 0 <= dst < n_nodes):
                raise ValueError(f"edge {edge!r} references a node outside 0..{n_nodes - 1}")
            if src == dst:
                raise ValueError(f"self loop on node {src}")
            a[dst, src] = w
            if undirected:
                a[src, dst] = w
        return cls(a)

    def edges(self):
        """List of ``(source, target, weight)`` for every positive weight."""
        dst, src = np.nonzero(self.weights)
        return [(int(j), int(i), float(self.weights[i, j])) for i, j in zip(dst, src)]

    def permuted(self, perm):
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm)
        return Digraph(self.weights[np.ix_(perm, perm)])

    def scaled(self, factor):
        return Digraph(self.weights * factor)


@dataclass(frozen=True)
class LaplacianBundle:
    """Laplacian of a digraph together with the spectral data used by the
    gain bounds."""

    L: np.ndarray
    sym_L: np.ndarray
    lambda2_sym: float
    spectral_norm_L: float
    eigs_sym: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.L.shape[0]

    @property
    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.L, self.L.T))


def laplacian(g: Digraph) -> LaplacianBundle:
    """Compute ``L = D_in - A`` and its spectral summary.

    ``lambda2_sym`` is the second-smallest eigenvalue of ``(L + L^T) / 2``
    and ``spectral_norm_L`` the largest singular value of ``L``.
    """
    a = g.weights
    L = np.diag(a.sum(axis=1)) - a
    sym_L = 0.5 * (L + L.T)
    eigs = np.linalg.eigvalsh(sym_L)
    norm = float(np.linalg.norm(L, 2))
    for arr in (L, sym_L, eigs):
        arr.setflags(write=False)
    return LaplacianBundle(
        L=L,
        sym_L=sym_L,
        lambda2_sym=float(max(eigs[1], 0.0)),
        spectral_norm_L=norm,
        eigs_sym=eigs,
    )


def is_weight_balanced(g: Digraph, tol: float = 1e-10) -> bool:
    """True iff every column of ``L`` sums to zero (in-degree == out-degree)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    a = g.weights
    return bool(np.all(np.abs(a.sum(axis=1) - a.sum(axis=0)) <= tol))


def is_strongly_connected(g: Digraph) -> bool:
    n_comp, _ = connected_components(g.weights > 0, directed=True, connection="strong")
    return n_comp == 1


def is_undirected(g: Digraph, tol: float = 1e-12) -> bool:
    if tol <= 0:
        raise ValueError("tol must be positive")
    return bool(np.all(np.abs(g.weights - g.weights.T) <= tol))


def is_connected(lb: LaplacianBundle) -> bool:
    return lb.lambda2_sym > CONNECTIVITY_TOL


def orthogonal_decomposition(lb: LaplacianBundle):
    """Split ``R^N`` into the consensus direction and its complement.

    Returns ``(r, R, J)`` with ``r = 1/sqrt(N)``, ``[r R]`` orthogonal and
    ``J = R^T L R``. For a symmetric Laplacian ``R`` holds the eigenvectors
    of the nonzero eigenvalues, so ``J`` is diagonal; otherwise ``R`` is an
    orthonormal basis of the complement of ``1`` taken from ``Sym(L)``.

    Raises
    ------
    ValueError
        If the graph is not connected (``lambda_2 <= 1e-8``).
    """
    if not is_connected(lb):
        raise ValueError(
            f"graph is not connected: lambda_2(Sym(L)) = {lb.lambda2_sym:.3e}"
        )
    n = lb.n_nodes
    basis = lb.L if lb.is_symmetric else lb.sym_L
    _, vecs = np.linalg.eigh(basis)
    r = np.full(n, 1.0 / np.sqrt(n))
    R = vecs[:, 1:]
    # eigh leaves R orthogonal to the simple null vector; re-project for roundoff
    R = R - np.outer(r, r @ R)
    R, _ = np.linalg.qr(R)
    J = R.T @ lb.L @ R
    return r, R, J
