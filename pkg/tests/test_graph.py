import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distalloc.graph import (
    Digraph,
    is_strongly_connected,
    is_undirected,
    is_weight_balanced,
    laplacian,
    orthogonal_decomposition,
)
from instances import random_connected_undirected
from reference import directed_ring, undirected_ring


def charpoly_roots(M):
    """Eigenvalues via Faddeev-LeVerrier coefficients and polynomial roots;
    shares no code path with the symmetric eigensolver."""
    n = M.shape[0]
    coeffs = [1.0]
    Mk = np.zeros_like(M)
    for k in range(1, n + 1):
        Mk = M @ Mk + coeffs[-1] * np.eye(n)
        coeffs.append(-np.trace(M @ Mk) / k)
    return np.sort(np.roots(coeffs).real)


def reachable_all(A):
    """Warshall transitive closure over edges with positive weight."""
    n = A.shape[0]
    R = (A > 0) | np.eye(n, dtype=bool)
    for k in range(n):
        R = R | (R[:, [k]] & R[[k], :])
    return bool(R.all())


def complete(n):
    return Digraph(np.ones((n, n)) - np.eye(n))


def test_k2_laplacian_closed_form():
    lb = laplacian(complete(2))
    np.testing.assert_array_equal(lb.L, [[1, -1], [-1, 1]])
    assert lb.lambda2_sym == pytest.approx(2.0, rel=1e-10)
    assert lb.spectral_norm_L == pytest.approx(2.0, rel=1e-10)


def test_k4_lambda2():
    assert laplacian(complete(4)).lambda2_sym == pytest.approx(4.0, rel=1e-10)


def test_directed_ring_spectrum_matches_charpoly():
    g = directed_ring()
    lb = laplacian(g)
    assert is_weight_balanced(g)
    np.testing.assert_allclose(lb.eigs_sym, charpoly_roots(lb.sym_L), atol=1e-8)
    # Sym(L) of the unit 4-ring is I - (A + A^T)/2 with spectrum {0, 1, 1, 2}
    assert lb.lambda2_sym == pytest.approx(1.0, rel=1e-10)
    assert lb.spectral_norm_L == pytest.approx(2.0, rel=1e-10)


def test_undirected_ring_spectrum():
    lb = laplacian(undirected_ring())
    np.testing.assert_allclose(lb.eigs_sym, charpoly_roots(lb.sym_L), atol=1e-8)
    assert lb.lambda2_sym == pytest.approx(2.0, rel=1e-10)
    assert lb.spectral_norm_L == pytest.approx(4.0, rel=1e-10)


def test_edge_direction_convention():
    # edge 0 -> 1 means node 1 hears node 0
    g = Digraph.from_edges(2, [(0, 1, 2.5)])
    assert g.weights[1, 0] == 2.5 and g.weights[0, 1] == 0.0
    assert g.edges() == [(0, 1, 2.5)]


@pytest.mark.parametrize("weights, msg", [
    ([[0.0, -1.0], [1.0, 0.0]], "nonnegative"),
    ([[1.0, 1.0], [1.0, 0.0]], "diagonal"),
    ([[0.0]], "at least 2"),
    ([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]], "square"),
])
def test_digraph_rejects_invalid(weights, msg):
    with pytest.raises(ValueError, match=msg):
        Digraph(weights)


def test_weight_balance_examples():
    assert is_weight_balanced(undirected_ring())
    assert is_weight_balanced(Digraph.from_edges(3, [(0, 1), (1, 2), (2, 0)]))
    star_in = Digraph.from_edges(4, [(1, 0), (2, 0), (3, 0)])
    assert not is_weight_balanced(star_in)


def test_strong_connectivity_examples():
    assert is_strongly_connected(Digraph.from_edges(3, [(0, 1), (1, 2), (2, 0)]))
    assert not is_strongly_connected(Digraph(np.zeros((2, 2))))
    assert is_strongly_connected(directed_ring())
    assert reachable_all(directed_ring().weights)


def test_undirected_examples():
    assert is_undirected(Digraph(np.array([[0, 2.0], [2.0, 0]])))
    assert not is_undirected(Digraph.from_edges(3, [(0, 1), (1, 2), (2, 0)]))
    assert is_undirected(undirected_ring())


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 7), st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_strong_connectivity_matches_warshall(n, seed, density):
    rng = np.random.default_rng(seed)
    A = (rng.random((n, n)) < density) * rng.uniform(0.1, 3.0, (n, n))
    np.fill_diagonal(A, 0.0)
    assert is_strongly_connected(Digraph(A)) == reachable_all(A)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_laplacian_invariants(n, seed):
    rng = np.random.default_rng(seed)
    A = (rng.random((n, n)) < 0.5) * rng.uniform(0.1, 3.0, (n, n))
    np.fill_diagonal(A, 0.0)
    g = Digraph(A)
    lb = laplacian(g)
    assert np.max(np.abs(lb.L @ np.ones(n))) <= 1e-10
    assert np.all(np.diff(lb.eigs_sym) >= 0)
    assert lb.spectral_norm_L >= lb.lambda2_sym - 1e-12
    # balanced version: add the reverse of every edge
    gb = Digraph(A + A.T)
    lbb = laplacian(gb)
    assert is_weight_balanced(gb)
    assert np.max(np.abs(np.ones(n) @ lbb.L)) <= 1e-10
    assert lbb.eigs_sym[0] >= -1e-10


def test_balanced_digraph_sym_psd():
    # a weighted balanced digraph that is not undirected: two overlapping cycles
    g = Digraph.from_edges(4, [(0, 1, 2.0), (1, 2, 2.0), (2, 3, 2.0), (3, 0, 2.0),
                               (0, 2, 1.0), (2, 0, 1.0)])
    lb = laplacian(g)
    assert is_weight_balanced(g) and not is_undirected(g)
    assert lb.eigs_sym[0] >= -1e-10


def test_null_space_equivalence_property():
    # A x = 0 iff A^T A x = 0, tested both ways on 50 random matrices
    rng = np.random.default_rng(7)
    for k in range(50):
        m, n = rng.integers(2, 7, size=2)
        rank = int(rng.integers(1, min(m, n) + 1))
        A = rng.normal(size=(m, rank)) @ rng.normal(size=(rank, n))
        _, sv, vt = np.linalg.svd(A)
        null = vt[np.sum(sv > 1e-10):]
        x_null = null.T @ rng.normal(size=null.shape[0]) if null.size else np.zeros(n)
        x_rand = rng.normal(size=n)
        for x in (x_null, x_rand):
            a_zero = np.linalg.norm(A @ x) <= 1e-9
            ata_zero = np.linalg.norm(A.T @ A @ x) <= 1e-9 * max(1.0, np.linalg.norm(A) ** 2)
            assert a_zero == ata_zero, k


def test_decomposition_k2():
    r, R, J = orthogonal_decomposition(laplacian(complete(2)))
    np.testing.assert_allclose(r, [2 ** -0.5, 2 ** -0.5])
    np.testing.assert_allclose(np.abs(R[:, 0]), [2 ** -0.5, 2 ** -0.5])
    assert R[0, 0] == pytest.approx(-R[1, 0])
    np.testing.assert_allclose(J, [[2.0]], atol=1e-12)


def test_decomposition_k4_spectrum():
    _, _, J = orthogonal_decomposition(laplacian(complete(4)))
    np.testing.assert_allclose(np.linalg.eigvalsh(J), [4, 4, 4], atol=1e-10)
    np.testing.assert_allclose(J, np.diag(np.diag(J)), atol=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_decomposition_identities(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 8))
    g = random_connected_undirected(rng, n, weighted=True)
    lb = laplacian(g)
    r, R, J = orthogonal_decomposition(lb)
    np.testing.assert_allclose(R.T @ R, np.eye(n - 1), atol=1e-10)
    np.testing.assert_allclose(r @ R, 0, atol=1e-10)
    np.testing.assert_allclose(R @ R.T, np.eye(n) - np.ones((n, n)) / n, atol=1e-10)
    np.testing.assert_allclose(J, np.diag(np.diag(J)), atol=1e-8)
    T = np.column_stack([r, R])
    block = np.zeros((n, n))
    block[1:, 1:] = J
    assert np.linalg.norm(T @ block @ T.T - lb.L) <= 1e-8


def test_decomposition_directed_balanced():
    lb = laplacian(directed_ring())
    r, R, J = orthogonal_decomposition(lb)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(J, R.T @ lb.L @ R, atol=1e-12)


def test_decomposition_rejects_disconnected():
    g = Digraph.from_edges(4, [(0, 1), (2, 3)], undirected=True)
    with pytest.raises(ValueError, match="not connected"):
        orthogonal_decomposition(laplacian(g))


def test_permuted_and_scaled():
    g = directed_ring()
    perm = [2, 0, 3, 1]
    gp = g.permuted(perm)
    np.testing.assert_allclose(laplacian(gp).eigs_sym, laplacian(g).eigs_sym, atol=1e-12)
    assert laplacian(g.scaled(3.0)).lambda2_sym == pytest.approx(3.0)
