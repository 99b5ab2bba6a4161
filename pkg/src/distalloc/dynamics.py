"""
Forward-Euler simulation of the two projected primal-dual algorithms.

Both evolve per-agent states ``(x_i, s_i, w_i)`` with the decision read out
as ``y_i = P_i(x_i)``. In stacked form, with ``L`` acting blockwise::

    dx = y - x - g + s,            g in df(y)  (min-norm element)
    ds = k1 * u - k2 * L s
    dw = -k3 * L u

where ``u = w - y + d`` for ``alg1`` and ``u = L w - y + d`` for ``alg2``.
``alg1`` needs ``sum_i w_i(0) = 0``; ``alg2`` accepts any ``w(0)`` but is
restricted to undirected graphs.
"""

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .graph import is_undirected, is_weight_balanced, orthogonal_decomposition
from .problem import KktReport, Problem, kkt_residual

ALGORITHMS = ("alg1", "alg2")
EQUILIBRIUM_TOL = 1e-9
DIVERGENCE_LIMIT = 1e12


class DivergenceError(RuntimeError):
    def __init__(self, message, time):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True)
class DynParams:
    k1: float
    k2: float
    k3: float
    step_size: float = 1e-3
    max_time: float = 30.0
    record_every: int = 10
    average_window: float = 1.0  # tail span averaged into Trajectory.tail_mean

    def __post_init__(self):
        if self.average_window < 0:
            raise ValueError("average_window must be nonnegative")
        for name in ("k1", "k2", "k3", "step_size", "max_time"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ValueError("record_every must be a positive integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.max_time / self.step_size))


@dataclass(frozen=True)
class DynState:
    """Stacked states; ``y`` is always the projection of ``x``."""

    x: np.ndarray
    s: np.ndarray
    w: np.ndarray
    y: np.ndarray

    @classmethod
    def from_xsw(cls, problem: Problem, x, s, w):
        n = problem.n_agents * problem.decision_dim
        arrs = []
        for name, v in (("x", x), ("s", s), ("w", w)):
            v = np.array(v, dtype=float).ravel()
            if v.shape != (n,):
                raise ValueError(f"{name} must have length {n}, got {v.size}")
            arrs.append(v)
        x, s, w = arrs
        return cls(x, s, w, problem.project(x))

    @classmethod
    def zeros(cls, problem: Problem):
        z = np.zeros(problem.n_agents * problem.decision_dim)
        return cls.from_xsw(problem, z, z, z)


@dataclass
class Trajectory:
    algorithm: str
    times: np.ndarray
    states: list
    lyapunov: list | None = None
    kkt_series: list | None = None
    stopped_early: bool = False
    decision_dim: int = 1
    tail_mean: DynState | None = None
    step_size: float = 0.0

    @property
    def final(self) -> DynState:
        return self.states[-1]

    @property
    def terminal(self) -> DynState:
        """Average over the final window when the run did not settle exactly,
        otherwise the last state. Explicit Euler chatters around kinks with
        amplitude of order ``h``; the tail average removes the oscillation."""
        if self.stopped_early or self.tail_mean is None:
            return self.final
        return self.tail_mean

    def ys(self):
        return np.array([st.y for st in self.states])

    def write_csv(self, fh):
        """One row per (sample, agent, coordinate)."""
        d = self.decision_dim
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "agent", "coord", "x", "y", "s", "w"])
        for t, st in zip(self.times, self.states):
            for k in range(st.x.size):
                writer.writerow([repr(float(t)), k // d, k % d, repr(float(st.x[k])),
                                 repr(float(st.y[k])), repr(float(st.s[k])), repr(float(st.w[k]))])


@dataclass(frozen=True)
class EquilibriumCertificate:
    state: DynState
    residual_norm: float
    kkt: KktReport
    algorithm: str = field(default="alg1")


def _kron_apply(L, v, d):
    """``(L kron I_d) v`` for stacked ``v``."""
    return (L @ v.reshape(-1, d)).ravel()


def _consensus_terms(p: Problem, st: DynState, params: DynParams, which):
    d = p.decision_dim
    L = p.laplacian.L
    dvec = p.resources.ravel()
    w_eff = st.w if which == "alg1" else _kron_apply(L, st.w, d)
    u = w_eff - st.y + dvec
    ds = params.k1 * u - params.k2 * _kron_apply(L, st.s, d)
    dw = -params.k3 * _kron_apply(L, u, d)
    return ds, dw


def rhs(p: Problem, st: DynState, params: DynParams, which="alg1"):
    """Right-hand side with the min-norm subgradient selection."""
    if which not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {which!r}")
    dx = st.y - st.x - p.subgradients(st.y) + st.s
    ds, dw = _consensus_terms(p, st, params, which)
    return dx, ds, dw


def rhs_alg1(p: Problem, st: DynState, params: DynParams):
    return rhs(p, st, params, "alg1")


def rhs_alg2(p: Problem, st: DynState, params: DynParams):
    return rhs(p, st, params, "alg2")


def inclusion_residual(p: Problem, st: DynState, params: DynParams, which="alg1") -> float:
    """Norm of the smallest element of the set-valued right-hand side, i.e.
    the distance from 0 to ``F(state)``; zero exactly at equilibria."""
    Y, X, S = p.blocks(st.y), p.blocks(st.x), p.blocks(st.s)
    dx = np.concatenate([
        Y[i] - X[i] + S[i] - a.cost.subdifferential(Y[i]).closest_to(Y[i] - X[i] + S[i])
        for i, a in enumerate(p.agents)
    ])
    ds, dw = _consensus_terms(p, st, params, which)
    return float(np.sqrt(dx @ dx + ds @ ds + dw @ dw))


def integrate(p: Problem, params: DynParams, init: DynState, which="alg1", *,
              equilibrium=None, monitor_kkt=False, force=False) -> Trajectory:
    """Integrate one algorithm with explicit Euler steps.

    Parameters
    ----------
    equilibrium : EquilibriumCertificate, optional
        When given, ``V1`` is evaluated at every recorded sample.
    monitor_kkt : bool
        Record a :class:`KktReport` at every sample.
    force : bool
        Run ``alg2`` on a graph that is not undirected (negative controls).

    Raises
    ------
    DivergenceError
        If any state entry leaves ``[-1e12, 1e12]`` or becomes non-finite.
    """
    if which not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {which!r}")
    p.check_dimensions()
    d = p.decision_dim
    if which == "alg1":
        if not is_weight_balanced(p.graph):
            warnings.warn("alg1 on a graph that is not weight-balanced", stacklevel=2)
        w_sum = p.blocks(init.w).sum(axis=0)
        if np.linalg.norm(w_sum) > 1e-12:
            warnings.warn(f"alg1 expects sum_i w_i(0) = 0, got {w_sum}", stacklevel=2)
    elif not is_undirected(p.graph):
        if not force:
            raise ValueError("alg2 requires an undirected graph (pass force=True to override)")
        warnings.warn("alg2 forced onto a directed graph", stacklevel=2)

    h = params.step_size
    times, states = [0.0], [init]
    lyap = [] if equilibrium is not None else None
    kkts = [] if monitor_kkt else None

    def record(st):
        if lyap is not None:
            lyap.append(lyapunov_v1(p, st, equilibrium, params))
        if kkts is not None:
            kkts.append(kkt_residual(p, st.y, st.s))

    record(init)
    x, s, w, y = init.x.copy(), init.s.copy(), init.w.copy(), init.y.copy()
    stopped = False
    n_steps = params.n_steps
    tail_from = n_steps - min(n_steps, max(1, int(round(params.average_window / h))))
    acc = [np.zeros_like(x) for _ in range(4)]
    for k in range(1, n_steps + 1):
        st = DynState(x, s, w, y)
        dx, ds, dw = rhs(p, st, params, which)
        if np.sqrt(dx @ dx + ds @ ds + dw @ dw) <= EQUILIBRIUM_TOL:
            stopped = True
            if times[-1] != (k - 1) * h:
                times.append((k - 1) * h)
                states.append(st)
                record(st)
            break
        x = x + h * dx
        s = s + h * ds
        w = w + h * dw
        worst = max(np.max(np.abs(x)), np.max(np.abs(s)), np.max(np.abs(w)))
        if not np.isfinite(worst) or worst > DIVERGENCE_LIMIT:
            raise DivergenceError(f"state diverged at t = {k * h:.6g} (max |entry| = {worst:.3e})", k * h)
        y = p.project(x)
        if k > tail_from:
            for a, v in zip(acc, (x, s, w, y)):
                a += v
        if k % params.record_every == 0 or k == n_steps:
            st = DynState(x, s, w, y)
            times.append(k * h)
            states.append(st)
            record(st)
    tail = None
    if not stopped and n_steps > tail_from:
        tail = DynState(*(a / (n_steps - tail_from) for a in acc))
    return Trajectory(which, np.array(times), states, lyap, kkts, stopped, d, tail, h)


def chatter_tolerance(p: Problem, step_size) -> float:
    """Kink tolerance matching the Euler oscillation amplitude, about
    ``2 h`` times the kink weight, with a factor two of headroom."""
    weights = [sum(k.weight for k in a.cost.kinks) for a in p.agents]
    return 4.0 * step_size * max(weights, default=0.0)


def terminal_kkt(p: Problem, traj: Trajectory) -> KktReport:
    """KKT report of the trajectory's terminal estimate; norm terms whose
    anchor lies within the chatter tolerance count as active."""
    st = traj.terminal
    tol = 0.0 if traj.stopped_early else chatter_tolerance(p, traj.step_size)
    return kkt_residual(p, st.y, st.s, kink_tol=tol if tol > 0 else None)


def equilibrium_from_optimum(p: Problem, y_star, s_star, params: DynParams, which="alg1"):
    """Build the equilibrium associated with an optimum and a common multiplier.

    ``x* = y* + s* - g*`` with ``g*`` the subgradient at ``y*`` closest to
    ``s*``; ``w* = y* - d`` for ``alg1`` and the minimum-norm solution of
    ``L w* = y* - d`` for ``alg2``.
    """
    n, d = p.n_agents, p.decision_dim
    Y = p.blocks(y_star)
    s_star = np.asarray(s_star, dtype=float).ravel()
    S = np.tile(s_star, (n, 1)) if s_star.size == d else p.blocks(s_star)
    G = np.array([a.cost.subdifferential(Y[i]).closest_to(S[i]) for i, a in enumerate(p.agents)])
    X = Y + S - G
    target = Y - p.resources
    if which == "alg1":
        W = target
    else:
        W = np.linalg.pinv(p.laplacian.L) @ target
    st = DynState.from_xsw(p, X.ravel(), S.ravel(), W.ravel())
    return EquilibriumCertificate(
        state=st,
        residual_norm=inclusion_residual(p, st, params, which),
        kkt=kkt_residual(p, st.y, st.s),
        algorithm=which,
    )


def lyapunov_v1(p: Problem, st: DynState, eq: EquilibriumCertificate, params: DynParams) -> float:
    """``k1/2 (||x - y*||^2 - ||x - y||^2) + 1/2 ||T^T(s - s*)||^2
    + 1/(2 k3) ||R^T (w - w*)||^2`` with ``T = [r R]`` from the orthogonal
    decomposition of the Laplacian, applied per decision coordinate."""
    r, R, _ = p.decomposition
    d = p.decision_dim
    T = np.column_stack([r, R])
    e = eq.state
    proj_part = 0.5 * params.k1 * (np.sum((st.x - e.y) ** 2) - np.sum((st.x - st.y) ** 2))
    s_t = T.T @ (st.s - e.s).reshape(-1, d)
    w_t = R.T @ (st.w - e.w).reshape(-1, d)
    return float(proj_part + 0.5 * np.sum(s_t ** 2) + np.sum(w_t ** 2) / (2.0 * params.k3))


def check_w_conservation(traj: Trajectory) -> float:
    """Largest drift of ``sum_i w_i(t)`` from its initial value."""
    if traj.algorithm != "alg1":
        raise ValueError("conservation of sum_i w_i only holds for alg1 trajectories")
    d = traj.decision_dim
    w0 = traj.states[0].w.reshape(-1, d).sum(axis=0)
    return float(max(np.linalg.norm(st.w.reshape(-1, d).sum(axis=0) - w0) for st in traj.states))
