"""Exact periodic-measure analysis of finite Markov kernels.

Periods and cyclic classes are read off the zero pattern of the kernel
(entries below ``STRUCTURAL_ZERO`` are treated as absent edges), never from
floating-point matrix powers.  Measures are computed by direct linear
solves and exact push-forwards.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    MultipleClosedClasses,
    NegativeEntry,
    NonStochasticRow,
    SingularSystem,
    TransientStart,
)

ROW_SUM_TOL = 1e-12
STRUCTURAL_ZERO = 1e-15


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    """Row-stochastic matrix; ``rows[i]`` is the one-step law from state ``i``.

    Use :func:`validate_kernel` for untrusted input.
    """

    rows: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rows", _frozen(self.rows))

    @property
    def n_states(self) -> int:
        return self.rows.shape[0]

    def adjacency(self) -> np.ndarray:
        return self.rows > STRUCTURAL_ZERO


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 1:
            raise ValueError("weights must be a vector")
        if np.any(w < -ROW_SUM_TOL) or np.any(w > 1 + ROW_SUM_TOL):
            raise ValueError("weights must lie in [0, 1]")
        if abs(w.sum() - 1.0) > ROW_SUM_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        w = np.clip(w, 0.0, 1.0)
        object.__setattr__(self, "weights", _frozen(w))

    def __len__(self) -> int:
        return self.weights.shape[0]

    def support(self, eps: float = 0.0) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.weights > eps))

    @classmethod
    def point_mass(cls, n: int, i: int) -> "DiscreteDistribution":
        w = np.zeros(n)
        w[i] = 1.0
        return cls(w)


@dataclass(frozen=True)
class CyclicDecomposition:
    period: int
    classes: tuple[tuple[int, ...], ...]
    transient: tuple[int, ...]

    def class_of(self, i: int) -> int | None:
        for r, c in enumerate(self.classes):
            if i in c:
                return r
        return None


@dataclass(frozen=True, eq=False)
class DiscretePeriodicMeasure:
    """Period ``tau`` and the measures rho_0..rho_{tau-1}; rho_{s+tau} = rho_s."""

    period: int
    measures: tuple[DiscreteDistribution, ...]

    def __post_init__(self):
        if self.period < 1 or len(self.measures) != self.period:
            raise ValueError("need exactly `period` measures")
        object.__setattr__(self, "measures", tuple(self.measures))

    def rho(self, s: int) -> DiscreteDistribution:
        return self.measures[s % self.period]

    def as_array(self) -> np.ndarray:
        return np.vstack([m.weights for m in self.measures])

    @classmethod
    def from_array(cls, arr) -> "DiscretePeriodicMeasure":
        arr = np.atleast_2d(np.asarray(arr, dtype=float))
        return cls(arr.shape[0], tuple(DiscreteDistribution(r) for r in arr))

    def consistency_error(self, P: TransitionKernel) -> float:
        """max_s ||rho_s P - rho_{s+1}||_inf."""
        arr = self.as_array()
        return float(np.max(np.abs(arr @ P.rows - np.roll(arr, -1, axis=0))))


def tv_distance(a, b) -> float:
    a = getattr(a, "weights", a)
    b = getattr(b, "weights", b)
    return 0.5 * float(np.sum(np.abs(np.asarray(a, float) - np.asarray(b, float))))


def validate_kernel(rows) -> TransitionKernel:
    m = np.asarray(rows, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise ValueError(f"kernel must be a non-empty square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("kernel has non-finite entries")
    neg = np.argwhere(m < 0)
    if len(neg):
        i, j = (int(v) for v in neg[0])
        raise NegativeEntry(f"entry ({i}, {j}) is {m[i, j]!r}")
    sums = m.sum(axis=1)
    for i, s in enumerate(sums):
        if abs(s - 1.0) > ROW_SUM_TOL:
            raise NonStochasticRow(i, float(s))
    return TransitionKernel(m)


def read_kernel_csv(path) -> TransitionKernel:
    """Parse a kernel CSV (one row per line, comma separated) and validate it."""
    text = Path(path).read_text()
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rows.append([float(v) for v in line.split(",")])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: ragged or empty kernel")
    return validate_kernel(rows)


def n_step_kernel(P: TransitionKernel, n: int) -> TransitionKernel:
    if n < 0:
        raise ValueError("n must be non-negative")
    return TransitionKernel(np.linalg.matrix_power(P.rows, n))


# -- structure -------------------------------------------------------------


def _components(adj: np.ndarray) -> tuple[int, np.ndarray]:
    return connected_components(csr_matrix(adj), directed=True, connection="strong")


def _bfs_levels(adj: np.ndarray, root: int, members: set[int]) -> dict[int, int]:
    level = {root: 0}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adj[u]):
            v = int(v)
            if v in members and v not in level:
                level[v] = level[u] + 1
                queue.append(v)
    return level


def _class_period(adj: np.ndarray, root: int, members: set[int]) -> tuple[int, dict[int, int]]:
    level = _bfs_levels(adj, root, members)
    g = 0
    for u in members:
        for v in np.flatnonzero(adj[u]):
            v = int(v)
            if v in members:
                g = math.gcd(g, abs(level[u] + 1 - level[v]))
    return g, level


def state_period(P: TransitionKernel, i: int) -> int | None:
    """gcd{n >= 1 : P^n(i, i) > 0}, or None when ``i`` never returns."""
    adj = P.adjacency()
    _, labels = _components(adj)
    members = {int(j) for j in np.flatnonzero(labels == labels[i])}
    if len(members) == 1 and not adj[i, i]:
        return None
    g, _ = _class_period(adj, i, members)
    return g


def closed_classes(P: TransitionKernel) -> list[tuple[int, ...]]:
    """Closed communicating classes, sorted by lowest member."""
    adj = P.adjacency()
    n_comp, labels = _components(adj)
    out = []
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        leaves = adj[members][:, labels != c].any()
        if not leaves:
            out.append(tuple(int(m) for m in members))
    return sorted(out)


def cyclic_decomposition(P: TransitionKernel) -> CyclicDecomposition:
    classes = closed_classes(P)
    if len(classes) != 1:
        raise MultipleClosedClasses(
            f"recurrent part splits into {len(classes)} closed classes: {classes}"
        )
    rec = classes[0]
    members = set(rec)
    root = rec[0]
    d, level = _class_period(P.adjacency(), root, members)
    cyc = tuple(tuple(sorted(j for j in rec if level[j] % d == r)) for r in range(d))
    transient = tuple(j for j in range(P.n_states) if j not in members)
    return CyclicDecomposition(d, cyc, transient)


# -- measures --------------------------------------------------------------


def stationary_on_class(P: TransitionKernel, dec: CyclicDecomposition) -> DiscreteDistribution:
    """Invariant law of P^d restricted to C_0, embedded in the full state space."""
    c0 = list(dec.classes[0])
    Q = np.linalg.matrix_power(P.rows, dec.period)[np.ix_(c0, c0)]
    m = len(c0)
    A = (Q - np.eye(m)).T
    A[-1, :] = 1.0
    b = np.zeros(m)
    b[-1] = 1.0
    try:
        rho = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from None
    if np.any(rho < -1e-10) or np.max(np.abs(rho @ Q - rho)) > 1e-9:
        raise SingularSystem("restricted chain has no unique invariant law")
    w = np.zeros(P.n_states)
    w[c0] = np.clip(rho, 0.0, None)
    return DiscreteDistribution(w / w.sum())


def build_periodic_measure(P: TransitionKernel) -> DiscretePeriodicMeasure:
    dec = cyclic_decomposition(P)
    rho = stationary_on_class(P, dec).weights
    measures = [rho]
    for _ in range(1, dec.period):
        measures.append(measures[-1] @ P.rows)
    return DiscretePeriodicMeasure(dec.period, tuple(DiscreteDistribution(m) for m in measures))


def mean_measure(pm: DiscretePeriodicMeasure) -> DiscreteDistribution:
    return DiscreteDistribution(pm.as_array().mean(axis=0))


def krylov_bogoliubov_average(
    P: TransitionKernel, nu: DiscreteDistribution, tau: int, N: int
) -> DiscreteDistribution:
    """(1/N) sum_{k=1}^N nu P^{k tau}.

    The average converges to a member of the periodic measure only when
    ``nu`` is carried by a single Poincare section; this is not checked.
    """
    if tau < 1 or N < 1:
        raise ValueError("tau and N must be positive")
    Q = np.linalg.matrix_power(P.rows, tau)
    mu = np.asarray(nu.weights, float)
    acc = np.zeros_like(mu)
    for _ in range(N):
        mu = mu @ Q
        acc += mu
    return DiscreteDistribution(acc / N)


def _section_of(pm: DiscretePeriodicMeasure, x: int) -> int:
    for s, m in enumerate(pm.measures):
        if m.weights[x] > 0:
            return s
    raise TransientStart(f"state {x} lies outside every section of the periodic measure")


def convergence_profile(
    P: TransitionKernel, x: int, pm: DiscretePeriodicMeasure, k_max: int
) -> list[float]:
    """TV(P^{k tau}(x, .), rho_s) for k = 1..k_max, where x lies in section s."""
    s = _section_of(pm, x)
    target = pm.rho(s).weights
    Q = np.linalg.matrix_power(P.rows, pm.period)
    row = np.zeros(P.n_states)
    row[x] = 1.0
    out = []
    for _ in range(k_max):
        row = row @ Q
        out.append(tv_distance(row, target))
    return out


def condition_A_residual(P: TransitionKernel, pm: DiscretePeriodicMeasure, k: int) -> float:
    """Discrete-time Condition A residual at period index ``k``.

    max over singletons B of sum_y rho_bar(y) |(1/tau) sum_{s=k tau}^{(k+1)tau-1} P^s(y,B) - rho_bar(B)|.
    """
    tau = pm.period
    rho_bar = mean_measure(pm).weights
    Ps = np.linalg.matrix_power(P.rows, k * tau)
    acc = np.zeros_like(Ps)
    for _ in range(tau):
        acc += Ps
        Ps = Ps @ P.rows
    avg = acc / tau
    return float(np.max(rho_bar @ np.abs(avg - rho_bar[None, :])))
