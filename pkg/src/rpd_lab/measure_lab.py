"""Measure estimation and ergodic-average checks.

Time integrals are sums over grid steps and space integrals are sums over
partition cells throughout this module.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import PartitionMismatch
from .markov_core import DiscretePeriodicMeasure, TransitionKernel
from .noise import counter_uniform, spawn_seeds

CLAMP_WARNING_FRACTION = 0.05


# -- partitions --------------------------------------------------------------


@dataclass(frozen=True)
class Partition:
    """Equal-width cells on [lo, hi]; points outside clamp to the end cells."""

    lo: float
    hi: float
    n_cells: int

    def __post_init__(self):
        if not self.hi > self.lo or self.n_cells < 1:
            raise ValueError("need lo < hi and n_cells >= 1")

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.n_cells

    @property
    def edges(self) -> np.ndarray:
        return self.lo + self.width * np.arange(self.n_cells + 1)

    def cell_of(self, x) -> tuple[np.ndarray, int]:
        """Cell indices and the number of clamped points."""
        x = np.asarray(x, dtype=float)
        idx = np.floor((x - self.lo) / self.width).astype(np.int64)
        outside = (x < self.lo) | (x > self.hi)
        idx = np.clip(idx, 0, self.n_cells - 1)
        return idx, int(np.count_nonzero(outside))

    def sample_in_cell(self, cell, u):
        return self.lo + (np.asarray(cell) + np.asarray(u)) * self.width

    def bounds(self) -> list[tuple[float, float]]:
        e = self.edges
        return [(float(e[i]), float(e[i + 1])) for i in range(self.n_cells)]


@dataclass(frozen=True)
class FinitePartition:
    """Identity partition of a finite state space {0..n-1}; cell i is [i, i+1)."""

    n_cells: int

    def cell_of(self, x) -> tuple[np.ndarray, int]:
        return np.asarray(x, dtype=np.int64), 0

    def sample_in_cell(self, cell, u):
        return np.asarray(cell, dtype=np.int64)

    def bounds(self) -> list[tuple[float, float]]:
        return [(float(i), float(i + 1)) for i in range(self.n_cells)]


@dataclass(frozen=True)
class CylinderPartition:
    """Phase grid times a state partition; cell index = phase * base.n_cells + j."""

    n_phase: int
    base: Partition

    @property
    def n_cells(self) -> int:
        return self.n_phase * self.base.n_cells

    def cell_of(self, state) -> tuple[np.ndarray, int]:
        j, clamped = self.base.cell_of(state.point)
        return np.asarray(state.phase, dtype=np.int64) * self.base.n_cells + j, clamped

    def sample_in_cell(self, cell, u):
        from .semiflow_lift import CylinderState

        cell = np.asarray(cell)
        return CylinderState(cell // self.base.n_cells, self.base.sample_in_cell(cell % self.base.n_cells, u))

    def bounds(self) -> list[tuple[float, float]]:
        b = self.base.bounds()
        return [b[j] for _ in range(self.n_phase) for j in range(self.base.n_cells)]


# -- empirical measures ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    partition: object
    counts: np.ndarray
    out_of_range: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def weights(self) -> np.ndarray:
        t = self.total
        return self.counts / t if t else np.zeros(len(self.counts))

    def to_csv(self, label: str = "") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["measure", "cell_lo", "cell_hi", "weight"])
        for (lo, hi), p in zip(self.partition.bounds(), self.weights):
            w.writerow([label, repr(lo), repr(hi), repr(float(p))])
        return buf.getvalue()


def empirical_measure(values, partition) -> EmpiricalMeasure:
    idx, clamped = partition.cell_of(values)
    counts = np.bincount(np.ravel(idx), minlength=partition.n_cells)
    return EmpiricalMeasure(partition, counts, clamped)


def _weights_and_n(m) -> tuple[np.ndarray, float | None, object]:
    if isinstance(m, EmpiricalMeasure):
        return m.weights, float(m.total), m.partition
    w = getattr(m, "weights", m)
    return np.asarray(w, dtype=float), None, None


def compare_measures(e1, e2) -> dict:
    """Total variation and per-cell z-scores (binomial approximation).

    Exact measures (DiscreteDistribution or plain vectors) contribute no
    sampling variance.
    """
    p1, n1, part1 = _weights_and_n(e1)
    p2, n2, part2 = _weights_and_n(e2)
    if len(p1) != len(p2) or (part1 is not None and part2 is not None and part1 != part2):
        raise PartitionMismatch("measures live on different partitions")
    tv = 0.5 * float(np.sum(np.abs(p1 - p2)))
    var = np.zeros_like(p1)
    if n1 and n2:
        pooled = (p1 * n1 + p2 * n2) / (n1 + n2)
        var = pooled * (1 - pooled) * (1 / n1 + 1 / n2)
    elif n1:
        var = p2 * (1 - p2) / n1
    elif n2:
        var = p1 * (1 - p1) / n2
    diff = p1 - p2
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(var > 0, diff / np.sqrt(var), np.where(diff == 0, 0.0, np.inf * np.sign(diff)))
    return {"tv": tv, "per_cell_z": z}


# -- Ulam --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class UlamResult:
    kernel: TransitionKernel
    counts: np.ndarray
    clamped_fraction: float

    @property
    def clamp_warning(self) -> bool:
        return self.clamped_fraction > CLAMP_WARNING_FRACTION


def ulam_discretize(system, partition, n_per_cell: int, seed: int = 0) -> UlamResult:
    """Cell-to-cell transition frequencies of one random step of ``system``.

    ``n_per_cell`` points are drawn uniformly in each cell and each is pushed
    through one step with its own noise symbol.
    """
    if n_per_cell < 1:
        raise ValueError("n_per_cell must be positive")
    pos_seed, noise_seed = (int(s) for s in spawn_seeds(seed, 2))
    n = partition.n_cells
    cells = np.repeat(np.arange(n), n_per_cell)
    k = np.arange(n * n_per_cell, dtype=np.int64)
    x = partition.sample_in_cell(cells, counter_uniform(pos_seed, k))
    y = system.step(counter_uniform(noise_seed, k), x)
    dest, clamped = partition.cell_of(y)
    counts = np.bincount(cells * n + dest, minlength=n * n).reshape(n, n)
    rows = counts / n_per_cell
    return UlamResult(TransitionKernel(rows), counts, clamped / (n * n_per_cell))


# -- windows and ergodic averages -------------------------------------------


@dataclass(frozen=True)
class WindowSpec:
    tau: int
    F0: tuple[int, ...]

    def __post_init__(self):
        f0 = tuple(sorted(set(int(t) for t in self.F0)))
        if self.tau < 1 or not f0 or f0[0] < 0 or f0[-1] >= self.tau:
            raise ValueError(f"F0 must be a non-empty subset of 0..{self.tau - 1}")
        object.__setattr__(self, "F0", f0)

    @property
    def size(self) -> int:
        return len(self.F0)

    @classmethod
    def full(cls, tau: int) -> "WindowSpec":
        return cls(tau, tuple(range(tau)))


def windows(w: WindowSpec, N: int) -> list[int]:
    """G_N: the times k tau + t0 for k < N and t0 in F0, sorted."""
    if N < 1:
        raise ValueError("N must be positive")
    return [k * w.tau + t0 for k in range(N) for t0 in w.F0]


@dataclass(frozen=True)
class Interval:
    """Half-open observation set [lo, hi)."""

    lo: float
    hi: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return (x >= self.lo) & (x < self.hi)


def indicator(B) -> Callable:
    """Turn a state collection, an Interval or a predicate into a 0/1 function."""
    if callable(B):
        return B
    states = np.asarray(sorted(B))
    return lambda x: np.isin(np.asarray(x), states)


@dataclass
class ErgodicAverageReport:
    running_average: np.ndarray
    target: np.ndarray | float
    final_gap: np.ndarray | float
    clt_band: np.ndarray | float
    n_windows: int = 0

    @property
    def final(self):
        return self.running_average[-1]

    @property
    def passed(self) -> bool:
        return bool(np.all(np.asarray(self.final_gap) <= np.asarray(self.clt_band) + 1e-12))


def _window_matrix(values: np.ndarray, w: WindowSpec) -> np.ndarray:
    """(N, |F0|, ...) array of observations inside complete windows."""
    N = len(values) // w.tau
    if N < 1:
        raise ValueError("trajectory shorter than one period")
    full = values[: N * w.tau].reshape((N, w.tau) + values.shape[1:])
    return full[:, list(w.F0)]


def _report(obs: np.ndarray, w: WindowSpec, target) -> ErgodicAverageReport:
    per_window = obs.sum(axis=1)  # exact for 0/1 observables
    N = per_window.shape[0]
    counts = (np.arange(1, N + 1) * w.size).reshape((N,) + (1,) * (per_window.ndim - 1))
    running = np.cumsum(per_window, axis=0) / counts
    xi = per_window / w.size
    sd = xi.std(axis=0, ddof=1) if N > 1 else np.zeros_like(xi[0])
    band = 3.0 * sd / np.sqrt(N)
    target = np.asarray(target, dtype=float)
    gap = np.abs(running[-1] - target)
    if gap.ndim == 0:
        return ErgodicAverageReport(running, float(target), float(gap), float(band), N)
    return ErgodicAverageReport(running, target, gap, band, N)


def slln_average(trajectory, w: WindowSpec, B, target: float) -> ErgodicAverageReport:
    """Windowed time average of 1_B along a trajectory against a caller-supplied target.

    For the enlarged process started at phase 0 the target is
    (1/|F0|) sum_{t0 in F0} rho_{t0}(B).
    """
    ind = indicator(B)(np.asarray(trajectory)).astype(float)
    return _report(_window_matrix(ind, w), w, target)


def slln_test_function(trajectory, w: WindowSpec, f: Callable, target) -> ErgodicAverageReport:
    """Windowed time average of a (vector-valued) observable f."""
    vals = np.asarray(f(np.asarray(trajectory)), dtype=float)
    return _report(_window_matrix(vals, w), w, target)


def window_targets(pm: DiscretePeriodicMeasure, w: WindowSpec, phase: int = 0) -> np.ndarray:
    """(1/|F0|) sum_{t0 in F0} rho_{t0 + phase}, one entry per state."""
    return np.mean([pm.rho(t0 + phase).weights for t0 in w.F0], axis=0)


# -- Condition B and correlation decay ---------------------------------------


def condition_B_residual(P: TransitionKernel, pm: DiscretePeriodicMeasure, w: WindowSpec, k: int) -> float:
    """max over singletons B of sum_y rho_0(y) |(1/|F0|) sum_{t in F_k} (P^t(y,B) - rho_t(B))|."""
    if w.tau != pm.period:
        raise ValueError("window period does not match the periodic measure")
    rho0 = pm.rho(0).weights
    acc = np.zeros((P.n_states, P.n_states))
    for t0 in w.F0:
        t = k * w.tau + t0
        acc += np.linalg.matrix_power(P.rows, t) - pm.rho(t).weights[None, :]
    acc /= w.size
    return float(np.max(rho0 @ np.abs(acc)))


@dataclass(frozen=True)
class MonteCarloResidual:
    residual: float
    noise_floor: float


def condition_B_residual_mc(
    system,
    starts: Sequence,
    rho_ref: np.ndarray,
    partition,
    w: WindowSpec,
    k: int,
    n_inner: int = 200,
    seed: int = 0,
) -> MonteCarloResidual:
    """Monte Carlo Condition B residual for a sampled system.

    ``starts`` are draws from rho_0 (equal weights); ``rho_ref[r]`` is the
    reference law rho_r on the cells of ``partition``.  Each start runs
    ``n_inner`` independent paths.  ``noise_floor`` is the residual size
    expected from sampling error alone.
    """
    from .rds_engine import run_batch

    times = [k * w.tau + t0 for t0 in w.F0]
    n0 = len(starts)
    acc = np.zeros((n0, partition.n_cells))
    var = np.zeros((n0, partition.n_cells))
    seeds = spawn_seeds(seed, n0 * n_inner)
    for i, y in enumerate(starts):
        x = system.replicate(y, n_inner)
        path = run_batch(system, seeds[i * n_inner : (i + 1) * n_inner], 0, x, times[-1], record=True)
        for t in times:
            p = empirical_measure(path[t], partition).weights
            acc[i] += p - rho_ref[t % w.tau]
            var[i] += p * (1 - p) / n_inner
    acc /= w.size
    sd = np.sqrt(var) / w.size
    return MonteCarloResidual(float(np.max(np.abs(acc).mean(axis=0))), float(np.max(sd.mean(axis=0))))


@dataclass(frozen=True)
class CorrelationReport:
    J: np.ndarray
    stderr: np.ndarray

    @property
    def abs_J(self) -> np.ndarray:
        return np.abs(self.J)


def correlation_decay(batch, w: WindowSpec, B, k_max: int, rho_B: Sequence[float] | None = None) -> CorrelationReport:
    """Monte Carlo estimate of J_k for k = 0..k_max from enlarged-process samples.

    Window averages are centred at (1/|F0|) sum_{t0} rho_{t0 + s}(B) for a
    sample of phase s when ``rho_B`` (rho_r(B) for r < tau) is given, and at
    the pooled mean otherwise.
    """
    traj = np.asarray(batch.trajectories)
    if traj.shape[1] < (k_max + 1) * w.tau:
        raise ValueError("trajectories too short for k_max")
    ind = indicator(B)(traj).astype(float)
    xi = np.stack(
        [ind[:, [k * w.tau + t0 for t0 in w.F0]].mean(axis=1) for k in range(k_max + 1)], axis=1
    )
    if rho_B is not None:
        rho_B = np.asarray(rho_B, dtype=float)
        phases = np.asarray(batch.phases)
        center = np.mean([rho_B[(t0 + phases) % w.tau] for t0 in w.F0], axis=0)[:, None]
    else:
        center = xi.mean()
    dev = xi - center
    prod = dev * dev[:, :1]
    n = prod.shape[0]
    return CorrelationReport(prod.mean(axis=0), prod.std(axis=0, ddof=1) / np.sqrt(n))

