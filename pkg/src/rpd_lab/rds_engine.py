"""Discrete-time cocycles over the noise shift, pull-backs and the enlarged process.

A system only knows how to take one step given a uniform noise symbol.  All
time bookkeeping lives here: step ``j`` of a run that starts at absolute
index ``a`` consumes the symbol at ``a + j``.  Consequently

* ``Phi(n, omega)`` reads indices ``origin .. origin + n - 1``;
* ``theta^m`` is ``stream.shift(m)``;
* the pull-back ``Phi(k tau + s, theta(-k tau) omega) y`` runs from absolute
  index ``-k tau`` up to ``s``, and increasing ``k`` only prepends steps.

Every routine accepts batches: states are numpy arrays (or
:class:`~rpd_lab.semiflow_lift.CylinderState` of arrays) with one entry per
seed, and the scalar entry points are thin wrappers over the batch code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator

import numpy as np

from .errors import ParameterOutOfRange, TooManyFailures
from .markov_core import STRUCTURAL_ZERO, TransitionKernel, cyclic_decomposition
from .noise import NoiseStream, as_seed_array, counter_uniform, spawn_seeds

DEFAULT_K_MAX = 500
DEFAULT_TOL = 1e-10
MAX_FAILURE_FRACTION = 0.10
_NOISE_CHUNK = 1 << 20  # symbols per precomputed noise block


class CocycleSystem:
    """One-step random map ``x -> Phi(omega) x`` driven by a uniform symbol.

    Subclasses implement :meth:`step`; the remaining hooks only need
    overriding for non-array state types.
    """

    period: int = 1
    name: str = "system"
    default_start: Any = 0

    def step(self, u, x):
        raise NotImplementedError

    def distance(self, a, b) -> np.ndarray:
        return np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))

    def replicate(self, y, n: int):
        return np.full(n, y)

    def take(self, states, idx):
        return states[idx]

    def put(self, dest, idx, src) -> None:
        dest[idx] = src

    def where(self, mask, new, old):
        return np.where(mask, new, old)

    def item(self, states, i: int):
        v = states[i]
        return v.item() if hasattr(v, "item") else v

    def to_array(self, states) -> np.ndarray:
        return np.asarray(states)


class ChainRDS(CocycleSystem):
    """Finite-state chain realised as a random map by inverse-CDF sampling."""

    def __init__(self, kernel: TransitionKernel, period: int | None = None):
        self.kernel = kernel
        if period is None:
            period = cyclic_decomposition(kernel).period
        self.period = int(period)
        self.name = "chain"
        self.default_start = 0
        rows = kernel.rows
        cdf = np.cumsum(rows, axis=1)
        for i, row in enumerate(rows):
            last = int(np.flatnonzero(row > STRUCTURAL_ZERO)[-1])
            cdf[i, last:] = 1.0
        self._cdf = cdf

    def step(self, u, x):
        xa = np.asarray(x)
        ua = np.asarray(u)
        nxt = np.sum(self._cdf[xa] <= ua[..., None], axis=-1)
        if xa.ndim == 0 and ua.ndim == 0:
            return int(nxt)
        return nxt

    def distance(self, a, b) -> np.ndarray:
        return (np.asarray(a) != np.asarray(b)).astype(float)


class RandomLogistic(CocycleSystem):
    """x -> eta x (1 - x) with eta = lam when the symbol is below p, else mu."""

    def __init__(self, lam: float, mu: float, p: float, period: int = 2):
        if not (0 < mu <= lam <= 4):
            raise ParameterOutOfRange(f"need 0 < mu <= lam <= 4, got lam={lam}, mu={mu}")
        if not (0 <= p <= 1):
            raise ParameterOutOfRange(f"p must be a probability, got {p}")
        self.lam = float(lam)
        self.mu = float(mu)
        self.p = float(p)
        self.period = int(period)
        self.name = "logistic"
        self.default_start = 0.5

    def step(self, u, x):
        eta = np.where(np.asarray(u) < self.p, self.lam, self.mu)
        out = eta * x * (1.0 - x)
        if np.ndim(out) == 0:
            return float(out)
        return out


def make_chain_rds(P: TransitionKernel, period: int | None = None) -> ChainRDS:
    return ChainRDS(P, period)


def make_random_logistic(lam: float, mu: float, p: float) -> RandomLogistic:
    return RandomLogistic(lam, mu, p)


# -- noise access ------------------------------------------------------------


def _noise_steps(seeds: np.ndarray, start: np.ndarray, n_steps: int) -> Iterator[np.ndarray]:
    """Yield the symbol vector for steps 0..n_steps-1 (index start + j per seed)."""
    n = max(len(seeds), 1)
    chunk = max(1, min(n_steps, _NOISE_CHUNK // n))
    for j0 in range(0, n_steps, chunk):
        j1 = min(n_steps, j0 + chunk)
        offs = np.arange(j0, j1, dtype=np.int64)
        block = counter_uniform(seeds[:, None], start[:, None] + offs[None, :])
        for col in range(j1 - j0):
            yield block[:, col]


def run_batch(sys: CocycleSystem, seeds, start, x, n_steps: int, record: bool = False):
    """Advance a batch ``n_steps`` from absolute indices ``start``.

    Returns the final states, or the list of all n_steps + 1 states when
    ``record`` is set.
    """
    seeds = np.atleast_1d(as_seed_array(seeds))
    start = np.broadcast_to(np.asarray(start, dtype=np.int64), seeds.shape)
    path = [x] if record else None
    for u in _noise_steps(seeds, start, n_steps):
        x = sys.step(u, x)
        if record:
            path.append(x)
    return path if record else x


def iterate(sys: CocycleSystem, stream: NoiseStream, x0, n: int) -> list:
    """Trajectory x0, Phi_1(omega) x0, ..., Phi_n(omega) x0."""
    if n < 0:
        raise ValueError("n must be non-negative")
    u = stream.uniform(np.arange(n, dtype=np.int64))
    out = [x0]
    x = x0
    for j in range(n):
        x = sys.step(float(u[j]), x)
        out.append(x)
    return out


# -- pull-back ---------------------------------------------------------------


@dataclass(frozen=True)
class PullbackResult:
    value: Any
    iterations_used: int
    converged: bool
    final_gap: float


@dataclass
class PullbackBatch:
    values: Any
    iterations: np.ndarray
    converged: np.ndarray
    gaps: np.ndarray


def pullback_batch(
    sys: CocycleSystem,
    seeds,
    origins,
    y,
    s: int,
    K_max: int = DEFAULT_K_MAX,
    tol: float = DEFAULT_TOL,
) -> PullbackBatch:
    """Pull-back a_k = Phi(k tau + s, theta(-k tau) omega) y for a batch of streams.

    Stream ``i`` is ``NoiseStream(seeds[i], origins[i])``.  Iteration stops
    per stream at the first k with d(a_{k-1}, a_k) <= tol and reports a_k.
    """
    if K_max < 2:
        raise ValueError("K_max must be at least 2")
    if s < 0:
        raise ValueError("phase must be non-negative")
    seeds = np.atleast_1d(as_seed_array(seeds))
    n = len(seeds)
    origins = np.broadcast_to(np.asarray(origins, dtype=np.int64), (n,)).copy()
    tau = sys.period

    values = sys.replicate(y, n)
    iters = np.zeros(n, dtype=int)
    conv = np.zeros(n, dtype=bool)
    gaps = np.full(n, np.inf)
    active = np.arange(n)
    prev = None
    for k in range(1, K_max + 1):
        a = run_batch(sys, seeds[active], origins[active] - k * tau, sys.replicate(y, len(active)), k * tau + s)
        sys.put(values, active, a)
        iters[active] = k
        if prev is not None:
            gap = sys.distance(prev, a)
            gaps[active] = gap
            done = gap <= tol
            conv[active[done]] = True
            keep = ~done
            active = active[keep]
            a = sys.take(a, keep)
            if len(active) == 0:
                break
        prev = a
    return PullbackBatch(values, iters, conv, gaps)


def pullback_limit(
    sys: CocycleSystem,
    stream: NoiseStream,
    y,
    s: int,
    K_max: int = DEFAULT_K_MAX,
    tol: float = DEFAULT_TOL,
) -> PullbackResult:
    """Single-stream pull-back; non-convergence is reported, not raised."""
    b = pullback_batch(sys, [stream.seed], [stream.index_origin], y, s, K_max, tol)
    return PullbackResult(
        sys.item(b.values, 0), int(b.iterations[0]), bool(b.converged[0]), float(b.gaps[0])
    )


@dataclass
class PullbackEnsemble:
    phase: int
    values: Any
    seeds: np.ndarray
    n_failed: int
    iterations: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.seeds)


def _check_failures(n_failed: int, n_total: int) -> None:
    if n_failed > MAX_FAILURE_FRACTION * n_total:
        raise TooManyFailures(n_failed, n_total)


def sample_random_periodic_ensemble(
    sys: CocycleSystem,
    s: int,
    n_seeds: int,
    K_max: int = DEFAULT_K_MAX,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    y=None,
) -> PullbackEnsemble:
    """i.i.d. samples of Y(s, .) from independent streams; their law estimates rho_s."""
    if n_seeds < 1:
        raise ValueError("n_seeds must be positive")
    seeds = spawn_seeds(seed, n_seeds)
    y = sys.default_start if y is None else y
    b = pullback_batch(sys, seeds, 0, y, s, K_max, tol)
    n_failed = int(np.sum(~b.converged))
    _check_failures(n_failed, n_seeds)
    ok = b.converged
    return PullbackEnsemble(s, sys.take(b.values, ok), seeds[ok], n_failed, b.iterations[ok])


# -- enlarged process --------------------------------------------------------


@dataclass(frozen=True)
class EnlargedSample:
    phase: int
    trajectory: np.ndarray


@dataclass
class EnlargedBatch:
    """Samples of the phase-randomised process; ``trajectories[i, t]`` is Yhat_i(t)."""

    phases: np.ndarray
    trajectories: np.ndarray
    seeds: np.ndarray
    period: int
    n_failed: int = 0

    def __len__(self) -> int:
        return len(self.phases)

    def __getitem__(self, i: int) -> EnlargedSample:
        return EnlargedSample(int(self.phases[i]), self.trajectories[i])

    def __iter__(self) -> Iterator[EnlargedSample]:
        return (self[i] for i in range(len(self)))


def sample_enlarged_process(
    sys: CocycleSystem,
    T: int,
    K: int,
    n_samples: int,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    y=None,
    phase: int | None = None,
) -> EnlargedBatch:
    """Sample Yhat(t), t = 0..T.

    Each sample draws a phase s uniformly from {0..tau-1} (or uses ``phase``),
    pulls back at most K periods to the time origin of theta(-s) omega, then
    runs s + T steps forward.  Yhat(t) is distributed as rho_{t+s}; pooling
    over phases gives the mean measure.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    tau = sys.period
    ss = np.random.SeedSequence(int(seed))
    seeds = ss.generate_state(n_samples, dtype=np.uint64)
    if phase is None:
        phases = np.random.default_rng(ss.spawn(1)[0]).integers(0, tau, size=n_samples)
    else:
        phases = np.full(n_samples, int(phase) % tau)
    y = sys.default_start if y is None else y

    origins = -phases.astype(np.int64)
    b = pullback_batch(sys, seeds, origins, y, 0, max(K, 2), tol)
    n_failed = int(np.sum(~b.converged))
    _check_failures(n_failed, n_samples)
    ok = b.converged
    seeds, origins, phases = seeds[ok], origins[ok], phases[ok]
    x = sys.take(b.values, ok)

    # advance each sample by its own phase so every clock reads t = 0
    s_max = int(phases.max()) if len(phases) else 0
    for j, u in enumerate(_noise_steps(seeds, origins, s_max)):
        x = sys.where(j < phases, sys.step(u, x), x)
    path = run_batch(sys, seeds, np.zeros(len(seeds), dtype=np.int64), x, T, record=True)
    traj = np.stack([sys.to_array(p) for p in path], axis=1)
    return EnlargedBatch(phases, traj, seeds, tau, n_failed)
