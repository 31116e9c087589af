"""Periodic stochastic semi-flows on a time grid and their cylinder lift.

Time is the integer grid index ``n`` (physical time ``n * h`` with
``h = period / n_phase``).  Step ``n`` of any evolution consumes the noise
symbol at absolute index ``n``, so ``theta(period)`` is a shift by
``n_phase`` indices and both semi-flow axioms can be checked bit for bit.

The lift carries the phase as an integer in ``{0..n_phase-1}``; on the
cylinder every step reads the noise at cocycle time, independent of phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import AxiomViolation, ParameterOutOfRange
from .measure_lab import EmpiricalMeasure, empirical_measure
from .noise import NoiseStream, spawn_seeds, uniform_to_normal
from .rds_engine import CocycleSystem, run_batch

StepFn = Callable[[object, object, object], object]


@dataclass(frozen=True)
class PeriodicSemiflow:
    """Grid stepper ``step(n, u, x)`` advancing state ``x`` from grid time n to n+1.

    ``step`` receives the absolute grid index; periodic steppers reduce it
    modulo ``n_phase`` themselves, which is what :func:`check_periodicity`
    verifies.
    """

    period: float
    n_phase: int
    step: StepFn
    name: str = "semiflow"

    @property
    def h(self) -> float:
        return self.period / self.n_phase

    def evolve(self, stream: NoiseStream, x, s: int, t: int):
        """u(t, s, omega) x on the grid (s <= t)."""
        if t < s:
            raise ValueError("need s <= t")
        u = stream.uniform(np.arange(s, t, dtype=np.int64))
        for j, n in enumerate(range(s, t)):
            x = self.step(n, float(u[j]), x)
        return x


def make_periodic_ou(tau: float, sigma: float, n_phase: int) -> PeriodicSemiflow:
    """Euler-Maruyama for dX = (sin(2 pi t / tau) - X) dt + sigma dW."""
    if not tau > 0 or sigma < 0 or n_phase < 2:
        raise ParameterOutOfRange(f"need tau > 0, sigma >= 0, n_phase >= 2; got {tau}, {sigma}, {n_phase}")
    h = tau / n_phase
    # table lookup keeps the forcing exactly periodic in the grid index
    forcing = np.array([math.sin(2 * math.pi * p * h / tau) for p in range(n_phase)])
    noise_scale = sigma * math.sqrt(h)

    def step(n, u, x):
        f = forcing[np.asarray(n) % n_phase]
        out = x + h * (f - x) + noise_scale * uniform_to_normal(u)
        if np.ndim(out) == 0:
            return float(out)
        return out

    return PeriodicSemiflow(tau, n_phase, step, name="periodic_ou")


def semiflow_from_cocycle(sys: CocycleSystem, n_phase: int, period: float | None = None) -> PeriodicSemiflow:
    """u(t, s, omega) := Phi(t - s, theta(s) omega) for an autonomous one-step cocycle."""
    return PeriodicSemiflow(
        float(n_phase if period is None else period), n_phase, lambda n, u, x: sys.step(u, x), name=f"{sys.name}_flow"
    )


def ou_periodic_mean(t, tau: float):
    """Attracting periodic solution A sin(2 pi t / tau - phi) of the noiseless OU."""
    w = 2 * math.pi / tau
    amp = 1.0 / math.sqrt(1.0 + w * w)
    lag = math.atan(w)
    return amp * np.sin(w * np.asarray(t, dtype=float) - lag)


def ou_stationary_variance(sigma: float) -> float:
    return sigma * sigma / 2.0


def ou_grid_periodic_orbit(tau: float, n_phase: int) -> np.ndarray:
    """Periodic orbit of the noiseless Euler-Maruyama recursion, one value per phase.

    This is the exact mean of the discretised process in its periodic
    regime; it differs from :func:`ou_periodic_mean` at first order in h.
    """
    h = tau / n_phase
    forcing = np.array([math.sin(2 * math.pi * p * h / tau) for p in range(n_phase)])
    # x_{p+1} - (1 - h) x_p = h f_p with x_N = x_0
    A = np.roll(np.eye(n_phase), 1, axis=1) - (1 - h) * np.eye(n_phase)
    return np.linalg.solve(A, h * forcing)


def ou_grid_stationary_variance(sigma: float, tau: float, n_phase: int) -> float:
    """Stationary variance sigma^2 h / (1 - (1 - h)^2) of the discretised process."""
    h = tau / n_phase
    return sigma * sigma / (2.0 - h)


# -- axioms ------------------------------------------------------------------


def _same(a, b) -> bool:
    return bool(np.array_equal(np.asarray(a), np.asarray(b)))


def check_flow_property(u: PeriodicSemiflow, stream: NoiseStream, r: int, s: int, t: int, x) -> bool:
    """u(t, r) == u(t, s) o u(s, r), compared bit for bit."""
    if not r <= s <= t:
        raise ValueError("need r <= s <= t")
    composed = u.evolve(stream, u.evolve(stream, x, r, s), s, t)
    return _same(composed, u.evolve(stream, x, r, t))


def check_periodicity(u: PeriodicSemiflow, stream: NoiseStream, s: int, t: int, x) -> bool:
    """u(t + tau, s + tau, omega) == u(t, s, theta(tau) omega), bit for bit."""
    N = u.n_phase
    return _same(u.evolve(stream, x, s + N, t + N), u.evolve(stream.shift(N), x, s, t))


# -- cylinder ----------------------------------------------------------------


class CylinderState(NamedTuple):
    phase: object
    point: object


class LiftedCocycle(CocycleSystem):
    """Autonomous cocycle on [0, tau) x X: (p, x) -> (p + 1 mod N, step(p, u, x))."""

    def __init__(self, base: PeriodicSemiflow):
        self.base = base
        self.period = base.n_phase
        self.name = f"lifted_{base.name}"
        self.default_start = CylinderState(0, 0.0)

    def step(self, u, state):
        p, x = state
        nxt = (np.asarray(p) + 1) % self.period
        nxt = int(nxt) if nxt.ndim == 0 else nxt
        return CylinderState(nxt, self.base.step(p, u, x))

    def distance(self, a, b) -> np.ndarray:
        same = np.asarray(a.phase) == np.asarray(b.phase)
        gap = np.abs(np.asarray(a.point, float) - np.asarray(b.point, float))
        return np.where(same, gap, np.inf)

    def replicate(self, y, n: int):
        y = CylinderState(*y)
        return CylinderState(np.full(n, int(y.phase)), np.full(n, float(y.point)))

    def take(self, states, idx):
        return CylinderState(states.phase[idx], states.point[idx])

    def put(self, dest, idx, src) -> None:
        dest.phase[idx] = src.phase
        dest.point[idx] = src.point

    def where(self, mask, new, old):
        return CylinderState(np.where(mask, new.phase, old.phase), np.where(mask, new.point, old.point))

    def item(self, states, i: int):
        return CylinderState(int(states.phase[i]), float(states.point[i]))

    def to_array(self, states) -> np.ndarray:
        return np.stack([np.asarray(states.phase, float), np.asarray(states.point, float)], axis=-1)


def lift(u: PeriodicSemiflow, n_checks: int = 16, check_seed: int = 0, check_state=None) -> LiftedCocycle:
    """Lift after sampling both semi-flow axioms on random grid instances.

    Checks start from standard normal points unless ``check_state`` is given
    (needed for discrete state spaces).
    """
    rng = np.random.default_rng(check_seed)
    N = u.n_phase
    for _ in range(n_checks):
        stream = NoiseStream(int(rng.integers(0, 2**63)), int(rng.integers(-10 * N, 10 * N)))
        r, s, t = sorted(int(v) for v in rng.integers(-2 * N, 3 * N, size=3))
        x = float(rng.normal()) if check_state is None else check_state
        if not check_flow_property(u, stream, r, s, t, x):
            raise AxiomViolation(f"flow property fails at r={r}, s={s}, t={t}")
        if not check_periodicity(u, stream, s, t, x):
            raise AxiomViolation(f"periodicity fails at s={s}, t={t}")
    return LiftedCocycle(u)


@dataclass(frozen=True)
class CylinderSample:
    phases: np.ndarray
    points: np.ndarray

    def empirical(self, partition) -> EmpiricalMeasure:
        return empirical_measure(CylinderState(self.phases, self.points), partition)


def lifted_kernel_sample(
    lc: LiftedCocycle, start: CylinderState, t: int, n_samples: int, seed: int = 0, partition=None
):
    """t-step images of ``start`` under independent noise paths.

    Returns a :class:`CylinderSample`, or its empirical measure when a
    cylinder ``partition`` is given.  The phase component is always the
    single point (s + t) mod N.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    seeds = spawn_seeds(seed, n_samples)
    x = lc.replicate(start, n_samples)
    out = run_batch(lc, seeds, np.zeros(n_samples, dtype=np.int64), x, t)
    sample = CylinderSample(np.asarray(out.phase), np.asarray(out.point, float))
    return sample.empirical(partition) if partition is not None else sample


def section_kernel(lc: LiftedCocycle, s: int, k: int, n_samples: int, x: float, seed: int = 0, partition=None):
    """Images of x on the section at phase s after k whole periods.

    Returns the sampled points, or their empirical measure when a
    ``partition`` of X is given.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    sample = lifted_kernel_sample(lc, CylinderState(s % lc.period, x), k * lc.period, n_samples, seed)
    if partition is not None:
        return empirical_measure(sample.points, partition)
    return sample.points
