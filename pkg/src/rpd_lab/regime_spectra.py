"""Three-regime classification of periodic measures.

Support evidence (Poincare sections, minimal period of the measure family)
is cross-checked against the peripheral spectrum of the transfer matrix.

Units: a generator eigenvalue ``lam`` corresponds to the transfer-operator
eigenvalue ``exp(i * lam)`` for one time step.  The generator pair
``{0, 2*pi/tau}`` therefore shows up here as ``{1, exp(2j*pi/tau)}``, and
the full peripheral spectrum of a Case I chain is the tau-th roots of unity.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateEigenvalue,
    EigSolverFailure,
    InconsistentEvidence,
    NoSuchEigenvalue,
    ThresholdTooLarge,
)
from .markov_core import DiscretePeriodicMeasure, TransitionKernel, tv_distance

DEFAULT_EPS = 1e-9
DEFAULT_TOL = 1e-9
DEFAULT_DELTA = 1e-8


class Regime(enum.Enum):
    I = "I"
    II = "II"
    III = "III"


@dataclass(frozen=True)
class PoincareDecomposition:
    period: int
    sections: tuple[frozenset[int], ...]
    overlap: np.ndarray

    @property
    def pairwise_disjoint(self) -> bool:
        return not np.any(self.overlap & ~np.eye(self.period, dtype=bool))


@dataclass(frozen=True)
class SpectrumReport:
    eigenvalues: np.ndarray
    unit_circle: np.ndarray
    multiplicities: tuple[int, ...]
    delta: float

    def matches_roots_of_unity(self, d: int, atol: float) -> bool:
        """True iff the peripheral eigenvalues are exactly the d-th roots, each simple."""
        if len(self.unit_circle) != d or any(m != 1 for m in self.multiplicities):
            return False
        roots = np.exp(2j * np.pi * np.arange(d) / d)
        dist = np.abs(self.unit_circle[:, None] - roots[None, :])
        return bool(np.all(dist.min(axis=0) <= atol) and np.all(dist.min(axis=1) <= atol))


@dataclass(frozen=True)
class AngleVariableEstimate:
    phase_per_state: np.ndarray
    lam: float
    support: tuple[int, ...]


@dataclass(frozen=True)
class RegimeClassification:
    case: Regime
    declared_period: int
    minimal_period: int
    sections: PoincareDecomposition
    spectrum: SpectrumReport


def poincare_supports(pm: DiscretePeriodicMeasure, eps: float = DEFAULT_EPS) -> PoincareDecomposition:
    sections = []
    for s, m in enumerate(pm.measures):
        sec = frozenset(int(i) for i in np.flatnonzero(m.weights > eps))
        if not sec:
            raise ThresholdTooLarge(f"section {s} is empty at eps={eps}")
        sections.append(sec)
    tau = pm.period
    overlap = np.zeros((tau, tau), dtype=bool)
    for s in range(tau):
        for t in range(tau):
            overlap[s, t] = bool(sections[s] & sections[t])
    return PoincareDecomposition(tau, tuple(sections), overlap)


def minimal_period(pm: DiscretePeriodicMeasure, tol: float = DEFAULT_TOL) -> int:
    tau = pm.period
    for d in range(1, tau + 1):
        if tau % d:
            continue
        if all(tv_distance(pm.rho(s), pm.rho(s + d)) <= tol for s in range(tau)):
            return d
    return tau


def transfer_spectrum(P: TransitionKernel, delta: float = DEFAULT_DELTA) -> SpectrumReport:
    try:
        ev = np.linalg.eigvals(P.rows)
    except np.linalg.LinAlgError as exc:
        raise EigSolverFailure(str(exc)) from None
    if not np.all(np.isfinite(ev)):
        raise EigSolverFailure("non-finite eigenvalues")
    order = np.lexsort((np.angle(ev) % (2 * np.pi), -np.round(np.abs(ev), 12)))
    ev = ev[order]
    on = ev[np.abs(ev) > 1 - delta]
    # collapse numerically repeated peripheral eigenvalues
    ang_tol = max(delta, 1e-12)
    distinct: list[complex] = []
    mult: list[int] = []
    for z in on:
        for k, w in enumerate(distinct):
            if abs(z - w) <= ang_tol:
                mult[k] += 1
                break
        else:
            distinct.append(complex(z))
            mult.append(1)
    return SpectrumReport(ev, np.array(distinct, dtype=complex), tuple(mult), delta)


def angle_variable(P: TransitionKernel, tau_min: int, support_eps: float = 1e-9) -> AngleVariableEstimate:
    """Phase of the right eigenvector at exp(2 pi i / tau_min).

    The eigenvector is scaled to unit max-modulus and rotated so that the
    lowest-indexed state with non-negligible modulus has phase 0.
    """
    target = np.exp(2j * np.pi / tau_min)
    try:
        ev, vecs = np.linalg.eig(P.rows)
    except np.linalg.LinAlgError as exc:
        raise EigSolverFailure(str(exc)) from None
    hits = np.flatnonzero(np.abs(ev - target) <= 1e-6)
    if len(hits) == 0:
        raise NoSuchEigenvalue(f"no eigenvalue near exp(2pi i/{tau_min})")
    if len(hits) > 1:
        raise DegenerateEigenvalue(f"eigenvalue exp(2pi i/{tau_min}) has multiplicity {len(hits)}")
    phi = vecs[:, hits[0]]
    phi = phi / np.max(np.abs(phi))
    support = tuple(int(i) for i in np.flatnonzero(np.abs(phi) > support_eps))
    phi = phi * np.exp(-1j * np.angle(phi[support[0]]))
    phase = np.mod(np.angle(phi), 2 * np.pi)
    # angles a hair below 2pi are the same point as 0
    phase[np.isclose(phase, 2 * np.pi, rtol=0, atol=1e-12)] = 0.0
    phase[np.abs(phi) <= support_eps] = 0.0
    return AngleVariableEstimate(phase, 2 * np.pi / tau_min, support)


def classify_regime(
    P: TransitionKernel,
    pm: DiscretePeriodicMeasure,
    eps: float = DEFAULT_EPS,
    tol: float = DEFAULT_TOL,
    delta: float = DEFAULT_DELTA,
) -> RegimeClassification:
    sections = poincare_supports(pm, eps)
    tau = pm.period
    tau_min = minimal_period(pm, tol)
    spectrum = transfer_spectrum(P, delta)

    if tau_min == 1:
        case = Regime.III
    elif tau_min < tau:
        case = Regime.II
    elif sections.pairwise_disjoint:
        case = Regime.I
    else:
        raise InconsistentEvidence(
            f"minimal period equals declared period {tau} but sections overlap"
        )

    if not spectrum.matches_roots_of_unity(tau_min, atol=max(10 * delta, 1e-8)):
        raise InconsistentEvidence(
            f"support analysis gives minimal period {tau_min}, but the peripheral spectrum is "
            f"{np.round(spectrum.unit_circle, 8).tolist()} with multiplicities {spectrum.multiplicities}"
        )
    return RegimeClassification(case, tau, tau_min, sections, spectrum)
