"""Parametric coupling of two motional modes by an oscillating potential.

A drive U(r) cos(w t + phi) whose curvature varies across the crystal
couples modes (a, b) when w is near the mode-frequency difference.  In
the rotating frame the bilinear piece is

    H / hbar = g0 (e^{i phi} a b^dag + e^{-i phi} b a^dag)

with the strength set by the drive curvature at each ion, weighted by
the participation patterns:

    g0 = sum_n Q_n alpha_n / (4 M_n sqrt(w_a w_b)) * xi_a[n] * xi_b[n]

where alpha_n is the relevant second spatial derivative of the drive at
ion n (amplitude scale included).  The same expression covers mode pairs
on one axis and on different axes: for a shared axis the two cross terms
of the squared displacement cancel the 1/2 degeneracy factor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .crystal import ConfigurationError, CrystalSolution
from .polynomial import Polynomial3D

ModeRef = tuple[int, int]  # (axis, mode index within the axis group)


class DrivePolynomial:
    """Spatial profile of the drive potential (volts), with amplitude scale.

    ``beta`` in [0, 1] is the fractional drive amplitude; the effective
    potential is ``beta * polynomial``.  Profiles beyond cubic are
    rejected: curvature gradients above that order are not modeled.
    """

    MAX_DEGREE = 3

    def __init__(self, polynomial: Polynomial3D, beta: float = 1.0):
        if polynomial.degree > self.MAX_DEGREE:
            raise ConfigurationError(
                f"drive polynomial degree {polynomial.degree} exceeds cubic"
            )
        if not 0.0 <= beta <= 1.0:
            raise ConfigurationError(f"amplitude scale beta={beta} outside [0, 1]")
        self.polynomial = polynomial
        self.beta = float(beta)

    def with_beta(self, beta: float) -> "DrivePolynomial":
        return DrivePolynomial(self.polynomial, beta)


@dataclass(frozen=True)
class PulseEnvelope:
    """sin^2 ramp up, flat top, time-reversed ramp down.

    The ramp follows sin^2(2 pi f t) with f = 1/(4 ramp_time), reaching
    full amplitude at t = ramp_time; the effective pulse area equals
    ramp_time + flat_time (one full ramp contributes half its duration).
    """

    ramp_time: float
    flat_time: float

    def __post_init__(self) -> None:
        if self.ramp_time < 0.0 or self.flat_time < 0.0:
            raise ConfigurationError("envelope times must be non-negative")

    @property
    def total_duration(self) -> float:
        return 2.0 * self.ramp_time + self.flat_time

    @property
    def area(self) -> float:
        return self.ramp_time + self.flat_time

    def value(self, t: float) -> float:
        if t < 0.0 or t > self.total_duration:
            return 0.0
        if self.ramp_time == 0.0:
            return 1.0
        if t < self.ramp_time:
            return math.sin(0.5 * math.pi * t / self.ramp_time) ** 2
        if t <= self.ramp_time + self.flat_time:
            return 1.0
        return math.sin(0.5 * math.pi * (self.total_duration - t) / self.ramp_time) ** 2

    @classmethod
    def for_area(cls, area: float, ramp_time: float) -> "PulseEnvelope":
        """Envelope with the requested effective area.

        Shortens the ramps when the area is smaller than one full ramp,
        preserving area = ramp_time + flat_time exactly.
        """
        if area < 0.0:
            raise ConfigurationError("pulse area must be non-negative")
        if area >= ramp_time:
            return cls(ramp_time, area - ramp_time)
        return cls(area, 0.0)


SQUARE = None  # readability alias: no envelope means a square pulse


@dataclass(frozen=True)
class CouplingDrive:
    """A drive tone: spatial profile, angular frequency, phase, envelope."""

    profile: DrivePolynomial
    frequency: float
    phase: float = 0.0
    envelope: PulseEnvelope | None = None


def curvature_at(
    drive: DrivePolynomial, axis_a: int, axis_b: int, position: np.ndarray
) -> float:
    """Mixed second derivative (V/m^2) of the drive at a point, scaled by beta."""
    return drive.beta * drive.polynomial.second_partial(axis_a, axis_b, position)


def coupling_strength(
    drive: DrivePolynomial,
    solution: CrystalSolution,
    mode_a: ModeRef,
    mode_b: ModeRef,
) -> tuple[float, np.ndarray]:
    """Bilinear coupling rate g0 (rad/s) and its per-ion breakdown.

    Parameters
    ----------
    drive : DrivePolynomial
        Spatial profile with amplitude scale applied.
    solution : CrystalSolution
        Normal-mode solution providing frequencies and participations.
    mode_a, mode_b : (axis, mode) pairs
        The coupled modes; by convention mode_a is the higher-frequency one
        (the resonance is at w_a - w_b), but the formula is symmetric.

    Returns
    -------
    g0 : float
    per_ion : ndarray, per-ion contributions summing to g0.
    """
    axis_a, idx_a = mode_a
    axis_b, idx_b = mode_b
    omega_a = solution.frequencies[axis_a][idx_a]
    omega_b = solution.frequencies[axis_b][idx_b]
    config = solution.config
    per_ion = np.empty(config.n_ions)
    for n in range(config.n_ions):
        alpha = curvature_at(drive, axis_a, axis_b, solution.positions[n])
        xi_a = solution.participations[axis_a][n, idx_a]
        xi_b = solution.participations[axis_b][n, idx_b]
        per_ion[n] = (
            config.species[n].charge
            * alpha
            / (4.0 * config.species[n].mass * math.sqrt(omega_a * omega_b))
            * xi_a
            * xi_b
        )
    return float(np.sum(per_ion)), per_ion


def exchange_rate(g0: float) -> float:
    """Full population-exchange (oscillation) angular frequency: Omega_c = 2 g0."""
    return 2.0 * g0


def resonance_frequency(
    solution: CrystalSolution, mode_a: ModeRef, mode_b: ModeRef
) -> float:
    """Difference frequency w_a - w_b (rad/s), w_a > w_b by convention."""
    omega_a = solution.frequencies[mode_a[0]][mode_a[1]]
    omega_b = solution.frequencies[mode_b[0]][mode_b[1]]
    if omega_a <= omega_b:
        raise ConfigurationError(
            "mode_a must be the higher-frequency mode of the pair"
        )
    return float(omega_a - omega_b)


def detuning(drive_frequency: float, resonance: float) -> float:
    """delta = w - (w_a - w_b)."""
    return drive_frequency - resonance


def calibrate_amplitude(
    profile: Polynomial3D,
    solution: CrystalSolution,
    mode_a: ModeRef,
    mode_b: ModeRef,
    target_g0: float,
    beta: float = 1.0,
) -> DrivePolynomial:
    """Scale a drive profile so the pair couples at ``target_g0`` for ``beta``.

    g0 is strictly linear in the overall profile amplitude, so a single
    evaluation fixes the scale.
    """
    probe = DrivePolynomial(profile, beta)
    g0, _ = coupling_strength(probe, solution, mode_a, mode_b)
    if g0 == 0.0:
        raise ConfigurationError(
            "drive profile does not couple the requested mode pair "
            "(selection rule: zero overlap)"
        )
    return DrivePolynomial(profile.scaled(target_g0 / g0), beta)


def envelope_value(envelope: PulseEnvelope | None, t: float) -> float:
    """Amplitude scale at time t; a missing envelope is a unit square pulse."""
    if envelope is None:
        return 1.0
    return envelope.value(t)


def envelope_area(envelope: PulseEnvelope) -> float:
    return envelope.area
