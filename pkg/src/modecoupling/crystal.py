"""Statics of linear ion crystals: equilibrium positions and normal modes.

The crystal is a set of point charges in a static trap potential
``U0(r)`` (energy per charge) plus mutual Coulomb repulsion:

    U(r_1..r_N) = sum_n Q_n U0(r_n) + sum_{n<n'} Q_n Q_n' / (4 pi eps0 |r_n - r_n'|)

Equilibrium is the zero of the gradient; normal modes diagonalize the
mass-weighted Hessian.  Everything is SI internally; species masses and
trap frequencies convert at the configuration boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .polynomial import Polynomial3D
from .units import CONSTANTS, PhysicalConstants

AXIS_NAMES = ("x", "y", "z")


class ConfigurationError(ValueError):
    """The crystal or trap description is invalid."""


class SolverError(RuntimeError):
    """The equilibrium solver failed to converge."""


class LinearityError(RuntimeError):
    """The configured string is not a stable linear crystal (zigzag onset)."""


class InstabilityError(RuntimeError):
    """The Hessian has a non-positive eigenvalue at equilibrium."""


@dataclass(frozen=True)
class IonSpecies:
    """A trapped-ion species: name, mass (kg), charge (C)."""

    name: str
    mass: float
    charge: float

    def __post_init__(self) -> None:
        if self.mass <= 0.0:
            raise ConfigurationError(f"species {self.name!r}: mass must be positive")
        if self.charge == 0.0:
            raise ConfigurationError(f"species {self.name!r}: charge must be nonzero")

    @classmethod
    def from_amu(
        cls,
        name: str,
        mass_amu: float,
        charge_e: float = 1.0,
        constants: PhysicalConstants = CONSTANTS,
    ) -> "IonSpecies":
        return cls(
            name,
            mass_amu * constants.atomic_mass,
            charge_e * constants.elementary_charge,
        )


class TrapPotential:
    """Static trap potential (energy per charge, volts) as a polynomial.

    Harmonic curvature along every axis is mandatory; cubic and quartic
    terms (including cross terms such as the x*z twist) are allowed and
    enter equilibrium and Hessian exactly.  Degree > 4 is rejected: there
    is no silent truncation.
    """

    MAX_DEGREE = 4

    def __init__(self, polynomial: Polynomial3D):
        if polynomial.degree > self.MAX_DEGREE:
            raise ConfigurationError(
                f"trap polynomial has degree {polynomial.degree}; "
                f"terms beyond quartic are not supported"
            )
        for axis, name in enumerate(AXIS_NAMES):
            mono = tuple(2 if a == axis else 0 for a in range(3))
            if polynomial.coefficients.get(mono, 0.0) <= 0.0:
                raise ConfigurationError(
                    f"trap polynomial needs a positive harmonic {name}^2 coefficient"
                )
        self.polynomial = polynomial

    @classmethod
    def from_frequencies(
        cls,
        species: IonSpecies,
        omega_x: float,
        omega_y: float,
        omega_z: float,
        extra_terms: dict[tuple[int, int, int], float] | None = None,
    ) -> "TrapPotential":
        """Harmonic trap with the given angular frequencies for ``species``.

        A charge Q in U0 = c * u^2 oscillates at omega = sqrt(2 c Q / M),
        so c = M omega^2 / (2 Q).
        """
        coeffs: dict[tuple[int, int, int], float] = {}
        for axis, omega in enumerate((omega_x, omega_y, omega_z)):
            if omega <= 0.0:
                raise ConfigurationError("trap frequencies must be positive")
            mono = tuple(2 if a == axis else 0 for a in range(3))
            coeffs[mono] = species.mass * omega**2 / (2.0 * species.charge)
        if extra_terms:
            for mono, c in extra_terms.items():
                coeffs[mono] = coeffs.get(mono, 0.0) + c
        return cls(Polynomial3D(coeffs))


@dataclass(frozen=True)
class CrystalConfig:
    """Ordered species along the trap axis plus the trap itself."""

    species: tuple[IonSpecies, ...]
    trap: TrapPotential
    constants: PhysicalConstants = CONSTANTS

    def __post_init__(self) -> None:
        if len(self.species) == 0:
            raise ConfigurationError("crystal needs at least one ion")

    @property
    def n_ions(self) -> int:
        return len(self.species)

    @property
    def masses(self) -> np.ndarray:
        return np.array([s.mass for s in self.species])

    @property
    def charges(self) -> np.ndarray:
        return np.array([s.charge for s in self.species])


def potential_energy(config: CrystalConfig, positions: np.ndarray) -> float:
    """Total potential energy (J) at the given (N, 3) positions."""
    q = config.charges
    u = sum(q[n] * config.trap.polynomial(positions[n]) for n in range(config.n_ions))
    k = config.constants.coulomb
    for n in range(config.n_ions):
        for m in range(n + 1, config.n_ions):
            u += k * q[n] * q[m] / np.linalg.norm(positions[n] - positions[m])
    return float(u)


def potential_gradient(config: CrystalConfig, positions: np.ndarray) -> np.ndarray:
    """Gradient of the total potential, shape (N, 3), units N (J/m)."""
    n_ions = config.n_ions
    q = config.charges
    grad = np.zeros((n_ions, 3))
    for n in range(n_ions):
        grad[n] = q[n] * config.trap.polynomial.gradient(positions[n])
    k = config.constants.coulomb
    for n in range(n_ions):
        for m in range(n + 1, n_ions):
            d = positions[n] - positions[m]
            r3 = np.linalg.norm(d) ** 3
            f = k * q[n] * q[m] * d / r3
            grad[n] -= f
            grad[m] += f
    return grad


def potential_hessian(config: CrystalConfig, positions: np.ndarray) -> np.ndarray:
    """Hessian of the total potential, shape (3N, 3N), ion-major blocks."""
    n_ions = config.n_ions
    q = config.charges
    k = config.constants.coulomb
    hess = np.zeros((3 * n_ions, 3 * n_ions))
    for n in range(n_ions):
        hess[3 * n : 3 * n + 3, 3 * n : 3 * n + 3] = q[n] * (
            config.trap.polynomial.hessian(positions[n])
        )
    eye = np.eye(3)
    for n in range(n_ions):
        for m in range(n + 1, n_ions):
            d = positions[n] - positions[m]
            r = np.linalg.norm(d)
            block = k * q[n] * q[m] * (3.0 * np.outer(d, d) / r**5 - eye / r**3)
            hess[3 * n : 3 * n + 3, 3 * n : 3 * n + 3] += block
            hess[3 * m : 3 * m + 3, 3 * m : 3 * m + 3] += block
            hess[3 * n : 3 * n + 3, 3 * m : 3 * m + 3] -= block
            hess[3 * m : 3 * m + 3, 3 * n : 3 * n + 3] -= block
    return hess


def _characteristic_force(config: CrystalConfig, positions: np.ndarray) -> float:
    """Coulomb force between nearest neighbours: the convergence scale."""
    k = config.constants.coulomb
    q = config.charges
    if config.n_ions == 1:
        # Single ion: use the trap restoring force over a characteristic length.
        c2 = config.trap.polynomial.coefficients.get((0, 0, 2), 0.0)
        length = (k * abs(q[0]) / c2) ** (1.0 / 3.0)
        return float(2.0 * c2 * abs(q[0]) * length)
    dmin = min(
        np.linalg.norm(positions[n] - positions[m])
        for n in range(config.n_ions)
        for m in range(n + 1, config.n_ions)
    )
    return float(k * np.max(np.abs(q)) ** 2 / dmin**2)

GRADIENT_TOLERANCE = 1e-12


def _damped_newton(
    config: CrystalConfig,
    positions: np.ndarray,
    active: np.ndarray,
    max_iter: int = 200,
) -> np.ndarray:
    """Damped Newton on the gradient, restricted to the ``active`` coordinate mask.

    Backtracks the step until the gradient norm decreases; stalls raise
    SolverError with the residual.
    """
    pos = positions.copy()
    idx = np.flatnonzero(active.ravel())
    for _ in range(max_iter):
        grad = potential_gradient(config, pos).ravel()[idx]
        scale = _characteristic_force(config, pos)
        if np.max(np.abs(grad)) < GRADIENT_TOLERANCE * scale:
            return pos
        hess = potential_hessian(config, pos)[np.ix_(idx, idx)]
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(hess, grad, rcond=None)[0]
        gnorm = np.linalg.norm(grad)
        lam = 1.0
        while lam > 1e-8:
            trial = pos.ravel().copy()
            trial[idx] += lam * step
            trial = trial.reshape(pos.shape)
            if np.linalg.norm(potential_gradient(config, trial).ravel()[idx]) < gnorm:
                pos = trial
                break
            lam *= 0.5
        else:
            raise SolverError(
                f"Newton stalled; residual |grad| = {gnorm:.3e} N "
                f"(tolerance {GRADIENT_TOLERANCE * scale:.3e} N)"
            )
    grad = potential_gradient(config, pos).ravel()[idx]
    raise SolverError(
        f"equilibrium not converged after {max_iter} iterations; "
        f"residual |grad|_inf = {np.max(np.abs(grad)):.3e} N"
    )


def _initial_guess(config: CrystalConfig) -> np.ndarray:
    """Equally spaced string along z at the two-ion Coulomb length scale."""
    n = config.n_ions
    c2z = config.trap.polynomial.coefficients[(0, 0, 2)]
    qmax = np.max(np.abs(config.charges))
    length = (config.constants.coulomb * qmax / c2z) ** (1.0 / 3.0)
    pos = np.zeros((n, 3))
    pos[:, 2] = (np.arange(n) - 0.5 * (n - 1)) * length
    return pos


def equilibrium_positions(config: CrystalConfig) -> np.ndarray:
    """Equilibrium positions (N, 3), ions ordered along z as configured.

    Solves the axial problem first (it is convex for a linear string),
    then releases all coordinates so that cross terms (e.g. an x*z twist)
    can pull ions off-axis.  Verifies that the result is a stable linear
    configuration: a non-positive-definite Hessian means the radial
    confinement cannot hold the string straight (zigzag onset).
    """
    pos = _initial_guess(config)
    axial_mask = np.zeros((config.n_ions, 3), dtype=bool)
    axial_mask[:, 2] = True
    pos = _damped_newton(config, pos, axial_mask)
    pos = _damped_newton(config, pos, np.ones_like(axial_mask))

    if config.n_ions > 1 and np.any(np.diff(pos[:, 2]) <= 0.0):
        raise SolverError("converged positions are not ordered along z")
    hess = potential_hessian(config, pos)
    eigvals = np.linalg.eigvalsh(hess)
    if eigvals[0] <= 0.0:
        raise LinearityError(
            "equilibrium is not a stable linear string (zigzag onset): "
            f"lowest Hessian eigenvalue {eigvals[0]:.3e} J/m^2"
        )
    return pos


@dataclass
class CrystalSolution:
    """Equilibrium plus normal-mode data, grouped by trap axis.

    ``frequencies[axis]`` is ascending; ``participations[axis]`` has one
    column per mode: column m holds the mass-weighted displacement pattern
    of the ions along ``axis`` for mode m of that axis group.  For a
    linear string in a separable potential each group is an orthonormal
    N x N matrix.
    """

    config: CrystalConfig
    positions: np.ndarray
    frequencies: dict[int, np.ndarray]
    participations: dict[int, np.ndarray]
    gradient_residual: float
    axis_purity: float = 1.0
    _eigenvectors: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def validate(self, tol: float = 1e-10) -> None:
        """Check per-axis orthonormality and frequency ordering."""
        for axis, xi in self.participations.items():
            if xi.shape[0] == xi.shape[1]:
                gram = xi.T @ xi
                dev = np.max(np.abs(gram - np.eye(xi.shape[1])))
                if dev > tol:
                    raise InstabilityError(
                        f"participation matrix for axis {AXIS_NAMES[axis]} "
                        f"deviates from orthonormality by {dev:.3e}"
                    )
            freqs = self.frequencies[axis]
            if np.any(np.diff(freqs) < 0.0):
                raise InstabilityError(
                    f"frequencies for axis {AXIS_NAMES[axis]} are not sorted"
                )

    def mode_count(self, axis: int) -> int:
        return len(self.frequencies[axis])


def _split_degenerate(eigvals: np.ndarray, rel_tol: float = 1e-9) -> list[list[int]]:
    """Indices grouped into blocks of (near-)equal eigenvalues."""
    blocks: list[list[int]] = [[0]]
    for i in range(1, len(eigvals)):
        ref = eigvals[blocks[-1][0]]
        if abs(eigvals[i] - ref) <= rel_tol * max(abs(ref), abs(eigvals[i])):
            blocks[-1].append(i)
        else:
            blocks.append([i])
    return blocks


def _align_degenerate_block(vectors: np.ndarray) -> np.ndarray:
    """Rebuild a degenerate eigenspace basis aligned with coordinate axes.

    Projects coordinate unit vectors (axis-major order) through the block
    projector and Gram-Schmidts the results, so degenerate radial pairs
    come out axis-pure and reproducible rather than arbitrarily mixed.
    """
    dim3n, k = vectors.shape
    n_ions = dim3n // 3
    accepted: list[np.ndarray] = []
    proj = vectors @ vectors.T
    for axis in range(3):
        for ion in range(n_ions):
            if len(accepted) == k:
                break
            cand = proj[:, 3 * ion + axis].copy()
            for v in accepted:
                cand -= np.dot(v, cand) * v
            norm = np.linalg.norm(cand)
            if norm > 1e-8:
                accepted.append(cand / norm)
    if len(accepted) != k:  # fall back to the raw eigh basis
        return vectors
    return np.column_stack(accepted)


def normal_modes(
    config: CrystalConfig, positions: np.ndarray | None = None
) -> CrystalSolution:
    """Diagonalize the mass-weighted Hessian at equilibrium.

    Mass-weighted coordinates q_(i,n) = (r_(i,n) - r0_(i,n)) sqrt(M_n)
    turn the quadratic expansion into an ordinary eigenproblem; mode
    angular frequencies are the square roots of the eigenvalues and the
    orthonormal eigenvectors are the participation patterns.
    """
    if positions is None:
        positions = equilibrium_positions(config)
    n_ions = config.n_ions
    hess = potential_hessian(config, positions)
    inv_sqrt_m = np.repeat(1.0 / np.sqrt(config.masses), 3)
    weighted = hess * np.outer(inv_sqrt_m, inv_sqrt_m)
    eigvals, eigvecs = np.linalg.eigh(weighted)

    if eigvals[0] <= 0.0:
        vec = eigvecs[:, 0].reshape(n_ions, 3)
        axis = int(np.argmax(np.sum(vec**2, axis=0)))
        raise InstabilityError(
            f"non-positive mode eigenvalue {eigvals[0]:.3e} along axis "
            f"{AXIS_NAMES[axis]}: configuration is unstable"
        )

    for block in _split_degenerate(eigvals):
        if len(block) > 1:
            eigvecs[:, block] = _align_degenerate_block(eigvecs[:, block])

    # Sign convention: largest-magnitude entry of each eigenvector positive.
    # Ties (symmetric patterns) break to the first entry within 1e-12 of the max.
    for m in range(eigvecs.shape[1]):
        mags = np.abs(eigvecs[:, m])
        lead = int(np.flatnonzero(mags >= mags.max() * (1.0 - 1e-12))[0])
        if eigvecs[lead, m] < 0.0:
            eigvecs[:, m] = -eigvecs[:, m]

    omegas = np.sqrt(eigvals)
    # Group modes by the axis that carries the dominant weight.
    patterns = eigvecs.T.reshape(-1, n_ions, 3)  # (mode, ion, axis)
    axis_weights = np.sum(patterns**2, axis=1)  # (mode, axis)
    mode_axes = np.argmax(axis_weights, axis=1)
    purity = float(np.min(np.max(axis_weights, axis=1)))

    frequencies: dict[int, np.ndarray] = {}
    participations: dict[int, np.ndarray] = {}
    for axis in range(3):
        members = np.flatnonzero(mode_axes == axis)
        members = members[np.argsort(omegas[members], kind="stable")]
        frequencies[axis] = omegas[members]
        participations[axis] = patterns[members][:, :, axis].T  # (ion, mode)

    grad = potential_gradient(config, positions)
    solution = CrystalSolution(
        config=config,
        positions=positions,
        frequencies=frequencies,
        participations=participations,
        gradient_residual=float(np.max(np.abs(grad))),
        axis_purity=purity,
        _eigenvectors=eigvecs,
    )
    if purity > 1.0 - 1e-10:
        solution.validate()
    return solution


def participation(
    solution: CrystalSolution, ion: int, axis: int, mode: int
) -> float:
    """Participation of ``ion`` along ``axis`` in mode ``mode`` of that axis group."""
    if not 0 <= ion < solution.config.n_ions:
        raise IndexError(f"ion index {ion} out of range")
    if axis not in solution.participations:
        raise IndexError(f"axis index {axis} out of range")
    xi = solution.participations[axis]
    if not 0 <= mode < xi.shape[1]:
        raise IndexError(
            f"mode index {mode} out of range for axis {AXIS_NAMES[axis]} "
            f"({xi.shape[1]} modes)"
        )
    return float(xi[ion, mode])


def two_ion_separation(
    species: IonSpecies, omega_z: float, constants: PhysicalConstants = CONSTANTS
) -> float:
    """Closed-form separation of two identical ions in a harmonic trap."""
    k = constants.coulomb
    return (2.0 * k * species.charge**2 / (species.mass * omega_z**2)) ** (1.0 / 3.0)
