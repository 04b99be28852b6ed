"""Canonical Be-Mg-Be demonstration system.

One place holds the numbers used by the bundled configs, the examples in
the README, and the integration tests: a Be9-Mg25-Be9 string whose axial
Alternating/Stretch mode gap is calibrated to 0.283 MHz, driven by a z^3
potential profile whose amplitude is calibrated so the full exchange
oscillation runs at 5.1 kHz at 28.6 % drive amplitude.
"""
from __future__ import annotations

import numpy as np

from . import coupling, crystal
from .polynomial import Polynomial3D
from .units import TWO_PI

BE9 = crystal.IonSpecies.from_amu("Be9", 9.0121831)
MG25 = crystal.IonSpecies.from_amu("Mg25", 24.98583698)

# Axial mode indices for a three-ion string (ascending frequency).
IN_PHASE, STRETCH, ALTERNATING = 0, 1, 2
AXIAL = 2  # z axis index

MODE_GAP = TWO_PI * 0.283e6  # Alternating - Stretch angular frequency
EXCHANGE_RATE = TWO_PI * 5.1e3  # Omega_c at the reference drive amplitude
DRIVE_BETA = 0.286
RAMP_TIME = 20e-6
SWAP_AREA = 100e-6  # effective pulse area of one full swap

HEATING_RATES = {"alternating": 60.0, "stretch": 1.0, "in_phase": 750.0}  # quanta/s
COOLED_NBAR = {"alternating": 0.023, "stretch": 0.02, "in_phase": 0.25}

RAP_FIDELITY = {"be": 0.95, "mg": 0.94}
SIDEBAND_MAP_FACTORS = (0.942, 0.889)  # P(1) and P(2) conversion denominators

BE_BRIGHT_MEAN = 30.0
BE_BACKGROUND = 2.0
BE_THRESHOLDS = (13, 46)
MG_BRIGHT_MEAN = 30.0
MG_BACKGROUND = 1.0
MG_THRESHOLD = (9,)
READOUT_FLIP = 0.02  # symmetric classification flip probability


def bmb_crystal_config(
    mode_gap: float = MODE_GAP,
    radial_x: float = TWO_PI * 8.0e6,
    radial_y: float = TWO_PI * 8.5e6,
    twist: float = 0.0,
) -> crystal.CrystalConfig:
    """Be-Mg-Be crystal with the axial curvature set by the A-S mode gap.

    All axial frequencies scale as sqrt(curvature), so a single trial
    solve fixes the calibration.  ``twist`` adds an x*z cross term
    (V/m^2) that mixes axial and radial patterns slightly, giving the
    center ion a nonzero Stretch participation.
    """
    species = (BE9, MG25, BE9)
    trial = crystal.TrapPotential.from_frequencies(
        BE9, radial_x, radial_y, TWO_PI * 2.0e6
    )
    solution = crystal.normal_modes(crystal.CrystalConfig(species, trial))
    freqs = solution.frequencies[AXIAL]
    gap = freqs[ALTERNATING] - freqs[STRETCH]
    coeffs = dict(trial.polynomial.coefficients)
    coeffs[(0, 0, 2)] *= (mode_gap / gap) ** 2
    if twist != 0.0:
        coeffs[(1, 0, 1)] = twist
    return crystal.CrystalConfig(
        species, crystal.TrapPotential(Polynomial3D(coeffs))
    )


def bmb_solution(**kwargs) -> crystal.CrystalSolution:
    return crystal.normal_modes(bmb_crystal_config(**kwargs))


def bmb_drive(
    solution: crystal.CrystalSolution,
    omega_c: float = EXCHANGE_RATE,
    beta: float = DRIVE_BETA,
) -> coupling.DrivePolynomial:
    """z^3 drive profile calibrated so Omega_c(beta) hits ``omega_c``.

    The cubic profile has odd curvature across the string, which is what
    couples the even Alternating pattern to the odd Stretch pattern; at
    full amplitude (beta = 1) the same profile yields Omega_c about
    2 pi x 17.8 kHz.
    """
    shape = Polynomial3D({(0, 0, 3): 1.0})
    return coupling.calibrate_amplitude(
        shape,
        solution,
        (AXIAL, ALTERNATING),
        (AXIAL, STRETCH),
        target_g0=0.5 * omega_c,
        beta=beta,
    )


def bmb_mode_pair() -> tuple[coupling.ModeRef, coupling.ModeRef]:
    """(Alternating, Stretch): the coupled pair, higher frequency first."""
    return (AXIAL, ALTERNATING), (AXIAL, STRETCH)


def mg_alternating_participation(solution: crystal.CrystalSolution) -> float:
    return crystal.participation(solution, 1, AXIAL, ALTERNATING)


def bmb_ion_index(name: str) -> int:
    return {"be_left": 0, "mg": 1, "be_right": 2}[name]


DETECTION_PHOTONS = 2000.0  # photons scattered during one detection window
DETECTION_RECOIL_NBAR = 0.012  # quanta added to the Alternating mode per detection


def recoil_constant(solution: crystal.CrystalSolution | None = None) -> float:
    """Recoil kick constant kappa (quanta per photon per participation^2).

    Calibrated so one detection on the center ion adds DETECTION_RECOIL_NBAR
    to the Alternating mode; the symmetry-protected Stretch mode picks up
    nothing because the center ion has no participation there.
    """
    solution = bmb_solution() if solution is None else solution
    xi = mg_alternating_participation(solution)
    return DETECTION_RECOIL_NBAR / (DETECTION_PHOTONS * xi * xi)


def axial_participations(solution: crystal.CrystalSolution) -> np.ndarray:
    """Axial participation matrix (ion, mode), ordered by mode frequency."""
    return np.array(solution.participations[AXIAL])
