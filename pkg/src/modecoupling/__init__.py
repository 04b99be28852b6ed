"""Tools for bilinearly coupled motional modes of trapped-ion crystals.

The package covers the full simulation chain: static crystal and
normal-mode structure (``crystal``), the exchange coupling induced by an
oscillating potential-curvature drive (``coupling``), truncated joint
Hilbert-space dynamics with heating and dephasing (``hilbert``), pulse
sequences and the standard interference/decay experiments
(``sequence``), fluorescence readout and population inference
(``readout``), repeated nondestructive readout of a motional quantum
(``qnd``), electrode amplitude design for target curvatures
(``electrodes``), and reproducible run orchestration (``config``,
``cli``).  ``presets`` holds the calibrated Be-Mg-Be demonstration
numbers used by the bundled configurations.
"""
from __future__ import annotations

__version__ = "0.1.0"

from . import (
    config,
    coupling,
    crystal,
    electrodes,
    hilbert,
    polynomial,
    presets,
    qnd,
    readout,
    sequence,
    units,
)

__all__ = [
    "__version__",
    "config",
    "coupling",
    "crystal",
    "electrodes",
    "hilbert",
    "polynomial",
    "presets",
    "qnd",
    "readout",
    "sequence",
    "units",
]
