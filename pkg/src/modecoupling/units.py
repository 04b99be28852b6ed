"""Unit handling and physical constants.

All internal quantities are SI (positions in m, energies in J, angular
frequencies in rad/s).  Human-facing inputs may carry unit suffixes
("3.66 MHz", "20 us", "9.012 amu"); conversion happens once, at the
boundary.  Frequencies given in Hz multiples are stored as *angular*
frequencies, i.e. "3.66 MHz" becomes 2*pi*3.66e6 rad/s.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import scipy.constants as _const

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PhysicalConstants:
    """CODATA constants used throughout; replaceable for testing."""

    epsilon0: float = _const.epsilon_0
    elementary_charge: float = _const.elementary_charge
    atomic_mass: float = _const.atomic_mass
    hbar: float = _const.hbar

    @property
    def coulomb(self) -> float:
        """Coulomb prefactor 1/(4 pi eps0) in SI."""
        return 1.0 / (4.0 * math.pi * self.epsilon0)


CONSTANTS = PhysicalConstants()


class UnitError(ValueError):
    """A quantity carried a unit that does not match its expected dimension."""


# Scale factors to SI for each accepted suffix, keyed by dimension.
# Frequencies convert to angular frequency (rad/s).
_UNIT_TABLE: dict[str, dict[str, float]] = {
    "frequency": {
        "Hz": TWO_PI,
        "kHz": TWO_PI * 1e3,
        "MHz": TWO_PI * 1e6,
        "GHz": TWO_PI * 1e9,
        "rad/s": 1.0,
    },
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9},
    "mass": {"amu": _const.atomic_mass, "u": _const.atomic_mass, "kg": 1.0},
    "rate": {"1/s": 1.0, "quanta/s": 1.0, "/s": 1.0},
    "voltage": {"V": 1.0, "mV": 1e-3, "kV": 1e3},
    "dimensionless": {"": 1.0},
}

# Spatial-derivative units V/m^k for trap and drive coefficients.
for _k in range(1, 5):
    _suffix = "V/m" if _k == 1 else f"V/m^{_k}"
    _UNIT_TABLE[f"voltage_per_m{_k}"] = {_suffix: 1.0}

_QUANTITY_RE = re.compile(r"^\s*([+-]?[0-9.eE+-]+)\s*([A-Za-z/^0-9]*)\s*$")


def parse_quantity(value: float | int | str, dimension: str) -> float:
    """Convert a config-level quantity to SI.

    Bare numbers are taken to already be SI for their dimension (rad/s for
    frequencies).  Strings must carry one of the accepted suffixes for
    ``dimension``.
    """
    if dimension not in _UNIT_TABLE:
        raise UnitError(f"unknown dimension {dimension!r}")
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, str):
        raise UnitError(f"cannot interpret {value!r} as a {dimension} quantity")
    m = _QUANTITY_RE.match(value)
    if m is None:
        raise UnitError(f"malformed quantity {value!r}")
    number, suffix = m.group(1), m.group(2)
    table = _UNIT_TABLE[dimension]
    if suffix not in table:
        accepted = ", ".join(repr(s) for s in table if s)
        raise UnitError(
            f"unit {suffix!r} does not measure {dimension} (accepted: {accepted})"
        )
    try:
        x = float(number)
    except ValueError as exc:
        raise UnitError(f"malformed number in quantity {value!r}") from exc
    return x * table[suffix]


def angular_to_cycles(omega: float, unit: str = "MHz") -> float:
    """rad/s -> cyclic frequency in the given unit (display helper)."""
    scale = {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9}[unit]
    return omega / (TWO_PI * scale)
