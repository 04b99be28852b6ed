"""Run configuration: structured text in, SI quantities out.

The on-disk format is TOML with up to five blocks: ``[crystal]``,
``[drive]``, ``[noise]``, ``[experiment]``, ``[output]``.  Human-facing
quantities may carry unit suffixes ("3.66 MHz", "20 us", "9.012 amu");
frequencies are stored as angular frequencies, so "3.66 MHz" becomes
2*pi*3.66e6 rad/s.  Bare numbers are taken to already be SI, which is
exactly what the canonical emitter writes: for any parsed configuration
``parse_config(emit_canonical(cfg)) == cfg``.

Unknown keys are rejected with the key name and the line it appears on;
an experiment that needs a block the file does not provide is rejected
naming the block.  All randomness in a run descends from the single
64-bit ``experiment.seed`` through numpy ``SeedSequence`` spawn keys
(one fixed index per named consumer, see ``rng_stream``), so identical
(config, seed) pairs reproduce identical outputs byte for byte.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib  # type: ignore[no-redef]

from . import presets
from .crystal import ConfigurationError
from .units import UnitError, parse_quantity

EXPERIMENT_KINDS = (
    "modes",
    "couple",
    "scan-freq",
    "scan-time",
    "hom",
    "ramsey",
    "swap-decay",
    "qnd",
    "design-voltages",
)

# Experiments that draw random samples; these require a seed.
STOCHASTIC_KINDS = frozenset({"qnd"})

# Experiments that simulate the coupled mode pair (crystal + drive blocks).
_PAIR_KINDS = frozenset(
    {"couple", "scan-freq", "scan-time", "hom", "ramsey", "swap-decay", "qnd"}
)

_AXES = {"x": 0, "y": 1, "z": 2}
_MODE_NAMES = {"in_phase": 0, "stretch": 1, "alternating": 2}
_SIM_MODES = ("alternating", "stretch")  # noise keys for the simulated pair
_RAP_KEYS = ("be", "mg")

_SPECIES_REGISTRY = {s.name: s.mass for s in (presets.BE9, presets.MG25)}

MAX_SEED = 2**64 - 1


# ---------------------------------------------------------------------------
# configuration dataclasses (all SI)


@dataclass(frozen=True)
class SpeciesSpec:
    """One ion in string order: display name and mass in kg."""

    name: str
    mass: float


@dataclass(frozen=True)
class TrapSpec:
    """Static trap: angular frequencies (rad/s) for the first listed species.

    ``mode_gap`` optionally rescales the axial curvature after a trial
    solve so the gap between the two highest axial modes matches; ``twist``
    adds an x*z cross term (V/m^2).
    """

    radial_x: float
    radial_y: float
    axial: float
    mode_gap: float | None = None
    twist: float = 0.0


@dataclass(frozen=True)
class CrystalSpec:
    species: tuple[SpeciesSpec, ...]
    trap: TrapSpec


@dataclass(frozen=True)
class DriveSpec:
    """Drive profile and the mode pair it addresses.

    ``coefficients`` are monomial powers -> V/m^degree.  When
    ``calibrate_exchange`` (angular rad/s) is set, the profile is rescaled
    so the full exchange oscillation of the pair runs at that rate at the
    given ``beta``; otherwise the coefficients are taken literally.
    ``frequency`` of None means drive on resonance.
    """

    coefficients: tuple[tuple[tuple[int, int, int], float], ...]
    beta: float = 1.0
    phase: float = 0.0
    ramp_time: float = 0.0
    frequency: float | None = None
    calibrate_exchange: float | None = None
    axis: int = 2
    mode_a: int = 2
    mode_b: int = 1


@dataclass(frozen=True)
class NoiseSpec:
    """Imperfection budget; an empty [noise] block means none at all."""

    heating: tuple[tuple[str, float], ...] = ()
    dephasing: tuple[tuple[str, float], ...] = ()
    recoil_kick: float = 0.0
    rap_fidelity: tuple[tuple[str, float], ...] = ()
    readout_flip: float = 0.0

    def heating_dict(self) -> dict[str, float]:
        return dict(self.heating)

    def dephasing_dict(self) -> dict[str, float]:
        return dict(self.dephasing)


@dataclass(frozen=True)
class ExperimentSpec:
    """Which experiment to run plus its kind-specific knobs.

    Only the keys meaningful for ``kind`` may be set; the parser rejects
    the rest, so a config cannot silently carry inert settings.
    """

    kind: str
    seed: int | None = None
    cutoff: int | None = None
    grid: tuple[float, ...] | None = None
    duration: float | None = None
    scan: str | None = None
    initial: str | None = None
    variant: str | None = None
    window: float | None = None
    max_swaps: int | None = None
    trials: int | None = None
    rounds: int | None = None
    initial_nbar: float | None = None
    ideal: bool = False
    ion_spacing: float | None = None
    curvature: float | None = None
    null_weight: float | None = None
    target: tuple[float, ...] | None = None

    @property
    def stochastic(self) -> bool:
        return self.kind in STOCHASTIC_KINDS


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "."
    format: str = "csv"
    basename: str | None = None


@dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentSpec
    crystal: CrystalSpec | None = None
    drive: DriveSpec | None = None
    noise: NoiseSpec | None = None
    output: OutputSpec = OutputSpec()


# ---------------------------------------------------------------------------
# error reporting helpers


def _line_of(text: str, key: str) -> int | None:
    """Best-effort line number of a key: an assignment or a table header."""
    token = re.escape(key)
    assign = re.compile(rf'(?<![\w-]){token}"?\s*=')
    header = re.compile(rf"^\s*\[[^\]]*(?<![\w-]){token}(?![\w-])[^\]]*\]")
    for i, line in enumerate(text.splitlines(), start=1):
        if assign.search(line) or header.match(line):
            return i
    return None


def _unknown_key(text: str, dotted: str, key: str) -> None:
    line = _line_of(text, key)
    where = f" (line {line})" if line is not None else ""
    raise ConfigurationError(f"unknown key '{dotted}'{where}")


_MISSING = object()


class _Block:
    """One TOML table being consumed key by key; leftovers are errors.

    When ``allowed`` is given, unknown keys are reported up front so a
    misspelling is named before any missing-key complaint about the key
    it was supposed to be.
    """

    def __init__(self, name: str, table: dict, text: str, allowed=None):
        if not isinstance(table, dict):
            raise ConfigurationError(f"[{name}] must be a table")
        self.name = name
        self._table = dict(table)
        self._text = text
        if allowed is not None:
            for key in sorted(self._table):
                if key not in allowed:
                    _unknown_key(text, f"{name}.{key}", key)

    def keys(self) -> set[str]:
        return set(self._table)

    def _pop(self, key: str, default):
        if key in self._table:
            return self._table.pop(key)
        if default is _MISSING:
            raise ConfigurationError(f"[{self.name}] is missing required key '{key}'")
        return default

    def _fail(self, key: str, message: str) -> None:
        raise ConfigurationError(f"[{self.name}] key '{key}': {message}")

    def quantity(self, key: str, dimension: str, default=_MISSING) -> float | None:
        raw = self._pop(key, default)
        if raw is None:
            return None
        try:
            return parse_quantity(raw, dimension)
        except UnitError as exc:
            self._fail(key, str(exc))

    def number(self, key: str, default=_MISSING) -> float | None:
        raw = self._pop(key, default)
        if raw is None:
            return None
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            self._fail(key, f"expected a number, got {raw!r}")
        return float(raw)

    def integer(self, key: str, default=_MISSING) -> int | None:
        raw = self._pop(key, default)
        if raw is None:
            return None
        if isinstance(raw, bool) or not isinstance(raw, int):
            self._fail(key, f"expected an integer, got {raw!r}")
        return int(raw)

    def boolean(self, key: str, default=_MISSING) -> bool:
        raw = self._pop(key, default)
        if not isinstance(raw, bool):
            self._fail(key, f"expected true/false, got {raw!r}")
        return bool(raw)

    def string(self, key: str, default=_MISSING, choices=None) -> str | None:
        raw = self._pop(key, default)
        if raw is None:
            return None
        if not isinstance(raw, str):
            self._fail(key, f"expected a string, got {raw!r}")
        if choices is not None and raw not in choices:
            self._fail(key, f"expected one of {sorted(choices)}, got {raw!r}")
        return raw

    def array(self, key: str, default=_MISSING) -> list | None:
        raw = self._pop(key, default)
        if raw is None:
            return None
        if not isinstance(raw, list):
            self._fail(key, f"expected an array, got {raw!r}")
        return list(raw)

    def table(self, key: str, default=_MISSING) -> dict | None:
        raw = self._pop(key, default)
        if raw is None:
            return None
        if not isinstance(raw, dict):
            self._fail(key, f"expected a table, got {raw!r}")
        return dict(raw)

    def finish(self) -> None:
        for key in sorted(self._table):
            _unknown_key(self._text, f"{self.name}.{key}", key)


# ---------------------------------------------------------------------------
# block parsers


def _parse_species(entries: list, text: str) -> tuple[SpeciesSpec, ...]:
    if not entries:
        raise ConfigurationError("[crystal] species list is empty")
    out = []
    for i, entry in enumerate(entries):
        if isinstance(entry, str):
            if entry not in _SPECIES_REGISTRY:
                known = ", ".join(sorted(_SPECIES_REGISTRY))
                raise ConfigurationError(
                    f"unknown species {entry!r} (known: {known}; or give "
                    "a table with 'name' and 'mass')"
                )
            out.append(SpeciesSpec(entry, _SPECIES_REGISTRY[entry]))
        elif isinstance(entry, dict):
            block = _Block(f"crystal.species[{i}]", entry, text, allowed={"name", "mass"})
            name = block.string("name")
            mass = block.quantity("mass", "mass")
            block.finish()
            out.append(SpeciesSpec(name, mass))
        else:
            raise ConfigurationError(
                f"species entry {entry!r} must be a name or a name/mass table"
            )
    return tuple(out)


def _parse_crystal(table: dict, text: str) -> CrystalSpec:
    block = _Block("crystal", table, text, allowed={"species", "trap"})
    species = _parse_species(block.array("species"), text)
    trap_block = _Block("crystal.trap", block.table("trap"), text,
                        allowed={"radial_x", "radial_y", "axial", "mode_gap", "twist"})
    trap = TrapSpec(
        radial_x=trap_block.quantity("radial_x", "frequency"),
        radial_y=trap_block.quantity("radial_y", "frequency"),
        axial=trap_block.quantity("axial", "frequency"),
        mode_gap=trap_block.quantity("mode_gap", "frequency", None),
        twist=trap_block.quantity("twist", "voltage_per_m2", 0.0),
    )
    trap_block.finish()
    block.finish()
    return CrystalSpec(species, trap)


_MONO_TOKEN = re.compile(r"([xyz])([0-9]*)")


def _parse_monomial(key: str) -> tuple[int, int, int]:
    powers = [0, 0, 0]
    consumed = 0
    for m in _MONO_TOKEN.finditer(key):
        if m.start() != consumed:
            break
        axis = _AXES[m.group(1)]
        power = int(m.group(2)) if m.group(2) else 1
        powers[axis] += power
        consumed = m.end()
    if consumed != len(key) or sum(powers) == 0:
        raise ConfigurationError(
            f"monomial key {key!r} is not a product of x/y/z powers "
            "(examples: 'z3', 'xz', 'y2')"
        )
    return tuple(powers)  # type: ignore[return-value]


def _format_monomial(powers: tuple[int, int, int]) -> str:
    parts = []
    for axis, p in zip("xyz", powers):
        if p == 1:
            parts.append(axis)
        elif p > 1:
            parts.append(f"{axis}{p}")
    return "".join(parts)


def _axis_or_mode(block: _Block, key: str, names: dict[str, int], default: int) -> int:
    raw = block._pop(key, None)
    if raw is None:
        return default
    if isinstance(raw, bool):
        block._fail(key, f"expected a name or index, got {raw!r}")
    if isinstance(raw, int):
        return raw
    if isinstance(raw, str) and raw in names:
        return names[raw]
    block._fail(key, f"expected an index or one of {sorted(names)}, got {raw!r}")
    raise AssertionError  # unreachable


def _parse_drive(table: dict, text: str) -> DriveSpec:
    block = _Block("drive", table, text, allowed={
        "polynomial", "beta", "phase", "ramp_time", "frequency",
        "calibrate_exchange", "axis", "mode_a", "mode_b"})
    poly = block.table("polynomial")
    if not poly:
        raise ConfigurationError("[drive.polynomial] must list at least one term")
    coeffs: dict[tuple[int, int, int], float] = {}
    for key, value in poly.items():
        mono = _parse_monomial(key)
        if mono in coeffs:
            raise ConfigurationError(
                f"[drive.polynomial] duplicate monomial '{_format_monomial(mono)}'"
            )
        degree = sum(mono)
        if degree > 4:
            raise ConfigurationError(
                f"[drive.polynomial] term '{key}' has degree {degree} > 4"
            )
        try:
            coeffs[mono] = parse_quantity(value, f"voltage_per_m{degree}")
        except UnitError as exc:
            raise ConfigurationError(f"[drive.polynomial] key '{key}': {exc}") from exc
    spec = DriveSpec(
        coefficients=tuple(sorted(coeffs.items())),
        beta=block.number("beta", 1.0),
        phase=block.number("phase", 0.0),
        ramp_time=block.quantity("ramp_time", "time", 0.0),
        frequency=block.quantity("frequency", "frequency", None),
        calibrate_exchange=block.quantity("calibrate_exchange", "frequency", None),
        axis=_axis_or_mode(block, "axis", _AXES, 2),
        mode_a=_axis_or_mode(block, "mode_a", _MODE_NAMES, 2),
        mode_b=_axis_or_mode(block, "mode_b", _MODE_NAMES, 1),
    )
    block.finish()
    if not 0 <= spec.axis <= 2:
        raise ConfigurationError(f"[drive] axis index {spec.axis} outside 0..2")
    if spec.mode_a == spec.mode_b:
        raise ConfigurationError("[drive] mode_a and mode_b must differ")
    return spec


def _named_rates(
    block: _Block, key: str, allowed: tuple[str, ...], dimension: str, text: str
) -> tuple[tuple[str, float], ...]:
    table = block.table(key, None)
    if not table:
        return ()
    sub = _Block(f"{block.name}.{key}", table, text, allowed=set(allowed))
    out = {}
    for name in allowed:
        if name in sub.keys():
            out[name] = sub.quantity(name, dimension)
    sub.finish()
    return tuple(sorted(out.items()))


def _parse_noise(table: dict, text: str) -> NoiseSpec:
    block = _Block("noise", table, text, allowed={
        "heating", "dephasing", "recoil_kick", "rap_fidelity", "readout_flip"})
    spec = NoiseSpec(
        heating=_named_rates(block, "heating", _SIM_MODES, "rate", text),
        dephasing=_named_rates(block, "dephasing", _SIM_MODES, "rate", text),
        recoil_kick=block.number("recoil_kick", 0.0),
        rap_fidelity=_named_rates(block, "rap_fidelity", _RAP_KEYS, "dimensionless", text),
        readout_flip=block.number("readout_flip", 0.0),
    )
    block.finish()
    for name, value in spec.rap_fidelity:
        if not 0.0 <= value <= 1.0:
            raise ConfigurationError(f"[noise.rap_fidelity] {name} = {value} outside [0, 1]")
    if not 0.0 <= spec.readout_flip <= 0.5:
        raise ConfigurationError(
            f"[noise] readout_flip = {spec.readout_flip} outside [0, 0.5]"
        )
    return spec


# keys each experiment understands (beyond kind/seed) and the ones it requires
_KIND_KEYS: dict[str, frozenset[str]] = {
    "modes": frozenset(),
    "couple": frozenset(),
    "scan-freq": frozenset({"grid", "duration", "cutoff"}),
    "scan-time": frozenset({"grid", "cutoff"}),
    "hom": frozenset({"grid", "scan", "initial", "cutoff"}),
    "ramsey": frozenset({"grid", "variant", "window", "cutoff"}),
    "swap-decay": frozenset({"max_swaps", "duration", "cutoff"}),
    "qnd": frozenset(
        {"trials", "rounds", "variant", "initial_nbar", "ideal", "cutoff"}
    ),
    "design-voltages": frozenset({"ion_spacing", "curvature", "null_weight", "target"}),
}
_KIND_REQUIRED: dict[str, frozenset[str]] = {
    "scan-freq": frozenset({"grid"}),
    "scan-time": frozenset({"grid"}),
    "hom": frozenset({"grid", "scan"}),
    "ramsey": frozenset({"grid"}),
    "qnd": frozenset({"trials", "rounds"}),
}

_VARIANTS = {
    "ramsey": ("delay", "swap", "double-swap"),
    "qnd": ("zero-to-dark", "zero-to-bright"),
}
_VARIANT_DEFAULT = {"ramsey": "delay", "qnd": "zero-to-dark"}


def _grid_dimension(kind: str, scan: str | None) -> str:
    if kind == "scan-freq":
        return "frequency"
    if kind == "scan-time":
        return "time"
    if kind == "hom":
        return "time" if scan == "duration" else "dimensionless"
    return "dimensionless"  # ramsey phases in rad


def _parse_grid(table: dict, dimension: str, text: str) -> tuple[float, ...]:
    block = _Block("experiment.grid", table, text,
                   allowed={"values", "start", "stop", "points"})
    if "values" in block.keys():
        raw = block.array("values")
        block.finish()
        if not raw:
            raise ConfigurationError("[experiment.grid] values list is empty")
        try:
            return tuple(parse_quantity(v, dimension) for v in raw)
        except UnitError as exc:
            raise ConfigurationError(f"[experiment.grid] values: {exc}") from exc
    start = block.quantity("start", dimension)
    stop = block.quantity("stop", dimension)
    points = block.integer("points")
    block.finish()
    if points < 2:
        raise ConfigurationError("[experiment.grid] points must be >= 2")
    return tuple(float(x) for x in np.linspace(start, stop, points))


def _check_seed(seed: int | None) -> int | None:
    if seed is None:
        return None
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigurationError(f"seed must be an integer, got {seed!r}")
    if not 0 <= seed <= MAX_SEED:
        raise ConfigurationError(f"seed {seed} outside [0, 2^64 - 1]")
    return int(seed)


def _parse_experiment(table: dict, text: str, seed_override: int | None) -> ExperimentSpec:
    allowed = {"kind", "seed"}.union(*_KIND_KEYS.values())
    block = _Block("experiment", table, text, allowed=allowed)
    kind = block.string("kind")
    if kind not in EXPERIMENT_KINDS:
        raise ConfigurationError(
            f"unknown experiment kind {kind!r}; expected one of "
            + ", ".join(EXPERIMENT_KINDS)
        )
    present = block.keys() - {"seed"}
    stray = sorted(present - _KIND_KEYS[kind])
    if stray:
        key = stray[0]
        line = _line_of(text, key)
        where = f" (line {line})" if line is not None else ""
        raise ConfigurationError(
            f"key 'experiment.{key}'{where} does not apply to experiment '{kind}'"
        )
    missing = sorted(_KIND_REQUIRED.get(kind, frozenset()) - present)
    if missing:
        raise ConfigurationError(
            f"experiment '{kind}' requires key 'experiment.{missing[0]}'"
        )

    seed = _check_seed(block.integer("seed", None))
    if seed_override is not None:
        seed = _check_seed(seed_override)

    scan = block.string("scan", None, choices=("duration", "phase"))
    grid = None
    if "grid" in block.keys():
        grid = _parse_grid(block.table("grid"), _grid_dimension(kind, scan), text)

    variant = block.string("variant", None, choices=_VARIANTS.get(kind))
    if variant is None and kind in _VARIANT_DEFAULT:
        variant = _VARIANT_DEFAULT[kind]
    initial = block.string("initial", None, choices=("10", "11"))
    if initial is None and kind == "hom":
        initial = "11"

    target = block.array("target", None)
    if target is not None:
        bad = [v for v in target if isinstance(v, bool) or not isinstance(v, (int, float))]
        if bad:
            raise ConfigurationError("[experiment] target entries must be numbers")
        target = tuple(float(v) for v in target)

    spec = ExperimentSpec(
        kind=kind,
        seed=seed,
        cutoff=block.integer("cutoff", None),
        grid=grid,
        duration=block.quantity("duration", "time", None),
        scan=scan,
        initial=initial,
        variant=variant,
        window=block.quantity("window", "time", None),
        max_swaps=block.integer("max_swaps", None),
        trials=block.integer("trials", None),
        rounds=block.integer("rounds", None),
        initial_nbar=block.number("initial_nbar", None),
        ideal=block.boolean("ideal", False),
        ion_spacing=block.number("ion_spacing", None),
        curvature=block.number("curvature", None),
        null_weight=block.number("null_weight", None),
        target=target,
    )
    block.finish()

    if spec.cutoff is not None and spec.cutoff < 2:
        raise ConfigurationError("[experiment] cutoff must be >= 2")
    for key, value, minimum in (
        ("trials", spec.trials, 1),
        ("rounds", spec.rounds, 1),
        ("max_swaps", spec.max_swaps, 2),
    ):
        if value is not None and value < minimum:
            raise ConfigurationError(f"[experiment] {key} must be >= {minimum}")
    if spec.initial_nbar is not None and spec.initial_nbar < 0.0:
        raise ConfigurationError("[experiment] initial_nbar must be >= 0")
    return spec


def _parse_output(table: dict, text: str) -> OutputSpec:
    block = _Block("output", table, text,
                   allowed={"directory", "format", "basename"})
    spec = OutputSpec(
        directory=block.string("directory", "."),
        format=block.string("format", "csv", choices=("csv", "json")),
        basename=block.string("basename", None),
    )
    block.finish()
    return spec


def parse_config(text: str, seed: int | None = None) -> RunConfig:
    """Parse and validate a TOML run configuration.

    ``seed`` (from the command line) overrides ``experiment.seed``.
    Raises ConfigurationError naming the offending key and line for
    anything structurally wrong; stochastic experiments without a seed
    are rejected here, before any computation.
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config is not valid TOML: {exc}") from exc

    known = ("crystal", "drive", "noise", "experiment", "output")
    for key in raw:
        if key not in known:
            _unknown_key(text, key, key)
    if "experiment" not in raw:
        raise ConfigurationError("missing [experiment] block")

    experiment = _parse_experiment(raw["experiment"], text, seed)
    crystal_spec = _parse_crystal(raw["crystal"], text) if "crystal" in raw else None
    drive_spec = _parse_drive(raw["drive"], text) if "drive" in raw else None
    noise_spec = _parse_noise(raw["noise"], text) if "noise" in raw else None
    output = _parse_output(raw["output"], text) if "output" in raw else OutputSpec()

    kind = experiment.kind
    if kind == "modes" or kind in _PAIR_KINDS:
        if crystal_spec is None:
            raise ConfigurationError(f"experiment '{kind}' requires a [crystal] block")
    if kind in _PAIR_KINDS and drive_spec is None:
        raise ConfigurationError(f"experiment '{kind}' requires a [drive] block")
    if experiment.stochastic and experiment.seed is None:
        raise ConfigurationError(
            f"experiment '{kind}' draws random samples; set experiment.seed "
            "or pass --seed"
        )
    return RunConfig(experiment, crystal_spec, drive_spec, noise_spec, output)


# ---------------------------------------------------------------------------
# canonical emission and hashing


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    raise TypeError(f"cannot format {value!r}")


def _inline_table(pairs) -> str:
    inner = ", ".join(f"{k} = {_fmt(v)}" for k, v in pairs)
    return "{ " + inner + " }"


def _array(values) -> str:
    return "[" + ", ".join(_fmt(v) for v in values) + "]"


def emit_canonical(config: RunConfig) -> str:
    """Normalized TOML for ``config``: fixed block/key order, SI numbers.

    The emitted text parses back to an equal RunConfig and is the input
    to ``config_hash``, so formatting differences in the original file
    never change the hash.
    """
    lines: list[str] = []

    def put(key, value):
        lines.append(f"{key} = {_fmt(value)}")

    if config.crystal is not None:
        lines.append("[crystal]")
        entries = [
            _inline_table((("name", s.name), ("mass", s.mass)))
            for s in config.crystal.species
        ]
        lines.append("species = [" + ", ".join(entries) + "]")
        lines.append("")
        lines.append("[crystal.trap]")
        trap = config.crystal.trap
        put("radial_x", trap.radial_x)
        put("radial_y", trap.radial_y)
        put("axial", trap.axial)
        if trap.mode_gap is not None:
            put("mode_gap", trap.mode_gap)
        put("twist", trap.twist)
        lines.append("")

    if config.drive is not None:
        drive = config.drive
        lines.append("[drive]")
        put("beta", drive.beta)
        put("phase", drive.phase)
        put("ramp_time", drive.ramp_time)
        if drive.frequency is not None:
            put("frequency", drive.frequency)
        if drive.calibrate_exchange is not None:
            put("calibrate_exchange", drive.calibrate_exchange)
        put("axis", "xyz"[drive.axis])
        put("mode_a", drive.mode_a)
        put("mode_b", drive.mode_b)
        lines.append("")
        lines.append("[drive.polynomial]")
        for mono, value in drive.coefficients:
            put(_format_monomial(mono), value)
        lines.append("")

    if config.noise is not None:
        noise = config.noise
        lines.append("[noise]")
        if noise.heating:
            lines.append(f"heating = {_inline_table(noise.heating)}")
        if noise.dephasing:
            lines.append(f"dephasing = {_inline_table(noise.dephasing)}")
        put("recoil_kick", noise.recoil_kick)
        if noise.rap_fidelity:
            lines.append(f"rap_fidelity = {_inline_table(noise.rap_fidelity)}")
        put("readout_flip", noise.readout_flip)
        lines.append("")

    exp = config.experiment
    lines.append("[experiment]")
    put("kind", exp.kind)
    if exp.seed is not None:
        put("seed", exp.seed)
    if exp.grid is not None:
        lines.append("grid = { values = " + _array(exp.grid) + " }")
    for key in (
        "duration",
        "scan",
        "initial",
        "variant",
        "window",
        "max_swaps",
        "trials",
        "rounds",
        "initial_nbar",
        "cutoff",
        "ion_spacing",
        "curvature",
        "null_weight",
    ):
        value = getattr(exp, key)
        if value is not None:
            put(key, value)
    if exp.ideal:
        put("ideal", True)
    if exp.target is not None:
        lines.append("target = " + _array(exp.target))
    lines.append("")

    lines.append("[output]")
    put("directory", config.output.directory)
    put("format", config.output.format)
    if config.output.basename is not None:
        put("basename", config.output.basename)
    lines.append("")
    return "\n".join(lines)


def config_hash(config: RunConfig) -> str:
    """sha256 of the canonical text; stable across reformatting."""
    return hashlib.sha256(emit_canonical(config).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# seed splitting

# Every random consumer draws from SeedSequence(seed, spawn_key=(index,))
# with a fixed published index; adding a consumer later never shifts the
# streams of existing ones.
RNG_STREAMS = {"qnd": 0}


def rng_stream(seed: int, stream: str) -> np.random.Generator:
    """Child generator for one named consumer of the run seed."""
    if stream not in RNG_STREAMS:
        raise ConfigurationError(f"unknown rng stream {stream!r}")
    _check_seed(seed)
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(RNG_STREAMS[stream],))
    return np.random.default_rng(seq)
