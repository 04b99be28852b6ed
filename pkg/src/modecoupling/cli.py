"""Command-line orchestration: one experiment per invocation.

``modecoupling <experiment> --config run.toml [--out DIR] [--format csv|json]
[--seed N]`` parses the configuration, runs the named experiment, and
writes one output file.  Exit codes: 0 on success, 2 for configuration
problems (reported before any computation), 3 for numerical failures.

CSV output is a header row plus one row per scan point; every numeric
column carries its unit in brackets.  JSON output is the full bundle:
metadata (config hash, package versions, creation time), the data
series, scalar results with uncertainties, and any warnings raised
during the run.  Outputs are byte-identical for identical (config,
seed); the JSON timestamp honors SOURCE_DATE_EPOCH so archived runs can
be reproduced bit for bit.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
import warnings
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from statistics import StatisticsError

import numpy as np
import scipy

from . import __version__
from . import config as cfg
from . import coupling, crystal, electrodes, qnd, sequence
from .crystal import AXIS_NAMES, ConfigurationError
from .hilbert import NoiseModel
from .polynomial import Polynomial3D
from .units import CONSTANTS, UnitError, angular_to_cycles

_NUMERICAL_ERRORS = (
    crystal.SolverError,
    crystal.InstabilityError,
    crystal.LinearityError,
    np.linalg.LinAlgError,
    FloatingPointError,
    ZeroDivisionError,
    OverflowError,
    StatisticsError,
    RuntimeError,  # includes FitError and conservation checks
)


# ---------------------------------------------------------------------------
# result container


@dataclass
class Column:
    """One emitted column: name, unit annotation, values (equal lengths)."""

    name: str
    unit: str
    values: list


@dataclass
class ResultBundle:
    """Everything one run produced, ready for serialization."""

    experiment: str
    metadata: dict
    columns: list[Column]
    results: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


def _created_stamp() -> str:
    """ISO timestamp; SOURCE_DATE_EPOCH overrides the clock for archives."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else int(time.time())
    return datetime.fromtimestamp(t, tz=timezone.utc).isoformat()


def _pyify(value):
    if isinstance(value, dict):
        return {k: _pyify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_pyify(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_pyify(v) for v in value.tolist()]
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


# ---------------------------------------------------------------------------
# builders shared by the experiments


def _crystal_solution(spec: cfg.CrystalSpec) -> crystal.CrystalSolution:
    species = tuple(
        crystal.IonSpecies(s.name, s.mass, CONSTANTS.elementary_charge)
        for s in spec.species
    )
    trap = crystal.TrapPotential.from_frequencies(
        species[0], spec.trap.radial_x, spec.trap.radial_y, spec.trap.axial
    )
    needs_rebuild = spec.trap.mode_gap is not None or spec.trap.twist != 0.0
    if not needs_rebuild:
        return crystal.normal_modes(crystal.CrystalConfig(species, trap))
    coeffs = dict(trap.polynomial.coefficients)
    if spec.trap.mode_gap is not None:
        # Axial frequencies scale as sqrt of the z^2 coefficient, so one
        # trial solve calibrates the gap between the top two axial modes.
        trial = crystal.normal_modes(crystal.CrystalConfig(species, trap))
        freqs = trial.frequencies[2]
        if len(freqs) < 2:
            raise ConfigurationError("mode_gap needs at least two ions")
        gap = freqs[-1] - freqs[-2]
        coeffs[(0, 0, 2)] *= (spec.trap.mode_gap / gap) ** 2
    if spec.trap.twist != 0.0:
        coeffs[(1, 0, 1)] = spec.trap.twist
    rebuilt = crystal.CrystalConfig(species, crystal.TrapPotential(Polynomial3D(coeffs)))
    return crystal.normal_modes(rebuilt)


@dataclass
class _PairContext:
    """Crystal + drive reduced to the quantities the scans consume."""

    solution: crystal.CrystalSolution
    drive: coupling.DrivePolynomial
    g0: float
    per_ion: np.ndarray
    resonance: float
    drive_frequency: float
    detuning: float


def _pair_context(config: cfg.RunConfig) -> _PairContext:
    spec = config.drive
    solution = _crystal_solution(config.crystal)
    n_modes = solution.mode_count(spec.axis)
    for label, idx in (("mode_a", spec.mode_a), ("mode_b", spec.mode_b)):
        if not 0 <= idx < n_modes:
            raise ConfigurationError(
                f"[drive] {label} = {idx} out of range for axis "
                f"{AXIS_NAMES[spec.axis]} with {n_modes} modes"
            )
    shape = Polynomial3D(dict(spec.coefficients))
    mode_a = (spec.axis, spec.mode_a)
    mode_b = (spec.axis, spec.mode_b)
    if spec.calibrate_exchange is not None:
        drive = coupling.calibrate_amplitude(
            shape, solution, mode_a, mode_b,
            target_g0=0.5 * spec.calibrate_exchange, beta=spec.beta,
        )
    else:
        drive = coupling.DrivePolynomial(shape, spec.beta)
    g0, per_ion = coupling.coupling_strength(drive, solution, mode_a, mode_b)
    # per-ion terms that cancel by symmetry leave a rounding-level residue,
    # so compare against their magnitude rather than testing for exact zero
    scale = float(np.max(np.abs(per_ion))) if len(per_ion) else 0.0
    if abs(g0) <= 1e-12 * scale or g0 == 0.0:
        raise ConfigurationError(
            "drive profile does not couple the requested mode pair "
            "(selection rule: zero overlap)"
        )
    if g0 < 0.0:
        # Sign is a mode-vector phase convention; fold it into the drive
        # phase origin so pulse areas stay positive.
        g0, per_ion = -g0, -per_ion
    resonance = coupling.resonance_frequency(solution, mode_a, mode_b)
    drive_freq = spec.frequency if spec.frequency is not None else resonance
    return _PairContext(
        solution, drive, float(g0), per_ion, resonance,
        drive_freq, coupling.detuning(drive_freq, resonance),
    )


def _noise_model(spec: cfg.NoiseSpec | None, offset: int = 0) -> NoiseModel | None:
    """Heating/dephasing rates keyed by simulation subsystem index.

    ``offset`` shifts the mode indices for layouts where the spin comes
    first (the interferometric fringe experiment).
    """
    if spec is None:
        return None
    order = {"alternating": 0, "stretch": 1}
    heating = {order[n] + offset: r for n, r in spec.heating if r != 0.0}
    dephasing = {order[n] + offset: r for n, r in spec.dephasing if r != 0.0}
    if not heating and not dephasing:
        return None
    return NoiseModel(heating_rates=heating, dephasing_rates=dephasing)


def _series_columns(series: sequence.ScanSeries) -> list[Column]:
    cols = [Column(series.x_name, series.x_unit, [float(v) for v in series.x])]
    for name, values in series.columns.items():
        cols.append(Column(name, "1", [float(v) for v in values]))
    return cols


# ---------------------------------------------------------------------------
# experiment implementations


def _run_modes(config: cfg.RunConfig):
    solution = _crystal_solution(config.crystal)
    n_ions = solution.config.n_ions
    axis_col, mode_col, label_col = [], [], []
    freq_col, cyc_col = [], []
    xi_cols = [[] for _ in range(n_ions)]
    axial_labels = ("in_phase", "stretch", "alternating")
    for axis in range(3):
        freqs = solution.frequencies[axis]
        xi = solution.participations[axis]
        for m in range(len(freqs)):
            axis_col.append(AXIS_NAMES[axis])
            mode_col.append(m)
            if axis == 2 and n_ions == 3:
                label_col.append(axial_labels[m])
            else:
                label_col.append(f"{AXIS_NAMES[axis]}{m}")
            freq_col.append(float(freqs[m]))
            cyc_col.append(angular_to_cycles(float(freqs[m]), "MHz"))
            for i in range(n_ions):
                xi_cols[i].append(float(xi[i, m]))
    columns = [
        Column("axis", "", axis_col),
        Column("mode", "1", mode_col),
        Column("label", "", label_col),
        Column("frequency", "rad/s", freq_col),
        Column("frequency_cyc", "MHz", cyc_col),
    ]
    for i in range(n_ions):
        columns.append(Column(f"xi_ion{i}", "1", xi_cols[i]))
    results = {
        "species": [s.name for s in config.crystal.species],
        "positions": solution.positions[:, 2],
        "gradient_residual": solution.gradient_residual,
        "axis_purity": solution.axis_purity,
    }
    return columns, results


def _run_couple(config: cfg.RunConfig):
    ctx = _pair_context(config)
    columns = [
        Column("g0", "rad/s", [ctx.g0]),
        Column("omega_c", "rad/s", [coupling.exchange_rate(ctx.g0)]),
        Column("resonance", "rad/s", [ctx.resonance]),
        Column("drive_frequency", "rad/s", [ctx.drive_frequency]),
        Column("detuning", "rad/s", [ctx.detuning]),
        Column("beta", "1", [config.drive.beta]),
        Column("swap_time", "s", [math.pi / (2.0 * ctx.g0)]),
    ]
    for i, g in enumerate(ctx.per_ion):
        columns.append(Column(f"g_ion{i}", "rad/s", [float(g)]))
    results = {
        "omega_c_khz": angular_to_cycles(coupling.exchange_rate(ctx.g0), "kHz"),
        "resonance_mhz": angular_to_cycles(ctx.resonance, "MHz"),
    }
    return columns, results


def _run_scan_freq(config: cfg.RunConfig):
    ctx = _pair_context(config)
    exp = config.experiment
    area = exp.duration if exp.duration is not None else math.pi / (2.0 * ctx.g0)
    ramp = config.drive.ramp_time
    envelope = coupling.PulseEnvelope.for_area(area, ramp) if ramp > 0.0 else None
    series = sequence.scan_frequency(
        np.asarray(exp.grid),
        ctx.g0,
        ctx.resonance,
        duration=None if envelope is not None else area,
        envelope=envelope,
        phase=config.drive.phase,
        noise=_noise_model(config.noise),
        cutoff=exp.cutoff or 4,
    )
    results = {"g0": ctx.g0, "resonance": ctx.resonance, "pulse_area": area}
    return _series_columns(series), results


def _run_scan_time(config: cfg.RunConfig):
    ctx = _pair_context(config)
    exp = config.experiment
    series = sequence.scan_duration(
        np.asarray(exp.grid),
        ctx.g0,
        detuning=ctx.detuning,
        ramp_time=config.drive.ramp_time,
        phase=config.drive.phase,
        noise=_noise_model(config.noise),
        cutoff=exp.cutoff or 4,
    )
    results = {"g0": ctx.g0, "detuning": ctx.detuning}
    return _series_columns(series), results


def _run_hom(config: cfg.RunConfig):
    ctx = _pair_context(config)
    exp = config.experiment
    initial = {"10": (1, 0), "11": (1, 1)}[exp.initial]
    series = sequence.hom_interference(
        initial,
        exp.scan,
        np.asarray(exp.grid),
        ctx.g0,
        drive_phase=config.drive.phase,
        ramp_time=config.drive.ramp_time,
        noise=_noise_model(config.noise),
        cutoff=exp.cutoff or 3,
    )
    results = {"g0": ctx.g0, "initial": exp.initial,
               "beamsplitter_area": math.pi / (4.0 * ctx.g0)}
    return _series_columns(series), results


def _run_ramsey(config: cfg.RunConfig):
    ctx = _pair_context(config)
    exp = config.experiment
    series = sequence.ramsey_experiment(
        exp.variant,
        np.asarray(exp.grid),
        ctx.g0,
        window=exp.window,
        swap_ramp=config.drive.ramp_time,
        noise=_noise_model(config.noise, offset=1),  # spin is subsystem 0
        cutoff=exp.cutoff or 3,
    )
    results = {"g0": ctx.g0, "variant": exp.variant, "window": exp.window}
    return _series_columns(series), results


def _run_swap_decay(config: cfg.RunConfig):
    ctx = _pair_context(config)
    exp = config.experiment
    decay = sequence.swap_fidelity_decay(
        exp.max_swaps or 15,
        ctx.g0,
        duration=exp.duration,
        ramp_time=config.drive.ramp_time,
        noise=_noise_model(config.noise),
        cutoff=exp.cutoff or 5,
    )
    columns = [
        Column("swap_count", "1", [int(m) for m in decay.swap_counts]),
        Column("fidelity", "1", [float(f) for f in decay.fidelities]),
    ]
    results = {
        "epsilon": {"value": decay.epsilon, "sigma": decay.sigma, "unit": "1"},
        "swap_duration": exp.duration if exp.duration is not None
        else math.pi / (2.0 * ctx.g0),
    }
    return columns, results


def _run_qnd(config: cfg.RunConfig):
    ctx = _pair_context(config)
    exp = config.experiment
    noise_spec = config.noise
    if exp.ideal:
        protocol = qnd.ProtocolConfig.ideal(g0=ctx.g0, swap_ramp=config.drive.ramp_time)
    else:
        protocol = qnd.ProtocolConfig(
            g0=ctx.g0,
            swap_ramp=config.drive.ramp_time,
            readout_flip=noise_spec.readout_flip if noise_spec else 0.0,
            alternating_kick=noise_spec.recoil_kick if noise_spec else 0.0,
        )
    if exp.cutoff is not None:
        protocol = replace(protocol, cutoff=exp.cutoff)
    variant = {
        "zero-to-dark": qnd.ZERO_TO_DARK,
        "zero-to-bright": qnd.ZERO_TO_BRIGHT,
    }[exp.variant]
    nbar0 = exp.initial_nbar if exp.initial_nbar is not None else protocol.recool_nbar
    rng = cfg.rng_stream(exp.seed, "qnd")
    series = qnd.run_repeated(
        nbar0, variant, exp.rounds, exp.trials, rng,
        noise=None if exp.ideal else _noise_model(noise_spec),
        config=protocol,
    )
    stats = qnd.post_select(series)
    columns = [
        Column("rounds", "1", [stats.rounds]),
        Column("trials", "1", [stats.trials]),
        Column("retained_fraction", "1", [stats.retained]),
        Column("discard_fraction", "1", [stats.discard]),
        Column("p0", "1", [stats.p0]),
        Column("p1", "1", [stats.p1]),
    ]
    if stats.majority_dark is not None:
        columns.append(Column("majority_dark", "1", [stats.majority_dark]))
    for key in ("unconditioned", "all_dark", "all_bright", "majority_dark"):
        if key in stats.nbar:
            columns.append(Column(f"nbar_{key}", "quanta", [stats.nbar[key]]))
    results = {
        "variant": exp.variant,
        "initial_nbar": nbar0,
        "p0": stats.p0,
        "p1": stats.p1,
        "discard": stats.discard,
        "retained": stats.retained,
        "majority_dark": stats.majority_dark,
        "nbar": dict(stats.nbar),
    }
    return columns, results


def _run_design_voltages(config: cfg.RunConfig):
    exp = config.experiment
    spacing = exp.ion_spacing if exp.ion_spacing is not None else 0.35
    curvature = exp.curvature if exp.curvature is not None else 1.0
    basis, target = electrodes.synthetic_example(spacing, curvature)
    if exp.target is not None or exp.null_weight is not None:
        values = exp.target if exp.target is not None else (-curvature, 0.0, curvature)
        desired = (electrodes.CurvatureTarget("zz", tuple(values)),)
        weight = exp.null_weight if exp.null_weight is not None else 1.0
        target = electrodes.TargetSpec.with_standard_nulls(desired, weight=weight)
    solution = electrodes.solve_amplitudes(basis, target)
    report = electrodes.evaluate_solution(basis, solution.amplitudes, target)
    if not solution.feasible:
        warnings.warn(
            "requested curvatures are not exactly reachable; emitting the "
            f"closest solution (residual {solution.hard_residual:.3e})",
            UserWarning,
            stacklevel=2,
        )
    columns = [
        Column("electrode", "", list(basis.labels)),
        Column("amplitude", "V", [float(v) for v in solution.amplitudes]),
    ]
    results = {
        "feasible": solution.feasible,
        "hard_residual": solution.hard_residual,
        "desired_achieved": report.desired_achieved,
        "desired_error": report.desired_error,
        "worst_null": report.worst_null,
        "objective": report.objective,
        "null_dim": solution.null_dim,
        "soft_rank": solution.soft_rank,
    }
    return columns, results


_DISPATCH = {
    "modes": _run_modes,
    "couple": _run_couple,
    "scan-freq": _run_scan_freq,
    "scan-time": _run_scan_time,
    "hom": _run_hom,
    "ramsey": _run_ramsey,
    "swap-decay": _run_swap_decay,
    "qnd": _run_qnd,
    "design-voltages": _run_design_voltages,
}


def run(config: cfg.RunConfig) -> ResultBundle:
    """Execute the configured experiment and collect its outputs."""
    kind = config.experiment.kind
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        columns, results = _DISPATCH[kind](config)
    metadata = {
        "experiment": kind,
        "config_hash": cfg.config_hash(config),
        "seed": config.experiment.seed,
        "package": f"modecoupling {__version__}",
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "created": _created_stamp(),
    }
    notes = [f"{type(w.message).__name__}: {w.message}" for w in caught]
    return ResultBundle(kind, metadata, columns, _pyify(results), notes)


# ---------------------------------------------------------------------------
# serialization


def _cell(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def render_csv(bundle: ResultBundle) -> str:
    """Header plus one row per point; numeric columns carry [unit] tags."""
    header = ",".join(
        f"{c.name} [{c.unit}]" if c.unit else c.name for c in bundle.columns
    )
    lengths = {len(c.values) for c in bundle.columns}
    if len(lengths) > 1:
        raise RuntimeError("columns have mismatched lengths")
    rows = zip(*(c.values for c in bundle.columns))
    body = "\n".join(",".join(_cell(v) for v in row) for row in rows)
    return header + ("\n" + body if body else "") + "\n"


def render_json(bundle: ResultBundle) -> str:
    doc = {
        "metadata": bundle.metadata,
        "series": {
            c.name: {"unit": c.unit, "values": _pyify(c.values)}
            for c in bundle.columns
        },
        "results": bundle.results,
        "warnings": bundle.warnings,
    }
    return json.dumps(doc, indent=2) + "\n"


def emit(bundle: ResultBundle, directory: str | Path = ".",
         fmt: str = "csv", basename: str | None = None) -> Path:
    """Write the bundle to ``directory/basename.fmt`` and return the path."""
    if fmt not in ("csv", "json"):
        raise ConfigurationError(f"unknown output format {fmt!r}")
    stem = basename if basename else bundle.experiment
    out_dir = Path(directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{stem}.{fmt}"
    text = render_csv(bundle) if fmt == "csv" else render_json(bundle)
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modecoupling",
        description="Simulations of bilinearly coupled motional modes: "
        "mode structure, exchange dynamics, interference, repeated "
        "nondestructive readout, and drive-voltage design.",
    )
    sub = parser.add_subparsers(dest="experiment", required=True, metavar="experiment")
    helps = {
        "modes": "normal-mode frequencies and participation vectors",
        "couple": "coupling rate and resonance for the configured drive",
        "scan-freq": "population transfer versus drive frequency",
        "scan-time": "population transfer versus pulse area",
        "hom": "two-quantum interference scans",
        "ramsey": "motional coherence fringe with optional swaps",
        "swap-decay": "fidelity decay over repeated swaps",
        "qnd": "repeated nondestructive readout Monte Carlo",
        "design-voltages": "electrode amplitudes for target curvatures",
    }
    for kind in cfg.EXPERIMENT_KINDS:
        sp = sub.add_parser(kind, help=helps[kind])
        sp.add_argument("--config", required=True, help="TOML run configuration")
        sp.add_argument("--out", default=None, help="output directory override")
        sp.add_argument("--format", choices=("csv", "json"), default=None,
                        help="output format override")
        sp.add_argument("--seed", type=int, default=None,
                        help="64-bit seed override for stochastic runs")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
        return 2

    try:
        config = cfg.parse_config(text, seed=args.seed)
        if config.experiment.kind != args.experiment:
            raise ConfigurationError(
                f"config requests experiment '{config.experiment.kind}' but "
                f"the command line asked for '{args.experiment}'"
            )
    except (ConfigurationError, UnitError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        bundle = run(config)
    except (ConfigurationError, UnitError) as exc:
        # late validation (mode indices, selection rules) is still a
        # configuration problem, not a numerical one
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3

    out_dir = args.out if args.out is not None else config.output.directory
    fmt = args.format if args.format is not None else config.output.format
    path = emit(bundle, directory=out_dir, fmt=fmt, basename=config.output.basename)
    print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
