"""Pulse-sequence composition, scan experiments, and the standard fit models.

Experiments are ordered lists of pulse events applied to a ``JointState``.
Carrier and sideband pulses are exact unitaries, adiabatic transfer is an
incoherent population-moving channel, coupling pulses and delays integrate
the master equation, and detection recoil / recooling act on single-mode
marginals.  Scan helpers return a ``ScanSeries`` of named population
columns that the fit models consume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Union

import numpy as np
from scipy.linalg import expm
from scipy.optimize import least_squares

from . import coupling
from .coupling import PulseEnvelope
from .crystal import ConfigurationError, CrystalSolution
from .hilbert import (
    CouplingGenerator,
    JointState,
    Mode,
    NoiseModel,
    SpaceLayout,
    Spin,
    evolve,
    thermal_populations,
)

SPIN_DOWN = 0
SPIN_UP = 1


def _require_finite(**values: float) -> None:
    for name, v in values.items():
        if not math.isfinite(v):
            raise ConfigurationError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class Carrier:
    """Spin rotation R(theta, phi); modes untouched."""

    spin: int
    theta: float
    phi: float = 0.0

    def __post_init__(self) -> None:
        _require_finite(theta=self.theta, phi=self.phi)


@dataclass(frozen=True)
class Sideband:
    """Spin-motion rotation on one mode.

    order -1 couples |down, n> <-> |up, n-1> with rotation angle
    theta*sqrt(n); order +1 couples |down, n> <-> |up, n+1> with angle
    theta*sqrt(n+1).  theta = pi fully transfers the n = 1 (order -1)
    or n = 0 (order +1) pair.
    """

    spin: int
    mode: int
    theta: float
    phi: float = 0.0
    order: int = -1

    def __post_init__(self) -> None:
        _require_finite(theta=self.theta, phi=self.phi)
        if self.order not in (-1, 1):
            raise ConfigurationError(f"sideband order must be -1 or +1, got {self.order}")


@dataclass(frozen=True)
class RapTransfer:
    """Incoherent adiabatic transfer |down, n> -> |up, n -+ 1>.

    Moves the stated fraction of population for every occupied n the
    transfer can act on; the remainder stays in place with its coherences
    to other states discarded (the channel is fully incoherent on the
    affected subspace).
    """

    spin: int
    mode: int
    direction: int = -1
    fidelity: float = 1.0

    def __post_init__(self) -> None:
        if self.direction not in (-1, 1):
            raise ConfigurationError(f"direction must be -1 or +1, got {self.direction}")
        if not 0.0 <= self.fidelity <= 1.0:
            raise ConfigurationError(f"fidelity must lie in [0, 1], got {self.fidelity}")


@dataclass(frozen=True)
class CouplingPulse:
    """Parametric exchange pulse driven for ``duration`` seconds of wall time."""

    generator: CouplingGenerator
    duration: float | None = None
    envelope: PulseEnvelope | None = None

    def __post_init__(self) -> None:
        if self.duration is None and self.envelope is None:
            raise ConfigurationError("coupling pulse needs a duration or an envelope")
        if self.duration is not None and self.duration < 0.0:
            raise ConfigurationError("duration must be non-negative")

    @property
    def wall_time(self) -> float:
        if self.duration is not None:
            return self.duration
        return self.envelope.total_duration


@dataclass(frozen=True)
class Delay:
    duration: float

    def __post_init__(self) -> None:
        if self.duration < 0.0:
            raise ConfigurationError("duration must be non-negative")


@dataclass(frozen=True)
class Scatter:
    """Photon-recoil kick from resonant scattering on one ion.

    Each mode m picks up a mean-occupation increase
    kappa * photons * xi(ion, m)^2; a mode the ion does not participate in
    is left exactly untouched.
    """

    ion: int
    photons: float

    def __post_init__(self) -> None:
        if self.photons < 0.0:
            raise ConfigurationError("photon count must be non-negative")


@dataclass(frozen=True)
class Recool:
    """Replace one mode's marginal with a thermal state of the target nbar."""

    mode: int
    nbar: float

    def __post_init__(self) -> None:
        if self.nbar < 0.0:
            raise ConfigurationError("target nbar must be non-negative")


PulseEvent = Union[Carrier, Sideband, RapTransfer, CouplingPulse, Delay, Scatter, Recool]


@dataclass
class SequenceContext:
    """Shared environment for a pulse sequence.

    participations[i, k] is the participation of ion i in the mode at
    layout subsystem k (zero entries for spin subsystems); required only
    when Scatter events are used.  recoil is the kick constant kappa in
    quanta per photon per unit participation squared.
    """

    noise: NoiseModel | None = None
    recoil: float = 0.0
    participations: np.ndarray | None = None


# wall time over which a Scatter kick is integrated; only the product
# rate * time matters, the window just has to keep the stepper cheap
SCATTER_WINDOW = 1e-5


def _spin_rotation(theta: float, phi: float) -> np.ndarray:
    c = math.cos(0.5 * theta)
    s = math.sin(0.5 * theta)
    return np.array(
        [[c, -1j * np.exp(-1j * phi) * s],
         [-1j * np.exp(1j * phi) * s, c]],
        dtype=complex,
    )


def _check_spin(layout: SpaceLayout, k: int) -> None:
    if not 0 <= k < len(layout.subsystems) or not isinstance(layout.subsystems[k], Spin):
        raise ConfigurationError(f"subsystem {k} is not a spin of this layout")


def _check_mode(layout: SpaceLayout, k: int) -> None:
    if not 0 <= k < len(layout.subsystems) or not isinstance(layout.subsystems[k], Mode):
        raise ConfigurationError(f"subsystem {k} is not a mode of this layout")


def _apply_unitary(state: JointState, u: np.ndarray) -> JointState:
    rho = u @ state.rho @ u.conj().T
    return JointState(state.layout, rho, check=False)


def _sideband_unitary(layout: SpaceLayout, event: Sideband) -> np.ndarray:
    raise_spin = np.zeros((2, 2), dtype=complex)
    raise_spin[SPIN_UP, SPIN_DOWN] = 1.0
    s_plus = layout.embed(raise_spin, event.spin)
    a = layout.destroy(event.mode)
    motion = a if event.order == -1 else a.conj().T
    half = np.exp(1j * event.phi) * (s_plus @ motion)
    gen = half + half.conj().T
    return expm(-0.5j * event.theta * gen)


def _rap_channel(state: JointState, event: RapTransfer) -> JointState:
    layout = state.layout
    cutoff = layout.subsystems[event.mode].cutoff
    moves: list[tuple[int, int]] = []
    for i in range(layout.dim):
        occ = list(layout.occupations(i))
        if occ[event.spin] != SPIN_DOWN:
            continue
        n = occ[event.mode]
        n_new = n + event.direction
        if not 0 <= n_new <= cutoff:
            continue
        occ[event.spin] = SPIN_UP
        occ[event.mode] = n_new
        moves.append((i, layout.index(tuple(occ))))
    affected = [i for i, _ in moves]
    keep = np.setdiff1d(np.arange(layout.dim), affected)
    rho = state.rho
    out = np.zeros_like(rho)
    out[np.ix_(keep, keep)] = rho[np.ix_(keep, keep)]
    f = event.fidelity
    for src, dst in moves:
        p = rho[src, src].real
        out[dst, dst] += f * p
        out[src, src] += (1.0 - f) * p
    return JointState(layout, out, check=False)


def apply_event(
    state: JointState, event: PulseEvent, context: SequenceContext | None = None
) -> JointState:
    """Apply one pulse event and return the new state."""
    layout = state.layout
    ctx = context or SequenceContext()

    if isinstance(event, Carrier):
        _check_spin(layout, event.spin)
        u = layout.embed(_spin_rotation(event.theta, event.phi), event.spin)
        return _apply_unitary(state, u)

    if isinstance(event, Sideband):
        _check_spin(layout, event.spin)
        _check_mode(layout, event.mode)
        return _apply_unitary(state, _sideband_unitary(layout, event))

    if isinstance(event, RapTransfer):
        _check_spin(layout, event.spin)
        _check_mode(layout, event.mode)
        return _rap_channel(state, event)

    if isinstance(event, CouplingPulse):
        return evolve(state, event.generator, ctx.noise,
                      envelope=event.envelope, duration=event.wall_time)

    if isinstance(event, Delay):
        if ctx.noise is None or event.duration == 0.0:
            return JointState(layout, state.rho.copy(), check=False)
        return evolve(state, None, ctx.noise, duration=event.duration)

    if isinstance(event, Scatter):
        if ctx.participations is None:
            raise ConfigurationError("Scatter requires participations in the context")
        xi = np.asarray(ctx.participations, dtype=float)
        if xi.ndim != 2 or xi.shape[1] != len(layout.subsystems):
            raise ConfigurationError(
                "participations must have one column per layout subsystem"
            )
        if not 0 <= event.ion < xi.shape[0]:
            raise ConfigurationError(f"no participation row for ion {event.ion}")
        rates = {}
        for k in layout.mode_indices:
            dn = ctx.recoil * event.photons * xi[event.ion, k] ** 2
            if dn > 0.0:
                rates[k] = dn / SCATTER_WINDOW
        if not rates:
            return JointState(layout, state.rho.copy(), check=False)
        return evolve(state, None, NoiseModel(heating_rates=rates),
                      duration=SCATTER_WINDOW)

    if isinstance(event, Recool):
        _check_mode(layout, event.mode)
        dim = layout.subsystems[event.mode].dim
        marginal = np.diag(thermal_populations(event.nbar, dim)).astype(complex)
        return state.replace_marginal(event.mode, marginal)

    raise ConfigurationError(f"unknown pulse event {event!r}")


def coupling_event_from_drive(
    drive: coupling.CouplingDrive,
    solution: CrystalSolution,
    mode_a: coupling.ModeRef,
    mode_b: coupling.ModeRef,
    subsystems: tuple[int, int] = (0, 1),
    duration: float | None = None,
) -> CouplingPulse:
    """Reduce a lab-frame drive to a rotating-frame coupling pulse.

    ``subsystems`` names the layout positions holding the (a, b) modes.
    """
    g0, _ = coupling.coupling_strength(drive.profile, solution, mode_a, mode_b)
    resonance = coupling.resonance_frequency(solution, mode_a, mode_b)
    gen = CouplingGenerator(
        g0=g0,
        phase=drive.phase,
        detuning=coupling.detuning(drive.frequency, resonance),
        modes=subsystems,
    )
    return CouplingPulse(gen, duration=duration, envelope=drive.envelope)


# ---------------------------------------------------------------------------
# scripts


@dataclass(frozen=True)
class Measurement:
    """What to report at the end of a script.

    kind "spin" reports P(down) of the one listed subsystem; kind "joint"
    reports the joint number populations of the listed modes up to max_n
    plus the remaining probability as "leakage".
    """

    kind: str
    subsystems: tuple[int, ...]
    max_n: int = 2

    def __post_init__(self) -> None:
        if self.kind not in ("spin", "joint"):
            raise ConfigurationError(f"unknown measurement kind {self.kind!r}")
        if self.kind == "spin" and len(self.subsystems) != 1:
            raise ConfigurationError("spin measurement takes exactly one subsystem")
        if self.max_n < 0:
            raise ConfigurationError("max_n must be non-negative")


@dataclass(frozen=True)
class ExperimentScript:
    """An initial occupation, an ordered event list, and a measurement."""

    layout: SpaceLayout
    initial: tuple[int, ...]
    events: tuple[PulseEvent, ...]
    measure: Measurement
    trials: int = 0
    seed: int | None = None

    def __post_init__(self) -> None:
        self.layout.index(self.initial)  # validates the occupation
        for k in self.measure.subsystems:
            if not 0 <= k < len(self.layout.subsystems):
                raise ConfigurationError(f"measurement references subsystem {k}")
        if self.trials < 0:
            raise ConfigurationError("trials must be non-negative")


def _joint_populations(
    state: JointState, subsystems: tuple[int, ...], max_n: int
) -> dict[str, float]:
    axes = [2 + i for i in range(len(state.layout.subsystems))]
    dims = state.layout.dims
    probs = np.real(np.diag(state.rho)).reshape(dims)
    out: dict[str, float] = {}
    total = 0.0
    for occ in product(range(max_n + 1), repeat=len(subsystems)):
        sel = [slice(None)] * len(dims)
        ok = True
        for k, n in zip(subsystems, occ):
            if n >= dims[k]:
                ok = False
                break
            sel[k] = n
        p = float(np.sum(probs[tuple(sel)])) if ok else 0.0
        out["p" + "".join(str(n) for n in occ)] = p
        total += p
    out["leakage"] = max(0.0, float(np.sum(probs)) - total)
    return out


def run_script(
    script: ExperimentScript, context: SequenceContext | None = None
) -> dict[str, float]:
    """Execute a script and return measured probabilities.

    With trials > 0 the exact outcome distribution is sampled (multinomial
    for joint measurements, binomial for spin) and observed frequencies are
    returned instead of the underlying probabilities.
    """
    state = JointState.fock(script.layout, script.initial)
    for event in script.events:
        state = apply_event(state, event, context)

    if script.measure.kind == "spin":
        k = script.measure.subsystems[0]
        p = float(np.real(state.marginal(k)[SPIN_DOWN, SPIN_DOWN]))
        if script.trials > 0:
            rng = np.random.default_rng(script.seed)
            p = rng.binomial(script.trials, min(max(p, 0.0), 1.0)) / script.trials
        return {"p_down": p}

    probs = _joint_populations(state, script.measure.subsystems, script.measure.max_n)
    if script.trials > 0:
        rng = np.random.default_rng(script.seed)
        names = list(probs)
        weights = np.clip([probs[n] for n in names], 0.0, None)
        weights = weights / np.sum(weights)
        counts = rng.multinomial(script.trials, weights)
        probs = {n: c / script.trials for n, c in zip(names, counts)}
    return probs


# ---------------------------------------------------------------------------
# scans


@dataclass
class ScanSeries:
    """A swept coordinate and named population columns of equal length."""

    x: np.ndarray
    x_name: str
    x_unit: str
    columns: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=float)
        for name, col in self.columns.items():
            self.columns[name] = np.asarray(col, dtype=float)
            if self.columns[name].shape != self.x.shape:
                raise ConfigurationError(f"column {name!r} length mismatch")


def _two_mode_layout(cutoff: int) -> SpaceLayout:
    return SpaceLayout((Mode(cutoff), Mode(cutoff)))


def scan_frequency(
    frequencies: np.ndarray,
    g0: float,
    resonance: float,
    duration: float | None = None,
    envelope: PulseEnvelope | None = None,
    phase: float = 0.0,
    noise: NoiseModel | None = None,
    cutoff: int = 4,
) -> ScanSeries:
    """Drive-frequency scan of a fixed-length exchange pulse on |1, 0>.

    Returns P(n_a = 1) and P(n_b = 1) versus the drive angular frequency;
    the transfer dip/peak sits at ``resonance``.
    """
    if duration is None and envelope is None:
        raise ConfigurationError("scan needs a pulse duration or an envelope")
    wall = duration if duration is not None else envelope.total_duration
    layout = _two_mode_layout(cutoff)
    start = JointState.fock(layout, (1, 0))
    freqs = np.asarray(frequencies, dtype=float)
    p_a = np.empty_like(freqs)
    p_b = np.empty_like(freqs)
    for i, w in enumerate(freqs):
        gen = CouplingGenerator(g0=g0, phase=phase, detuning=w - resonance)
        final = evolve(start, gen, noise, envelope=envelope, duration=wall)
        p_a[i] = final.number_distribution(0)[1]
        p_b[i] = final.number_distribution(1)[1]
    return ScanSeries(freqs, "drive_frequency", "rad/s", {"p_a1": p_a, "p_b1": p_b})


def scan_duration(
    areas: np.ndarray,
    g0: float,
    detuning: float = 0.0,
    ramp_time: float = 0.0,
    phase: float = 0.0,
    noise: NoiseModel | None = None,
    cutoff: int = 4,
) -> ScanSeries:
    """Pulse-area scan of the exchange on |1, 0> at fixed detuning.

    Each point drives an effective area tau (a square pulse, or a ramped
    envelope of the same area when ramp_time > 0), so noise-free transfer
    follows sin^2(g0 tau) exactly.
    """
    layout = _two_mode_layout(cutoff)
    start = JointState.fock(layout, (1, 0))
    taus = np.asarray(areas, dtype=float)
    p_a = np.empty_like(taus)
    p_b = np.empty_like(taus)
    for i, tau in enumerate(taus):
        env = None if ramp_time == 0.0 else PulseEnvelope.for_area(tau, ramp_time)
        wall = tau if env is None else env.total_duration
        gen = CouplingGenerator(g0=g0, phase=phase, detuning=detuning)
        final = evolve(start, gen, noise, envelope=env, duration=wall)
        p_a[i] = final.number_distribution(0)[1]
        p_b[i] = final.number_distribution(1)[1]
    return ScanSeries(taus, "pulse_area", "s", {"p_a1": p_a, "p_b1": p_b})


def hom_interference(
    initial: tuple[int, int],
    scan: str,
    grid: np.ndarray,
    g0: float,
    drive_phase: float = 0.0,
    ramp_time: float = 0.0,
    noise: NoiseModel | None = None,
    cutoff: int = 3,
) -> ScanSeries:
    """Two-mode interference scans, returning all joint populations n <= 2.

    scan "duration" sweeps the pulse area from the given initial state;
    scan "phase" applies a fixed 50/50 beamsplitter pulse (area pi/(4 g0)),
    then a second one whose drive phase is offset by the scanned angle.
    """
    if initial not in ((1, 0), (1, 1)):
        raise ConfigurationError("initial state must be (1, 0) or (1, 1)")
    if scan not in ("duration", "phase"):
        raise ConfigurationError("scan must be 'duration' or 'phase'")
    if cutoff < 3:
        raise ConfigurationError("interference scans need cutoff >= 3")
    layout = _two_mode_layout(cutoff)
    start = JointState.fock(layout, initial)
    xs = np.asarray(grid, dtype=float)
    names = ["p" + "".join(map(str, occ)) for occ in product(range(3), repeat=2)]
    cols = {name: np.empty_like(xs) for name in names + ["leakage"]}

    def record(i: int, state: JointState) -> None:
        pops = _joint_populations(state, (0, 1), 2)
        for name in cols:
            cols[name][i] = pops[name]

    if scan == "duration":
        for i, tau in enumerate(xs):
            env = None if ramp_time == 0.0 else PulseEnvelope.for_area(tau, ramp_time)
            wall = tau if env is None else env.total_duration
            gen = CouplingGenerator(g0=g0, phase=drive_phase)
            record(i, evolve(start, gen, noise, envelope=env, duration=wall))
        return ScanSeries(xs, "pulse_area", "s", cols)

    bs_area = math.pi / (4.0 * g0)
    env = None if ramp_time == 0.0 else PulseEnvelope.for_area(bs_area, ramp_time)
    wall = bs_area if env is None else env.total_duration
    first = evolve(start, CouplingGenerator(g0=g0, phase=drive_phase),
                   noise, envelope=env, duration=wall)
    for i, phi in enumerate(xs):
        gen = CouplingGenerator(g0=g0, phase=drive_phase + phi)
        record(i, evolve(first, gen, noise, envelope=env, duration=wall))
    return ScanSeries(xs, "relative_phase", "rad", cols)


def ramsey_experiment(
    variant: str,
    phases: np.ndarray,
    g0: float,
    window: float | None = None,
    swap_ramp: float = 0.0,
    noise: NoiseModel | None = None,
    cutoff: int = 3,
) -> ScanSeries:
    """Motional interference fringe P(down) versus the analysis phase.

    A carrier pi/2 plus an adding-sideband pi pulse put one quantum of
    superposition (|0> + |1>)/sqrt(2) into mode a with the spin parked in
    the dark upper state.  The variant then occupies a fixed wall-time
    window: "delay" waits in place, "swap" moves the quantum to mode b and
    waits, "double-swap" stores it in mode b and retrieves it.  A closing
    sideband pulse of scanned phase and a fixed pi/2 analysis pulse map the
    surviving coherence onto the spin.  Pulse phases are chosen so the
    noise-free delay fringe is exactly (1 + sin(phi))/2; the double-swap
    fringe is shifted by pi, and the single-swap variant is flat at 1/2.
    """
    if variant not in ("delay", "swap", "double-swap"):
        raise ConfigurationError(f"unknown ramsey variant {variant!r}")
    swap_area = math.pi / (2.0 * g0)
    swap_env = None if swap_ramp == 0.0 else PulseEnvelope.for_area(swap_area, swap_ramp)
    swap_wall = swap_area if swap_env is None else swap_env.total_duration
    n_swaps = {"delay": 0, "swap": 1, "double-swap": 2}[variant]
    if window is None:
        window = 2.0 * swap_wall
    wait = window - n_swaps * swap_wall
    if wait < -1e-15:
        raise ConfigurationError("window shorter than the swap pulses it must hold")
    wait = max(wait, 0.0)

    layout = SpaceLayout((Spin(), Mode(cutoff), Mode(cutoff)))
    gen = CouplingGenerator(g0=g0, modes=(1, 2))
    swap = CouplingPulse(gen, duration=None if swap_env else swap_wall, envelope=swap_env)
    if variant == "delay":
        middle: tuple[PulseEvent, ...] = (Delay(wait),)
    elif variant == "swap":
        middle = (swap, Delay(wait))
    else:
        middle = (swap, Delay(wait), swap)

    ctx = SequenceContext(noise=noise)
    prep = JointState.fock(layout, (SPIN_DOWN, 0, 0))
    for event in (Carrier(0, math.pi / 2.0, 0.0), Sideband(0, 1, math.pi, 0.0, order=+1)):
        prep = apply_event(prep, event, ctx)
    for event in middle:
        prep = apply_event(prep, event, ctx)

    xs = np.asarray(phases, dtype=float)
    p_down = np.empty_like(xs)
    for i, phi in enumerate(xs):
        state = apply_event(prep, Sideband(0, 1, math.pi, phi, order=+1), ctx)
        state = apply_event(state, Carrier(0, math.pi / 2.0, math.pi / 2.0), ctx)
        p_down[i] = float(np.real(state.marginal(0)[SPIN_DOWN, SPIN_DOWN]))
    return ScanSeries(xs, "analysis_phase", "rad", {"p_down": p_down})


@dataclass
class SwapDecayResult:
    """Per-swap error estimate from a repeated-swap fidelity decay."""

    epsilon: float
    sigma: float
    swap_counts: np.ndarray
    fidelities: np.ndarray


def swap_fidelity_decay(
    m_max: int,
    g0: float,
    duration: float | None = None,
    ramp_time: float = 0.0,
    noise: NoiseModel | None = None,
    cutoff: int = 5,
) -> SwapDecayResult:
    """Repeated full swaps on |1, 0>; fit F(M) = (1 - eps)^M.

    The fidelity after M swaps is the population of the ideally-swapped
    target basis state (the classical fidelity of the joint number
    distribution against a point distribution).  The fit is a linear
    regression of ln F through the origin, which is exact for the model.
    """
    if m_max < 2:
        raise ConfigurationError("need at least two swaps to fit a decay")
    area = math.pi / (2.0 * g0) if duration is None else duration
    env = None if ramp_time == 0.0 else PulseEnvelope.for_area(area, ramp_time)
    wall = area if env is None else env.total_duration
    layout = _two_mode_layout(cutoff)
    state = JointState.fock(layout, (1, 0))
    gen = CouplingGenerator(g0=g0)
    fid = np.empty(m_max)
    for m in range(1, m_max + 1):
        state = evolve(state, gen, noise, envelope=env, duration=wall)
        target = (0, 1) if m % 2 else (1, 0)
        fid[m - 1] = state.population(target)
    counts = np.arange(1, m_max + 1, dtype=float)
    good = fid > 0.0
    if not np.all(good):
        raise ConfigurationError("fidelity reached zero; reduce m_max or noise")
    logf = np.log(fid)
    slope = float(np.dot(counts, logf) / np.dot(counts, counts))
    resid = logf - slope * counts
    dof = max(len(counts) - 1, 1)
    sigma_slope = math.sqrt(float(np.dot(resid, resid)) / dof / float(np.dot(counts, counts)))
    eps = -math.expm1(slope)
    return SwapDecayResult(eps, math.exp(slope) * sigma_slope, counts, fid)


# ---------------------------------------------------------------------------
# fit models


class FitError(RuntimeError):
    """Raised when a fit fails to converge; carries the best point found."""

    def __init__(self, message: str, result: "FitResult | None" = None):
        super().__init__(message)
        self.result = result


@dataclass
class FitResult:
    model: str
    params: dict[str, float]
    sigma: dict[str, float]
    residual_norm: float
    at_bound: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for name, s in self.sigma.items():
            if not s >= 0.0:
                raise ValueError(f"uncertainty for {name} must be >= 0, got {s}")


def _lineshape(p: np.ndarray, w: np.ndarray, duration: float) -> np.ndarray:
    amp, rabi, center, off = p
    d = w - center
    om2 = rabi * rabi + d * d
    with np.errstate(invalid="ignore", divide="ignore"):
        val = amp * rabi * rabi * np.sin(0.5 * np.sqrt(om2) * duration) ** 2 / om2
    return np.where(om2 > 0.0, val, 0.0) + off


def _exchange(p: np.ndarray, tau: np.ndarray) -> np.ndarray:
    amp, rate, phase, decay, off = p
    return amp * np.sin(rate * tau + phase) * np.exp(-decay * tau) + off


def _fringe(p: np.ndarray, phi: np.ndarray) -> np.ndarray:
    contrast, off = p
    return contrast * np.sin(phi) + off


_LINESHAPE_PARAMS = ("amplitude", "rabi_rate", "center", "offset")
_EXCHANGE_PARAMS = ("amplitude", "rate", "phase", "decay_rate", "offset")
_FRINGE_PARAMS = ("contrast", "offset")

# a fitted decay shallower than this over the full window counts as none
DECAY_FLAG_LEVEL = 1e-6


def _seed_lineshape(x: np.ndarray, y: np.ndarray, duration: float) -> np.ndarray:
    edge = 0.5 * (np.mean(y[:2]) + np.mean(y[-2:]))
    k = int(np.argmax(np.abs(y - edge)))
    center = x[k]
    amp = y[k] - edge
    span = x[-1] - x[0]
    candidates = [c * math.pi / duration for c in (0.25, 0.5, 1.0, 2.0)]
    candidates += [span / 8.0, span / 4.0]
    best, best_sse = None, np.inf
    for rabi in candidates:
        p = np.array([amp, rabi, center, edge])
        sse = float(np.sum((_lineshape(p, x, duration) - y) ** 2))
        if sse < best_sse:
            best, best_sse = p, sse
    return best


def _seed_exchange(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    span = x[-1] - x[0]
    n = len(x)
    freqs = np.linspace(0.5 * math.pi / span, 0.9 * math.pi * n / span, 200)
    ones = np.ones_like(x)
    best, best_sse = None, np.inf
    for w in freqs:
        design = np.column_stack([np.sin(w * x), np.cos(w * x), ones])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        sse = float(np.sum((design @ coef - y) ** 2))
        if sse < best_sse:
            a, b, off = coef
            best = np.array([math.hypot(a, b), w, math.atan2(b, a), 0.0, off])
            best_sse = sse
    return best


def _refine(
    residual, p0: np.ndarray, n_points: int
) -> tuple[np.ndarray, np.ndarray, float, bool]:
    res = least_squares(residual, p0, method="lm", xtol=1e-8)
    dof = n_points - len(p0)
    s2 = 2.0 * res.cost / dof if dof > 0 else 0.0
    cov = np.linalg.pinv(res.jac.T @ res.jac) * s2
    sigma = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return res.x, sigma, float(np.linalg.norm(res.fun)), bool(res.success)


def fit_model(
    x: np.ndarray,
    y: np.ndarray,
    model: str,
    duration: float | None = None,
) -> FitResult:
    """Nonlinear least squares for the three standard data models.

    "lineshape" is the detuned-transfer profile
    A r^2 sin^2(sqrt(r^2 + (w - w0)^2) T / 2) / (r^2 + (w - w0)^2) + P0
    over drive frequency (requires the pulse duration T); "exchange" is
    A sin(rate tau + phase) exp(-decay tau) + off over pulse area;
    "fringe" is B sin(phi) + off.  Seeds come from a coarse grid or linear
    regression, refined by Levenberg-Marquardt; relative step below 1e-8
    counts as converged.  A non-positive fitted decay is pinned to zero and
    reported in ``at_bound``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ConfigurationError("x and y must be matching 1-d arrays")

    if model == "lineshape":
        if duration is None:
            raise ConfigurationError("lineshape fit requires the pulse duration")
        names = _LINESHAPE_PARAMS
        _check_points(len(x), len(names))
        p0 = _seed_lineshape(x, y, duration)
        popt, sig, rnorm, ok = _refine(lambda p: _lineshape(p, x, duration) - y,
                                       p0, len(x))
        popt[1] = abs(popt[1])  # rabi rate enters squared; report positive
        result = FitResult(model, dict(zip(names, popt)), dict(zip(names, sig)), rnorm)

    elif model == "exchange":
        names = _EXCHANGE_PARAMS
        _check_points(len(x), len(names))
        p0 = _seed_exchange(x, y)
        popt, sig, rnorm, ok = _refine(lambda p: _exchange(p, x) - y, p0, len(x))
        at_bound: tuple[str, ...] = ()
        if popt[3] < 0.0:
            fixed = [i for i in range(5) if i != 3]

            def pinned(q: np.ndarray) -> np.ndarray:
                full = np.zeros(5)
                full[fixed] = q
                return _exchange(full, x) - y

            sub, sub_sig, rnorm, ok = _refine(pinned, popt[fixed], len(x))
            popt = np.zeros(5)
            popt[fixed] = sub
            sig = np.zeros(5)
            sig[fixed] = sub_sig
            at_bound = ("decay_rate",)
        elif popt[3] * (x[-1] - x[0]) < DECAY_FLAG_LEVEL:
            at_bound = ("decay_rate",)
        if popt[0] < 0.0:  # canonical sign: positive amplitude
            popt[0] = -popt[0]
            popt[2] = math.remainder(popt[2] + math.pi, 2.0 * math.pi)
        result = FitResult(model, dict(zip(names, popt)), dict(zip(names, sig)),
                           rnorm, at_bound)

    elif model == "fringe":
        names = _FRINGE_PARAMS
        _check_points(len(x), len(names))
        design = np.column_stack([np.sin(x), np.ones_like(x)])
        p0, *_ = np.linalg.lstsq(design, y, rcond=None)
        popt, sig, rnorm, ok = _refine(lambda p: _fringe(p, x) - y, p0, len(x))
        result = FitResult(model, dict(zip(names, popt)), dict(zip(names, sig)), rnorm)

    else:
        raise ConfigurationError(f"unknown fit model {model!r}")

    if not ok:
        raise FitError(f"{model} fit did not converge", result)
    return result


def _check_points(n: int, n_params: int) -> None:
    if n < 2 * n_params:
        raise ConfigurationError(
            f"need at least {2 * n_params} points to fit {n_params} parameters, got {n}"
        )
