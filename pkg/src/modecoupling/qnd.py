"""Repeated nondestructive readout of a motional quantum.

One measurement round writes "is the alternating mode excited?" onto the
center ion's internal state with a number-selective phase gate, swaps the
motional state into the slow-heating stretch mode, detects and recools
while it is parked there, and swaps it back.  The module builds the exact
branch tree of projective outcomes for a sequence of rounds, samples
recorded outcomes through the fluorescence classifier, and evaluates
post-selection statistics and conditioned occupations.

The internal manifold is modeled with three levels: the two qubit states
plus the auxiliary transfer level that the gate's sideband leaks into for
two or more quanta.  Both qubit-up and the auxiliary level fluoresce, so
the bright/dark split is {up, aux} versus {down}.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from statistics import StatisticsError

import numpy as np
from scipy.linalg import expm

from . import presets, readout
from .coupling import PulseEnvelope
from .crystal import ConfigurationError
from .hilbert import (
    CouplingGenerator,
    JointState,
    LeakageWarning,
    Mode,
    NoiseModel,
    SpaceLayout,
    Spin,
    product_thermal,
    thermal_populations,
)
from .sequence import SCATTER_WINDOW, CouplingPulse, SequenceContext, apply_event

__all__ = [
    "DARK",
    "BRIGHT",
    "DisturbanceWarning",
    "MappingVariant",
    "ZERO_TO_DARK",
    "ZERO_TO_BRIGHT",
    "StageTimings",
    "ProtocolConfig",
    "default_noise",
    "protocol_layout",
    "initial_state",
    "cz_map",
    "free_evolution",
    "swap_modes",
    "detection_split",
    "run_round",
    "run_repeated",
    "OutcomeSeries",
    "PostSelectionStats",
    "post_select",
    "conditioned_nbar",
]

# Recorded / true outcome labels.
DARK = 0
BRIGHT = 1

# Internal levels of the detection ion.
SPIN_DOWN = 0
SPIN_UP = 1
SPIN_AUX = 2

# Subsystem slots in the protocol layout.
ALTERNATING = 0
STRETCH = 1
SPIN = 2

# Population above one quantum at which the phase gate stops being a clean
# two-outcome map (the sideband leaks sin^2(pi sqrt n) into the auxiliary
# level for n >= 2).
DISTURBANCE_TOL = 1e-9

# Branches below this Born probability are dropped from the tree.
_BRANCH_FLOOR = 1e-12


class DisturbanceWarning(UserWarning):
    """Input has weight above one quantum; the gate will disturb it."""


@dataclass(frozen=True)
class MappingVariant:
    """Phase of the closing Ramsey pulse; selects which number is dark.

    The recombining carrier is driven at ``phi2 + pi`` so the bright
    probability of a pure number state is (1 - cos(pi sqrt n) cos phi2)/2:
    phi2 = 0 sends |0> to dark and |1> to bright, phi2 = pi the reverse.
    """

    phi2: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.phi2 < 2.0 * math.pi:
            raise ConfigurationError("phi2 must lie in [0, 2 pi)")


ZERO_TO_DARK = MappingVariant(0.0)
ZERO_TO_BRIGHT = MappingVariant(math.pi)


@dataclass(frozen=True)
class StageTimings:
    """Wall-clock windows of one measurement round (seconds).

    The exchange pulses themselves take pi/(2 g0) plus the ramp; padding is
    split evenly around the swap pair and calibrated, together with the
    pulse time, to reproduce the measured occupation added by a full
    park-and-retrieve cycle.  Detection plus cooling happen while the state
    sits in the stretch mode.
    """

    mapping: float = 83e-6
    swap_padding: float = 230e-6
    detection: float = 1e-3
    cooling: float = 9e-3

    def __post_init__(self) -> None:
        for name in ("mapping", "swap_padding", "detection", "cooling"):
            if getattr(self, name) < 0.0:
                raise ConfigurationError(f"negative stage duration {name}")


@dataclass(frozen=True)
class ProtocolConfig:
    """Static knobs of the repeated-measurement protocol."""

    g0: float = presets.EXCHANGE_RATE / 2.0
    cutoff: int = 4
    swap_ramp: float = presets.RAMP_TIME
    timings: StageTimings = StageTimings()
    recool_nbar: float = presets.COOLED_NBAR["alternating"]
    stretch_nbar: float = presets.COOLED_NBAR["stretch"]
    alternating_kick: float = presets.DETECTION_RECOIL_NBAR
    stretch_kick: float = 0.0
    readout_flip: float = presets.READOUT_FLIP
    fluorescence: readout.FluorescenceModel | None = readout.MG_MODEL
    thresholds: readout.Thresholds = readout.MG_CUTS

    def __post_init__(self) -> None:
        if self.g0 <= 0.0:
            raise ConfigurationError("g0 must be positive")
        if self.cutoff < 3:
            raise ConfigurationError("protocol needs cutoff >= 3")
        for name in ("recool_nbar", "stretch_nbar", "alternating_kick",
                     "stretch_kick", "swap_ramp"):
            if getattr(self, name) < 0.0:
                raise ConfigurationError(f"{name} must be non-negative")
        if not 0.0 <= self.readout_flip <= 1.0:
            raise ConfigurationError("readout_flip must be a probability")

    @classmethod
    def ideal(cls, **overrides) -> "ProtocolConfig":
        """Mathematical reference: noiseless detection, zero-temperature
        ancilla junk.  (Warm junk costs ~4e-7 per round through the Fock
        cutoff when it exchanges with an excited state.)"""
        base = dict(alternating_kick=0.0, stretch_kick=0.0,
                    readout_flip=0.0, fluorescence=None,
                    recool_nbar=0.0, stretch_nbar=0.0)
        base.update(overrides)
        return cls(**base)


def default_noise() -> NoiseModel:
    """Ambient heating of the two motional slots at the measured rates."""
    return NoiseModel(heating_rates={
        ALTERNATING: presets.HEATING_RATES["alternating"],
        STRETCH: presets.HEATING_RATES["stretch"],
    })


def protocol_layout(cutoff: int = 4) -> SpaceLayout:
    return SpaceLayout((Mode(cutoff), Mode(cutoff), Spin(levels=3)))


def initial_state(populations, config: ProtocolConfig | None = None) -> JointState:
    """Alternating-mode input (thermal nbar or explicit number populations),
    stretch mode cold, detection ion in the dark qubit state."""
    config = config or ProtocolConfig()
    layout = protocol_layout(config.cutoff)
    state = product_thermal(layout, {STRETCH: config.stretch_nbar})
    dim = layout.dims[ALTERNATING]
    if np.ndim(populations) == 0:
        pops = thermal_populations(float(populations), dim)
    else:
        pops = np.asarray(populations, dtype=float)
        if pops.ndim != 1 or pops.size > dim:
            raise ConfigurationError(
                f"populations must be a vector of at most {dim} entries")
        if np.any(pops < 0.0) or abs(pops.sum() - 1.0) > 1e-9:
            raise ConfigurationError("populations must be a probability vector")
        pops = np.pad(pops, (0, dim - pops.size))
    return state.replace_marginal(ALTERNATING, np.diag(pops).astype(complex))


def _find_spin(layout: SpaceLayout) -> int:
    for k, sub in enumerate(layout.subsystems):
        if isinstance(sub, Spin):
            if sub.dim < 3:
                raise ConfigurationError(
                    "mapping needs the auxiliary transfer level (3-level spin)")
            return k
    raise ConfigurationError("layout has no spin subsystem for the mapping")


def _carrier(layout: SpaceLayout, spin: int, theta: float, phi: float) -> np.ndarray:
    """Rotation on the qubit pair of the detection ion; aux level untouched."""
    dim = layout.subsystems[spin].dim
    half = np.zeros((dim, dim), dtype=complex)
    half[SPIN_UP, SPIN_DOWN] = np.exp(1j * phi)
    gen = half + half.conj().T
    return layout.embed(expm(-0.5j * theta * gen), spin)


def _number_selective_flip(layout: SpaceLayout, spin: int, mode: int) -> np.ndarray:
    """Round-trip sideband on the down <-> aux leg: |down, n> acquires
    cos(pi sqrt n) and leaks sin(pi sqrt n) into |aux, n-1>."""
    dim = layout.subsystems[spin].dim
    lift = np.zeros((dim, dim), dtype=complex)
    lift[SPIN_AUX, SPIN_DOWN] = 1.0
    half = layout.embed(lift, spin) @ layout.destroy(mode)
    gen = half + half.conj().T
    return expm(-1j * math.pi * gen)


def cz_map(state: JointState, variant: MappingVariant) -> JointState:
    """Write "alternating mode excited?" onto the detection ion.

    Ramsey pair around a motion-subtracting 2 pi sideband: |0> keeps its
    phase, |1> flips it, the closing pulse at phi2 + pi converts the phase
    into the bright/dark split.  Number states above one leak partially
    into the auxiliary (bright) level and lose a quantum; a
    DisturbanceWarning reports when that weight is non-negligible.
    """
    layout = state.layout
    spin = _find_spin(layout)
    pops = state.number_distribution(ALTERNATING)
    if pops[2:].sum() > DISTURBANCE_TOL:
        warnings.warn(DisturbanceWarning(
            f"population {pops[2:].sum():.3e} above one quantum will be disturbed"))
    u = (_carrier(layout, spin, math.pi / 2.0, variant.phi2 + math.pi)
         @ _number_selective_flip(layout, spin, ALTERNATING)
         @ _carrier(layout, spin, math.pi / 2.0, 0.0))
    return JointState(layout, u @ state.rho @ u.conj().T, check=False)


def _mode_propagator(dim: int, up: float, down: float, dephase: float,
                     duration: float) -> np.ndarray:
    """exp(L t) for a single mode with no Hamiltonian, acting on the
    row-major vectorized density matrix."""
    a = np.zeros((dim, dim))
    a[np.arange(dim - 1), np.arange(1, dim)] = np.sqrt(np.arange(1, dim))
    eye = np.eye(dim)
    gen = np.zeros((dim * dim, dim * dim))
    terms = []
    if down > 0.0:
        terms.append(math.sqrt(down) * a)
    if up > 0.0:
        terms.append(math.sqrt(up) * a.T)
    if dephase > 0.0:
        terms.append(math.sqrt(dephase) * np.diag(np.arange(dim, dtype=float)))
    for op in terms:
        sq = op.T @ op
        gen += (np.kron(op, op) - 0.5 * np.kron(sq, eye) - 0.5 * np.kron(eye, sq))
    return expm(gen * duration)


def free_evolution(state: JointState, duration: float,
                   noise: NoiseModel | None = None) -> JointState:
    """Exact drive-off evolution.

    With no Hamiltonian the Lindblad generator is a sum of single-mode
    pieces, so the propagator factorizes into small per-mode channels; the
    result is exact for arbitrary states and any duration, with no
    integrator step limit.
    """
    if duration < 0.0:
        raise ValueError("duration must be non-negative")
    layout = state.layout
    if duration == 0.0 or noise is None:
        return JointState(layout, state.rho.copy(), check=False)
    dims = layout.dims
    n = len(dims)
    tensor = state.rho.reshape(dims + dims)
    modes = sorted(set(noise.heating_rates) | set(noise.dephasing_rates))
    for k in modes:
        if not isinstance(layout.subsystems[k], Mode):
            raise ConfigurationError(f"subsystem {k} is not a mode")
        rate = noise.heating_rates.get(k, 0.0)
        dephase = noise.dephasing_rates.get(k, 0.0)
        if rate == 0.0 and dephase == 0.0:
            continue
        d = dims[k]
        prop = _mode_propagator(d, rate, rate, dephase, duration)
        prop = prop.reshape(d, d, d, d)
        # contract the (row, col) axes of mode k with the channel
        tensor = np.tensordot(prop, tensor, axes=([2, 3], [k, n + k]))
        order = list(range(2, 2 * n))
        order.insert(k, 0)
        order.insert(n + k, 1)
        tensor = tensor.transpose(order)
    return JointState(layout, tensor.reshape(layout.dim, layout.dim), check=False)


def _swap_pulse(config: ProtocolConfig) -> CouplingPulse:
    area = math.pi / (2.0 * config.g0)
    gen = CouplingGenerator(g0=config.g0, modes=(ALTERNATING, STRETCH))
    if config.swap_ramp > 0.0:
        env = PulseEnvelope.for_area(area, config.swap_ramp)
        return CouplingPulse(gen, envelope=env)
    return CouplingPulse(gen, duration=area)


def swap_modes(state: JointState, config: ProtocolConfig | None = None,
               noise: NoiseModel | None = None) -> JointState:
    """Full exchange of the alternating and stretch mode contents."""
    config = config or ProtocolConfig()
    return apply_event(state, _swap_pulse(config), SequenceContext(noise=noise))


def detection_split(state: JointState) -> tuple[float, JointState | None,
                                               JointState | None]:
    """Project onto dark ({down}) vs bright ({up, aux}) and reset the ion.

    The projection commutes with every later mode-only channel in the
    round, so collapsing here is equivalent to collapsing at detection.
    Returns (p_bright, dark branch, bright branch); a branch whose Born
    probability is below the floor comes back as None.
    """
    layout = state.layout
    spin = _find_spin(layout)
    dims = layout.dims
    n = len(dims)
    tensor = state.rho.reshape(dims + dims)
    ground = np.zeros((dims[spin], dims[spin]), dtype=complex)
    ground[SPIN_DOWN, SPIN_DOWN] = 1.0

    branches: list[JointState | None] = []
    probs: list[float] = []
    for levels in ((SPIN_DOWN,), (SPIN_UP, SPIN_AUX)):
        keep = np.zeros(dims[spin], dtype=bool)
        keep[list(levels)] = True
        block = tensor.copy()
        block[(slice(None),) * spin + (~keep,)] = 0.0
        block[(slice(None),) * (n + spin) + (~keep,)] = 0.0
        projected = JointState(layout, block.reshape(layout.dim, layout.dim),
                               check=False)
        p = projected.trace()
        if p < _BRANCH_FLOOR:
            branches.append(None)
            probs.append(0.0)
            continue
        normalized = JointState(layout, projected.rho / p, check=False)
        branches.append(normalized.replace_marginal(spin, ground))
        probs.append(p)
    return probs[1], branches[0], branches[1]


def _recoil_kick(state: JointState, config: ProtocolConfig) -> JointState:
    """Photon recoil of a bright detection window, as a short heating burst."""
    rates = {}
    if config.alternating_kick > 0.0:
        rates[ALTERNATING] = config.alternating_kick / SCATTER_WINDOW
    if config.stretch_kick > 0.0:
        rates[STRETCH] = config.stretch_kick / SCATTER_WINDOW
    if not rates:
        return state
    return free_evolution(state, SCATTER_WINDOW, NoiseModel(heating_rates=rates))


def _round_branches(
    state: JointState,
    variant: MappingVariant,
    noise: NoiseModel | None,
    config: ProtocolConfig,
) -> tuple[float, JointState | None, JointState | None]:
    """One full round starting and ending with the state in the alternating
    mode and the ion reset.  Returns (p_bright, dark branch, bright branch)."""
    t = config.timings
    s = cz_map(state, variant)
    s = free_evolution(s, t.mapping, noise)
    s = free_evolution(s, 0.5 * t.swap_padding, noise)
    s = swap_modes(s, config, noise)
    p_bright, dark, bright = detection_split(s)

    done: list[JointState | None] = []
    recool = np.diag(thermal_populations(
        config.recool_nbar, config.cutoff + 1)).astype(complex)
    for branch, lit in ((dark, False), (bright, True)):
        if branch is None:
            done.append(None)
            continue
        b = free_evolution(branch, t.detection, noise)
        if lit:
            b = _recoil_kick(b, config)
        b = free_evolution(b, t.cooling, noise)
        b = b.replace_marginal(ALTERNATING, recool)
        b = swap_modes(b, config, noise)
        b = free_evolution(b, 0.5 * t.swap_padding, noise)
        done.append(b)
    return p_bright, done[0], done[1]


def _record(true: np.ndarray, config: ProtocolConfig,
            rng: np.random.Generator) -> np.ndarray:
    """Push true manifolds through fluorescence, threshold, and flip noise."""
    if config.fluorescence is None:
        return true.copy()
    counts = readout.sample_counts(config.fluorescence, true, rng)
    recorded = np.asarray(readout.classify(counts, config.thresholds))
    recorded = np.minimum(recorded, 1)
    if config.readout_flip > 0.0:
        flips = rng.random(recorded.shape) < config.readout_flip
        recorded = np.where(flips, 1 - recorded, recorded)
    return recorded.astype(np.uint8)


def run_round(
    state: JointState,
    variant: MappingVariant,
    noise: NoiseModel | None,
    fluorescence: readout.FluorescenceModel | None,
    rng: np.random.Generator,
    *,
    config: ProtocolConfig | None = None,
) -> tuple[int, JointState]:
    """Sample a single measurement round.

    Returns the recorded outcome (DARK or BRIGHT) and the post-round state.
    The true manifold is drawn from the Born probabilities; with a
    fluorescence model the recorded outcome additionally passes through
    Poisson counting, thresholding, and the residual flip channel.
    """
    config = config or ProtocolConfig()
    config = replace(config, fluorescence=fluorescence)
    p_bright, dark, bright = _round_branches(state, variant, noise, config)
    true = BRIGHT if rng.random() < p_bright else DARK
    post = bright if true == BRIGHT else dark
    if post is None:
        raise RuntimeError("sampled a zero-probability branch")
    recorded = int(_record(np.array([true]), config, rng)[0])
    return recorded, post


@dataclass
class OutcomeSeries:
    """Monte Carlo record of repeated rounds plus the exact branch tree.

    outcomes holds recorded bits (trials x rounds); true_outcomes the
    projective manifolds actually sampled.  branch_bits / branch_probability
    / branch_populations describe every leaf of the exact tree: its outcome
    bit string, Born weight, and final alternating-mode number distribution.
    """

    variant: MappingVariant
    rounds: int
    outcomes: np.ndarray
    true_outcomes: np.ndarray
    branch_index: np.ndarray
    branch_bits: np.ndarray
    branch_probability: np.ndarray
    branch_populations: np.ndarray
    disturbed: bool = False

    @property
    def trials(self) -> int:
        return self.outcomes.shape[0]

    def class_mask(self, condition=None) -> np.ndarray:
        """Boolean trial mask for a conditioning class.

        condition may be None (all trials), "majority_dark" /
        "majority_bright", or a per-round tuple whose entries are None
        (unconstrained), 0/"d"/"dark", or 1/"b"/"bright".
        """
        rec = self.outcomes
        if condition is None:
            return np.ones(self.trials, dtype=bool)
        if isinstance(condition, str):
            key = condition.strip().lower().replace(" ", "_")
            dark_votes = (rec == DARK).sum(axis=1)
            if key == "majority_dark":
                return dark_votes * 2 > self.rounds
            if key == "majority_bright":
                return (self.rounds - dark_votes) * 2 > self.rounds
            raise ValueError(f"unknown conditioning class {condition!r}")
        pattern = tuple(condition)
        if len(pattern) != self.rounds:
            raise ValueError(
                f"condition has {len(pattern)} entries for {self.rounds} rounds")
        mask = np.ones(self.trials, dtype=bool)
        for k, want in enumerate(pattern):
            if want is None:
                continue
            mask &= rec[:, k] == _as_outcome(want)
        return mask

    def probability(self, condition=None) -> float:
        return float(self.class_mask(condition).mean())

    def final_populations(self, condition=None) -> np.ndarray:
        """Trial-averaged final number distribution of a conditioning class."""
        mask = self.class_mask(condition)
        if not mask.any():
            raise StatisticsError("no trials in the conditioning class")
        pops = self.branch_populations[self.branch_index[mask]]
        return pops.mean(axis=0)

    def diagnostics(self, condition=None, angle: float | None = None):
        """Sideband probe pair (P_subtract, P_add) of the class average."""
        return readout.sideband_probe_signals(
            self.final_populations(condition), angle)


def _as_outcome(value) -> int:
    if isinstance(value, str):
        key = value.strip().lower()
        if key in ("d", "dark"):
            return DARK
        if key in ("b", "bright"):
            return BRIGHT
        raise ValueError(f"unknown outcome label {value!r}")
    out = int(value)
    if out not in (DARK, BRIGHT):
        raise ValueError(f"outcome must be 0 or 1, got {value!r}")
    return out


def run_repeated(
    populations,
    variant: MappingVariant,
    rounds: int,
    trials: int,
    rng: np.random.Generator,
    *,
    noise: NoiseModel | None = None,
    config: ProtocolConfig | None = None,
) -> OutcomeSeries:
    """Run the round sequence on an initial alternating-mode state.

    populations is a thermal nbar (scalar) or an explicit number
    distribution.  The exact branch tree is built once (2^rounds leaves);
    trials are then sampled from the leaf weights and pushed through the
    recorded-outcome noise.  Initial weight above one quantum does not
    raise mid-run; it sets the `disturbed` flag on the result.
    """
    if rounds < 1:
        raise ConfigurationError("rounds must be at least 1")
    if trials < 1:
        raise ConfigurationError("trials must be at least 1")
    config = config or ProtocolConfig()
    state = initial_state(populations, config)
    start_pops = state.number_distribution(ALTERNATING)
    disturbed = bool(start_pops[2:].sum() > DISTURBANCE_TOL)

    # leaves of the partial tree: (state or None, probability, bits)
    leaves: list[tuple[JointState | None, float, tuple[int, ...]]] = [
        (state, 1.0, ())]
    # Thermal inputs trip the disturbance check on every round, and rare
    # mostly-excited branches ride near the Fock cutoff; both are expected
    # here and visible afterwards through `disturbed` / branch_populations.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DisturbanceWarning)
        warnings.simplefilter("ignore", LeakageWarning)
        for _ in range(rounds):
            grown: list[tuple[JointState | None, float, tuple[int, ...]]] = []
            for node, weight, bits in leaves:
                if node is None:
                    grown.append((None, 0.0, bits + (DARK,)))
                    grown.append((None, 0.0, bits + (BRIGHT,)))
                    continue
                p_bright, dark, bright = _round_branches(
                    node, variant, noise, config)
                grown.append((dark, weight * (1.0 - p_bright), bits + (DARK,)))
                grown.append((bright, weight * p_bright, bits + (BRIGHT,)))
            leaves = grown

    count = len(leaves)
    dim = config.cutoff + 1
    bits = np.array([leaf[2] for leaf in leaves], dtype=np.uint8)
    probability = np.array([leaf[1] if leaf[0] is not None else 0.0
                            for leaf in leaves])
    populations_out = np.zeros((count, dim))
    for i, (node, _, _) in enumerate(leaves):
        if node is not None:
            # integrator roundoff can leave populations at -1e-16
            pops = np.clip(node.number_distribution(ALTERNATING), 0.0, None)
            populations_out[i] = pops / pops.sum()

    total = probability.sum()
    if not math.isclose(total, 1.0, rel_tol=0.0, abs_tol=1e-9):
        raise RuntimeError(f"branch probabilities sum to {total!r}")

    index = rng.choice(count, size=trials, p=probability / total)
    true = bits[index]
    recorded = _record(true, config, rng)
    return OutcomeSeries(
        variant=variant,
        rounds=rounds,
        outcomes=recorded,
        true_outcomes=true,
        branch_index=index,
        branch_bits=bits,
        branch_probability=probability,
        branch_populations=populations_out,
        disturbed=disturbed,
    )


def conditioned_nbar(series: OutcomeSeries, condition=None) -> float:
    """Mean occupation of the class-averaged final state.

    Evaluated through the weak-probe sideband ratio, which is exact for the
    averaged number distribution.
    """
    p_sub, p_add = series.diagnostics(condition, angle=None)
    if p_sub == 0.0:
        return 0.0
    return readout.sideband_ratio_nbar(p_sub, p_add)


@dataclass(frozen=True)
class PostSelectionStats:
    """Population estimates after keeping only unanimous outcome records."""

    rounds: int
    trials: int
    retained: float
    discard: float
    p0: float
    p1: float
    majority_dark: float | None
    nbar: dict = field(default_factory=dict)


def post_select(series: OutcomeSeries) -> PostSelectionStats:
    """Keep all-dark and all-bright records; report the resulting split.

    p0 / p1 are the all-dark / all-bright fractions renormalized to the
    retained set.  For an odd number of rounds the majority-dark fraction
    over all trials is included.  Raises StatisticsError when nothing is
    retained.
    """
    all_dark = series.class_mask(("d",) * series.rounds)
    all_bright = series.class_mask(("b",) * series.rounds)
    p_dd = float(all_dark.mean())
    p_bb = float(all_bright.mean())
    retained = p_dd + p_bb
    if retained == 0.0:
        raise StatisticsError("post-selection retained no trials")
    majority = None
    if series.rounds % 2 == 1:
        majority = series.probability("majority_dark")

    nbar: dict = {"unconditioned": conditioned_nbar(series, None)}
    for key, mask, condition in (
        ("all_dark", all_dark, ("d",) * series.rounds),
        ("all_bright", all_bright, ("b",) * series.rounds),
    ):
        if mask.any():
            nbar[key] = conditioned_nbar(series, condition)
    if majority is not None and majority > 0.0:
        nbar["majority_dark"] = conditioned_nbar(series, "majority_dark")

    return PostSelectionStats(
        rounds=series.rounds,
        trials=series.trials,
        retained=retained,
        discard=1.0 - retained,
        p0=p_dd / retained,
        p1=p_bb / retained,
        majority_dark=majority,
        nbar=nbar,
    )
