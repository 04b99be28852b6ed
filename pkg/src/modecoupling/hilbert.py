"""Joint Hilbert space of motional modes and spins: states and dynamics.

Modes are truncated harmonic oscillators (cutoff = highest Fock index);
spins are two-level systems.  Dynamics integrate the Lindblad master
equation with the bilinear mode-coupling Hamiltonian

    H / hbar = g(t) (e^{i phi} a b^dag + e^{-i phi} b a^dag) + delta b^dag b

where g(t) = A(t) g0 follows the pulse envelope, plus heating modeled as
equal-rate up/down dissipators sqrt(rate) a and sqrt(rate) a^dag (the
infinite-temperature limit: d<n>/dt = rate), and optional number-operator
dephasing.  A closed-form propagator for the noise-free resonant case
serves as the validation oracle for the integrator.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .coupling import PulseEnvelope
from .crystal import ConfigurationError

DIMENSION_CAP = 4096


class LeakageWarning(UserWarning):
    """Population reached the Fock-space cutoff during evolution."""


@dataclass(frozen=True)
class Mode:
    """Truncated oscillator; ``cutoff`` is the highest retained Fock index."""

    cutoff: int

    def __post_init__(self) -> None:
        if self.cutoff < 2:
            raise ConfigurationError("mode cutoff must be at least 2")

    @property
    def dim(self) -> int:
        return self.cutoff + 1


@dataclass(frozen=True)
class Spin:
    """Discrete internal-state manifold; two levels unless more are requested."""

    levels: int = 2

    def __post_init__(self) -> None:
        if self.levels < 2:
            raise ConfigurationError("a spin needs at least two levels")

    @property
    def dim(self) -> int:
        return self.levels


Subsystem = Mode | Spin


class SpaceLayout:
    """Ordered tensor product of subsystems (subsystem 0 is slowest index)."""

    def __init__(self, subsystems: tuple[Subsystem, ...] | list[Subsystem],
                 dimension_cap: int = DIMENSION_CAP):
        self.subsystems = tuple(subsystems)
        if not self.subsystems:
            raise ConfigurationError("layout needs at least one subsystem")
        self.dims = tuple(s.dim for s in self.subsystems)
        self.dim = int(np.prod(self.dims))
        if self.dim > dimension_cap:
            raise ConfigurationError(
                f"total dimension {self.dim} exceeds cap {dimension_cap}"
            )

    @property
    def mode_indices(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.subsystems) if isinstance(s, Mode))

    def index(self, occupations: tuple[int, ...]) -> int:
        if len(occupations) != len(self.dims):
            raise ValueError("one occupation per subsystem required")
        idx = 0
        for n, d in zip(occupations, self.dims):
            if not 0 <= n < d:
                raise ValueError(f"occupation {n} outside subsystem dimension {d}")
            idx = idx * d + n
        return idx

    def occupations(self, index: int) -> tuple[int, ...]:
        """Inverse of ``index``: the per-subsystem occupation tuple."""
        if not 0 <= index < self.dim:
            raise ValueError(f"basis index {index} outside dimension {self.dim}")
        out = []
        for d in reversed(self.dims):
            index, n = divmod(index, d)
            out.append(n)
        return tuple(reversed(out))

    def basis_vector(self, occupations: tuple[int, ...]) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.index(occupations)] = 1.0
        return v

    def embed(self, op: np.ndarray, subsystem: int) -> np.ndarray:
        """Lift a single-subsystem operator to the full space."""
        before = int(np.prod(self.dims[:subsystem], initial=1))
        after = int(np.prod(self.dims[subsystem + 1 :], initial=1))
        return np.kron(np.kron(np.eye(before), op), np.eye(after))

    def destroy(self, subsystem: int) -> np.ndarray:
        sub = self.subsystems[subsystem]
        if not isinstance(sub, Mode):
            raise ConfigurationError(
                f"subsystem {subsystem} is not a mode; no ladder operator"
            )
        return self.embed(ladder(sub.cutoff), subsystem)

    def number(self, subsystem: int) -> np.ndarray:
        a = self.destroy(subsystem)
        return a.conj().T @ a


def ladder(cutoff: int) -> np.ndarray:
    """Annihilation operator on a truncated Fock space: a|n> = sqrt(n)|n-1>."""
    a = np.zeros((cutoff + 1, cutoff + 1), dtype=complex)
    for n in range(1, cutoff + 1):
        a[n - 1, n] = math.sqrt(n)
    return a


HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-9
POSITIVITY_TOL = -1e-9


class JointState:
    """Density matrix over a SpaceLayout.

    Construction checks Hermiticity and unit trace; the (more expensive)
    positivity check runs on demand via :meth:`check_positive`.
    """

    def __init__(self, layout: SpaceLayout, rho: np.ndarray, check: bool = True):
        rho = np.asarray(rho, dtype=complex)
        if rho.shape != (layout.dim, layout.dim):
            raise ValueError(
                f"density matrix shape {rho.shape} does not match layout "
                f"dimension {layout.dim}"
            )
        if check:
            herm = np.max(np.abs(rho - rho.conj().T))
            if herm > HERMITICITY_TOL:
                raise ValueError(f"state is not Hermitian (deviation {herm:.3e})")
            tr = np.trace(rho).real
            if abs(tr - 1.0) > TRACE_TOL:
                raise ValueError(f"state trace {tr} deviates from 1")
        self.layout = layout
        self.rho = rho

    # -- constructors -------------------------------------------------
    @classmethod
    def fock(cls, layout: SpaceLayout, occupations: tuple[int, ...]) -> "JointState":
        v = layout.basis_vector(occupations)
        return cls(layout, np.outer(v, v.conj()))

    @classmethod
    def pure(cls, layout: SpaceLayout, vector: np.ndarray) -> "JointState":
        v = np.asarray(vector, dtype=complex)
        v = v / np.linalg.norm(v)
        return cls(layout, np.outer(v, v.conj()))

    # -- diagnostics ---------------------------------------------------
    def check_positive(self, tol: float = POSITIVITY_TOL) -> None:
        lam = np.linalg.eigvalsh(self.rho)
        if lam[0] < tol:
            raise ValueError(f"state has negative eigenvalue {lam[0]:.3e}")

    def trace(self) -> float:
        return float(np.trace(self.rho).real)

    def expectation(self, op: np.ndarray) -> float:
        return float(np.trace(op @ self.rho).real)

    def population(self, occupations: tuple[int, ...]) -> float:
        return float(self.rho[self.layout.index(occupations),
                              self.layout.index(occupations)].real)

    def mode_number(self, subsystem: int) -> float:
        return self.expectation(self.layout.number(subsystem))

    def marginal(self, subsystem: int) -> np.ndarray:
        """Reduced density matrix of one subsystem."""
        dims = self.layout.dims
        n = len(dims)
        t = self.rho.reshape(dims + dims)
        for k in sorted((i for i in range(n) if i != subsystem), reverse=True):
            t = np.trace(t, axis1=k, axis2=k + t.ndim // 2)
        return t

    def number_distribution(self, subsystem: int) -> np.ndarray:
        return np.diag(self.marginal(subsystem)).real.copy()

    def replace_marginal(self, subsystem: int, marginal: np.ndarray) -> "JointState":
        """Discard one subsystem's state (and its correlations), insert a new one."""
        dims = self.layout.dims
        n = len(dims)
        k = subsystem
        t = self.rho.reshape(dims + dims)
        rest = np.trace(t, axis1=k, axis2=k + n)
        new = np.asarray(marginal, dtype=complex).reshape(dims[k], dims[k])
        # combined axes: (s_row, s_col, other rows..., other cols...);
        # permute back to (rows..., cols...) with the new subsystem at slot k
        combined = np.tensordot(new, rest, axes=0)
        m = n - 1
        row_axes = [2 + i if i < k else (0 if i == k else 2 + i - 1) for i in range(n)]
        col_axes = [
            2 + m + i if i < k else (1 if i == k else 2 + m + i - 1) for i in range(n)
        ]
        ordered = combined.transpose(row_axes + col_axes)
        return JointState(self.layout,
                          ordered.reshape(self.layout.dim, self.layout.dim))


@dataclass(frozen=True)
class NoiseModel:
    """Heating (quanta/s) and optional dephasing (1/s) per mode subsystem."""

    heating_rates: dict[int, float] = field(default_factory=dict)
    dephasing_rates: dict[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for rates in (self.heating_rates, self.dephasing_rates):
            for k, r in rates.items():
                if r < 0.0:
                    raise ConfigurationError(f"negative noise rate {r} for mode {k}")

    def collapse_operators(self, layout: SpaceLayout) -> list[np.ndarray]:
        ops: list[np.ndarray] = []
        for k, rate in sorted(self.heating_rates.items()):
            if rate > 0.0:
                a = layout.destroy(k)
                ops.append(math.sqrt(rate) * a)
                ops.append(math.sqrt(rate) * a.conj().T)
        for k, rate in sorted(self.dephasing_rates.items()):
            if rate > 0.0:
                ops.append(math.sqrt(rate) * layout.number(k))
        return ops


@dataclass(frozen=True)
class CouplingGenerator:
    """Bilinear exchange generator between two modes of a layout."""

    g0: float
    phase: float = 0.0
    detuning: float = 0.0
    modes: tuple[int, int] = (0, 1)


def coupling_hamiltonian(layout: SpaceLayout, gen: CouplingGenerator) -> np.ndarray:
    """H/hbar at unit envelope: g0 (e^{i phi} a b^dag + h.c.) + delta b^dag b."""
    if len(layout.mode_indices) < 2:
        raise ConfigurationError("coupling requires a layout with two modes")
    a = layout.destroy(gen.modes[0])
    b = layout.destroy(gen.modes[1])
    ab = a @ b.conj().T
    h = gen.g0 * (np.exp(1j * gen.phase) * ab + np.exp(-1j * gen.phase) * ab.conj().T)
    if gen.detuning != 0.0:
        h = h + gen.detuning * (b.conj().T @ b)
    return h


# Integrator step: 1/(local frequency scale) divided by this factor.  The
# coupling eigenvalues grow with the total-quanta manifold (up to N g0 for
# N quanta), so the margin must cover multi-quantum states: 400 keeps the
# global RK4 error near 2e-8 for four quanta, against a 1e-7 oracle budget.
STEPS_PER_RADIAN = 400.0
MAX_STEP = 1e-6  # s


def _step_size(gen: CouplingGenerator | None, noise: NoiseModel | None,
               duration: float) -> float:
    scale = 0.0
    if gen is not None:
        scale = max(scale, abs(gen.g0), abs(gen.detuning))
    if noise is not None:
        for r in noise.heating_rates.values():
            scale = max(scale, r)
        for r in noise.dephasing_rates.values():
            scale = max(scale, r)
    h = MAX_STEP if scale == 0.0 else min(1.0 / (STEPS_PER_RADIAN * scale), MAX_STEP)
    return min(h, duration) if duration > 0.0 else h


def evolve(
    state: JointState,
    generator: CouplingGenerator | None,
    noise: NoiseModel | None = None,
    envelope: PulseEnvelope | None = None,
    duration: float = 0.0,
) -> JointState:
    """Integrate the Lindblad equation for ``duration`` seconds.

    Classic fixed-step RK4 acting on the density matrix; the coupling term
    is scaled by the envelope at the three RK4 stage times.  The Lindblad
    right-hand side is exactly trace-free, so the trace is preserved to
    roundoff; Hermiticity is restored once at the end.
    """
    if duration < 0.0:
        raise ValueError("duration must be non-negative")
    layout = state.layout
    if duration == 0.0:
        return JointState(layout, state.rho.copy(), check=False)

    h_coupling = (
        None if generator is None or generator.g0 == 0.0
        else coupling_hamiltonian(layout, CouplingGenerator(
            generator.g0, generator.phase, 0.0, generator.modes))
    )
    h_static = None
    if generator is not None and generator.detuning != 0.0:
        b = layout.destroy(generator.modes[1])
        h_static = generator.detuning * (b.conj().T @ b)

    collapse = noise.collapse_operators(layout) if noise is not None else []
    c_dag = [c.conj().T for c in collapse]
    anticomm = sum((cd @ c for c, cd in zip(collapse, c_dag)), start=np.zeros_like(state.rho))

    def rhs(t: float, rho: np.ndarray) -> np.ndarray:
        out = np.zeros_like(rho)
        if h_coupling is not None:
            amp = 1.0 if envelope is None else envelope.value(t)
            if amp != 0.0:
                hm = amp * h_coupling
                out += -1j * (hm @ rho - rho @ hm)
        if h_static is not None:
            out += -1j * (h_static @ rho - rho @ h_static)
        if collapse:
            acc = anticomm @ rho + rho @ anticomm
            out -= 0.5 * acc
            for c, cd in zip(collapse, c_dag):
                out += c @ rho @ cd
        return out

    step = _step_size(generator, noise, duration)
    n_steps = max(1, math.ceil(duration / step))
    h = duration / n_steps
    rho = state.rho.copy()
    t = 0.0
    for _ in range(n_steps):
        k1 = rhs(t, rho)
        k2 = rhs(t + 0.5 * h, rho + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, rho + 0.5 * h * k2)
        k4 = rhs(t + h, rho + h * k3)
        rho = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
    rho = 0.5 * (rho + rho.conj().T)

    result = JointState(layout, rho, check=False)
    for k in layout.mode_indices:
        top = result.number_distribution(k)[-1]
        if top > 1e-4:
            warnings.warn(
                f"population {top:.2e} at the Fock cutoff of subsystem {k}; "
                "increase the cutoff",
                LeakageWarning,
                stacklevel=2,
            )
    return result


def analytic_exchange(
    initial: np.ndarray | dict[tuple[int, int], complex],
    g0: float,
    phase: float,
    t: float,
) -> np.ndarray:
    """Closed-form two-mode amplitudes under resonant exchange, no noise.

    The creation operators rotate into each other under the coupling; for
    the forward Schroedinger propagator U = e^{-i H t} the conjugated
    operators U a^dag U^dag carry

        a^dag -> a^dag cos(g0 t) - i e^{ i phase} b^dag sin(g0 t)
        b^dag -> b^dag cos(g0 t) - i e^{-i phase} a^dag sin(g0 t)

    (the Heisenberg-picture operators U^dag a^dag U carry +i; building
    U|psi> from a polynomial in creation operators uses the conjugated
    form).  Expanding binomially on an initial pure state
    sum c_mn / sqrt(m! n!) (a^dag)^m (b^dag)^n |00> gives the exact
    amplitude grid.  Output entry [p, q] is the amplitude of |p, q>.
    """
    if isinstance(initial, dict):
        max_m = max((m for m, _ in initial), default=0)
        max_n = max((n for _, n in initial), default=0)
        c = np.zeros((max_m + 1, max_n + 1), dtype=complex)
        for (m, n), amp in initial.items():
            c[m, n] = amp
        initial = c
    c_in = np.asarray(initial, dtype=complex)
    norm = math.sqrt(float(np.sum(np.abs(c_in) ** 2)))
    if not math.isclose(norm, 1.0, rel_tol=0.0, abs_tol=1e-9):
        raise ValueError("initial amplitudes must be normalized")

    total = c_in.shape[0] + c_in.shape[1] - 2
    size = total + 1
    out = np.zeros((size, size), dtype=complex)
    cos = math.cos(g0 * t)
    sin = math.sin(g0 * t)
    fa = -1j * np.exp(1j * phase) * sin
    fb = -1j * np.exp(-1j * phase) * sin
    for m in range(c_in.shape[0]):
        for n in range(c_in.shape[1]):
            if c_in[m, n] == 0.0:
                continue
            base = c_in[m, n] / math.sqrt(math.factorial(m) * math.factorial(n))
            for j in range(m + 1):
                wa = math.comb(m, j) * cos**j * fa ** (m - j)
                for k in range(n + 1):
                    wb = math.comb(n, k) * cos**k * fb ** (n - k)
                    p = j + (n - k)
                    q = (m - j) + k
                    out[p, q] += (
                        base * wa * wb
                        * math.sqrt(math.factorial(p) * math.factorial(q))
                    )
    return out


def fidelity(state_a: JointState | np.ndarray, state_b: JointState | np.ndarray) -> float:
    """Uhlmann fidelity F = (tr sqrt(sqrt(rho) sigma sqrt(rho)))^2."""
    rho = state_a.rho if isinstance(state_a, JointState) else np.asarray(state_a)
    sigma = state_b.rho if isinstance(state_b, JointState) else np.asarray(state_b)
    lam, u = np.linalg.eigh(rho)
    sqrt_rho = (u * np.sqrt(np.clip(lam, 0.0, None))) @ u.conj().T
    inner = sqrt_rho @ sigma @ sqrt_rho
    mu = np.linalg.eigvalsh(inner)
    return float(np.sum(np.sqrt(np.clip(mu, 0.0, None))) ** 2)


def classical_fidelity(p: np.ndarray, q: np.ndarray) -> float:
    """Fidelity of two diagonal (probability) vectors: (sum sqrt(p q))^2."""
    p = np.clip(np.asarray(p, dtype=float), 0.0, None)
    q = np.clip(np.asarray(q, dtype=float), 0.0, None)
    return float(np.sum(np.sqrt(p * q)) ** 2)


def thermal_populations(nbar: float, dim: int) -> np.ndarray:
    """Truncated, renormalized thermal occupation probabilities."""
    if nbar < 0.0:
        raise ValueError("nbar must be non-negative")
    if nbar == 0.0:
        p = np.zeros(dim)
        p[0] = 1.0
        return p
    s = nbar / (1.0 + nbar)
    p = s ** np.arange(dim)
    return p / p.sum()


def thermal_state(layout: SpaceLayout, subsystem: int, nbar: float) -> JointState:
    """Thermal state on one mode, ground state on every other subsystem."""
    return product_thermal(layout, {subsystem: nbar})


def product_thermal(layout: SpaceLayout, nbars: dict[int, float]) -> JointState:
    """Product state: thermal where given, ground elsewhere."""
    rho = np.ones((1, 1), dtype=complex)
    for k, sub in enumerate(layout.subsystems):
        if k in nbars:
            if not isinstance(sub, Mode):
                raise ConfigurationError(f"subsystem {k} is not a mode")
            p = thermal_populations(nbars[k], sub.dim)
            block = np.diag(p.astype(complex))
        else:
            block = np.zeros((sub.dim, sub.dim), dtype=complex)
            block[0, 0] = 1.0
        rho = np.kron(rho, block)
    return JointState(layout, rho)
