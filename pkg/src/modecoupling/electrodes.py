"""Drive-amplitude design for shaping potential curvatures at ion sites.

Each electrode contributes a known gradient and curvature per unit drive
amplitude at every ion equilibrium position.  Desired curvature values are
enforced exactly (eliminated through the constraint nullspace); unwanted
gradients and curvatures are suppressed in a weighted least-squares sense;
among all minimizers the smallest-norm amplitude vector is returned.

The real electrode geometry behind the bundled example is not public, so
`synthetic_example` builds a stand-in from point-source potentials: twelve
electrodes on two rails producing a dominant odd (z^3-like) axial profile
across three ion sites.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .crystal import ConfigurationError

__all__ = [
    "ElectrodeBasis",
    "CurvatureTarget",
    "NullTerm",
    "TargetSpec",
    "VoltageSolution",
    "EvaluationReport",
    "solve_amplitudes",
    "evaluate_solution",
    "synthetic_example",
]

_AXES = {"x": 0, "y": 1, "z": 2}


def _axis_index(name: str) -> int:
    try:
        return _AXES[name]
    except KeyError:
        raise ConfigurationError(f"unknown axis {name!r}, expected x, y or z")


@dataclass(frozen=True)
class ElectrodeBasis:
    """Per-electrode field coefficients at each ion site, per unit amplitude.

    gradients has shape (electrodes, ions, 3); curvatures has shape
    (electrodes, ions, 3, 3) with symmetric matrices.  extras optionally
    carries additional scalar derivative columns (e.g. a third axial
    derivative from a trap simulation) as (electrodes, ions) arrays keyed
    by label; they can be referenced by nulling terms.
    """

    gradients: np.ndarray
    curvatures: np.ndarray
    labels: tuple[str, ...] = ()
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        g = np.asarray(self.gradients, dtype=float)
        c = np.asarray(self.curvatures, dtype=float)
        object.__setattr__(self, "gradients", g)
        object.__setattr__(self, "curvatures", c)
        if g.ndim != 3 or g.shape[2] != 3:
            raise ConfigurationError("gradients must have shape (electrodes, ions, 3)")
        if c.shape != g.shape + (3,):
            raise ConfigurationError(
                "curvatures must have shape (electrodes, ions, 3, 3) matching gradients")
        if g.shape[0] == 0:
            raise ConfigurationError("basis needs at least one electrode")
        if not (np.isfinite(g).all() and np.isfinite(c).all()):
            raise ConfigurationError("basis entries must be finite")
        if np.abs(c - c.transpose(0, 1, 3, 2)).max() > 1e-9 * max(1.0, np.abs(c).max()):
            raise ConfigurationError("curvature matrices must be symmetric")
        if self.labels and len(self.labels) != g.shape[0]:
            raise ConfigurationError("one label per electrode")
        for key, col in self.extras.items():
            arr = np.asarray(col, dtype=float)
            if arr.shape != g.shape[:2]:
                raise ConfigurationError(
                    f"extra column {key!r} must have shape (electrodes, ions)")
            if not np.isfinite(arr).all():
                raise ConfigurationError(f"extra column {key!r} must be finite")

    @property
    def electrodes(self) -> int:
        return self.gradients.shape[0]

    @property
    def ions(self) -> int:
        return self.gradients.shape[1]


@dataclass(frozen=True)
class CurvatureTarget:
    """Desired curvature entry (axes pair like "zz" or "xz"), one value per ion."""

    axes: str
    values: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.axes) != 2:
            raise ConfigurationError("axes must name two of x, y, z (e.g. 'xz')")
        for ch in self.axes:
            _axis_index(ch)
        if not self.values:
            raise ConfigurationError("target needs at least one value")
        if not all(np.isfinite(self.values)):
            raise ConfigurationError("target values must be finite")


@dataclass(frozen=True)
class NullTerm:
    """A quantity to suppress at every ion: a gradient component, a diagonal
    curvature, or a user-supplied extra derivative column."""

    kind: str
    axis: str
    weight: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("gradient", "curvature", "extra"):
            raise ConfigurationError(
                f"kind must be gradient, curvature or extra, got {self.kind!r}")
        if self.kind != "extra":
            _axis_index(self.axis)
        if self.weight < 0.0:
            raise ConfigurationError("null weights must be non-negative")


@dataclass(frozen=True)
class TargetSpec:
    """Hard curvature targets plus soft nulling terms."""

    desired: tuple
    nulls: tuple = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "desired", tuple(self.desired))
        object.__setattr__(self, "nulls", tuple(self.nulls))
        if not self.desired:
            raise ConfigurationError("at least one desired curvature target")
        ions = {len(t.values) for t in self.desired}
        if len(ions) != 1:
            raise ConfigurationError("all targets must cover the same ion count")

    @classmethod
    def with_standard_nulls(cls, desired, weight: float = 1.0) -> "TargetSpec":
        """Gradient nulls on all axes plus diagonal-curvature nulls on the
        axes not already targeted."""
        desired = tuple(desired)
        targeted = {t.axes[0] for t in desired if t.axes[0] == t.axes[1]}
        nulls = [NullTerm("gradient", ax, weight) for ax in "xyz"]
        nulls += [NullTerm("curvature", ax, weight)
                  for ax in "xyz" if ax not in targeted]
        return cls(desired=desired, nulls=tuple(nulls))


def _target_rows(basis: ElectrodeBasis, target: CurvatureTarget) -> np.ndarray:
    i, j = (_axis_index(ch) for ch in target.axes)
    return basis.curvatures[:, :, i, j].T  # (ions, electrodes)


def _null_rows(basis: ElectrodeBasis, term: NullTerm) -> np.ndarray:
    if term.kind == "gradient":
        return basis.gradients[:, :, _axis_index(term.axis)].T
    if term.kind == "curvature":
        k = _axis_index(term.axis)
        return basis.curvatures[:, :, k, k].T
    try:
        return np.asarray(basis.extras[term.axis], dtype=float).T
    except KeyError:
        raise ConfigurationError(
            f"basis has no extra column named {term.axis!r}")


def _check_ion_count(basis: ElectrodeBasis, target: TargetSpec) -> None:
    want = len(target.desired[0].values)
    if want != basis.ions:
        raise ConfigurationError(
            f"target covers {want} ions, basis has {basis.ions}")


@dataclass(frozen=True)
class VoltageSolution:
    """Amplitudes with their exact achieved values and solve diagnostics.

    feasible reports whether the hard targets are reachable; when they are
    not, amplitudes realize the least-squares-closest achievable values
    (stored in closest) and hard_residual carries the distance.
    """

    amplitudes: np.ndarray
    achieved: tuple
    feasible: bool
    hard_residual: float
    closest: np.ndarray
    residual: np.ndarray
    null_dim: int
    soft_rank: int
    hard_singular_values: np.ndarray
    soft_singular_values: np.ndarray


def solve_amplitudes(basis: ElectrodeBasis, target: TargetSpec,
                     *, rcond: float = 1e-12) -> VoltageSolution:
    """Minimum-norm amplitudes meeting the targets and suppressing the nulls.

    Hard rows (desired curvature values) are solved first; the remaining
    freedom, the nullspace of the hard system, is used to minimize the
    weighted nulling objective.  Both stages use minimum-norm least squares,
    so the result is the smallest amplitude vector among all minimizers.
    """
    _check_ion_count(basis, target)
    a_hard = np.vstack([_target_rows(basis, t) for t in target.desired])
    t_hard = np.concatenate([np.asarray(t.values, dtype=float)
                             for t in target.desired])

    particular, _, _, sv_hard = np.linalg.lstsq(a_hard, t_hard, rcond=None)
    gap = a_hard @ particular - t_hard
    scale = max(1.0, float(np.abs(t_hard).max()), float(np.abs(a_hard).max()))
    feasible = bool(np.abs(gap).max() <= 1e-9 * scale)

    amplitudes = particular
    null = null_space(a_hard, rcond=rcond)
    sv_soft = np.zeros(0)
    soft_rank = 0
    if target.nulls:
        a_soft = np.vstack([_null_rows(basis, term) for term in target.nulls])
        weights = np.concatenate([
            np.full(basis.ions, term.weight) for term in target.nulls])
    else:
        a_soft = np.zeros((0, basis.electrodes))
        weights = np.zeros(0)
    if null.shape[1] and a_soft.shape[0]:
        lhs = (weights[:, None] * a_soft) @ null
        rhs = -weights * (a_soft @ particular)
        shift, _, soft_rank, sv_soft = np.linalg.lstsq(lhs, rhs, rcond=None)
        amplitudes = particular + null @ shift

    achieved = tuple(_target_rows(basis, t) @ amplitudes for t in target.desired)
    residual = weights * (a_soft @ amplitudes) if a_soft.shape[0] else np.zeros(0)
    return VoltageSolution(
        amplitudes=amplitudes,
        achieved=achieved,
        feasible=feasible,
        hard_residual=float(np.linalg.norm(a_hard @ amplitudes - t_hard)),
        closest=a_hard @ amplitudes,
        residual=residual,
        null_dim=int(null.shape[1]),
        soft_rank=int(soft_rank),
        hard_singular_values=sv_hard,
        soft_singular_values=np.asarray(sv_soft),
    )


@dataclass(frozen=True)
class EvaluationReport:
    """Exact linear evaluation of an amplitude vector against a target."""

    desired_achieved: tuple
    desired_error: float
    null_achieved: tuple
    worst_null: float
    objective: float


def evaluate_solution(basis: ElectrodeBasis, amplitudes,
                      target: TargetSpec) -> EvaluationReport:
    """Report achieved vs desired values and the nulled-term leakage."""
    _check_ion_count(basis, target)
    v = np.asarray(amplitudes, dtype=float)
    if v.shape != (basis.electrodes,):
        raise ConfigurationError(
            f"amplitudes must be a vector of {basis.electrodes} entries")
    desired_achieved = []
    err = 0.0
    for t in target.desired:
        got = _target_rows(basis, t) @ v
        desired_achieved.append(got)
        err = max(err, float(np.abs(got - np.asarray(t.values)).max()))
    null_achieved = []
    worst = 0.0
    objective = 0.0
    for term in target.nulls:
        got = _null_rows(basis, term) @ v
        null_achieved.append(got)
        worst = max(worst, float(np.abs(got).max()))
        objective += float(term.weight ** 2 * (got @ got))
    return EvaluationReport(
        desired_achieved=tuple(desired_achieved),
        desired_error=err,
        null_achieved=tuple(null_achieved),
        worst_null=worst,
        objective=objective,
    )


def _point_source(source: np.ndarray, sites: np.ndarray):
    """Gradient and curvature of 1/|r - s| at each site, unit amplitude."""
    u = sites - source  # (ions, 3)
    rho = np.linalg.norm(u, axis=1)
    grad = -u / rho[:, None] ** 3
    eye = np.eye(3)
    curv = (3.0 * u[:, :, None] * u[:, None, :]
            - (rho ** 2)[:, None, None] * eye) / rho[:, None, None] ** 5
    return grad, curv


def synthetic_example(ion_spacing: float = 0.35, curvature: float = 1.0):
    """Stand-in electrode set: twelve point sources on two rails around
    three collinear ion sites, with a z^3-like target (odd diagonal axial
    curvature across the string) and the standard nulls.

    Returns (basis, target).  All lengths share one arbitrary unit; the
    basis is expressed per unit drive amplitude.
    """
    if ion_spacing <= 0.0:
        raise ConfigurationError("ion spacing must be positive")
    sites = np.array([[0.0, 0.0, -ion_spacing],
                      [0.0, 0.0, 0.0],
                      [0.0, 0.0, ion_spacing]])
    z_slots = np.array([-2.0, -1.2, -0.4, 0.4, 1.2, 2.0])
    rails = (np.array([1.0, 0.3, 0.0]), np.array([-1.0, 0.3, 0.0]))
    grads, curvs, labels = [], [], []
    for side, rail in zip("ab", rails):
        for k, z in enumerate(z_slots):
            g, c = _point_source(rail + np.array([0.0, 0.0, z]), sites)
            grads.append(g)
            curvs.append(c)
            labels.append(f"{side}{k + 1}")
    basis = ElectrodeBasis(np.array(grads), np.array(curvs), tuple(labels))
    desired = (CurvatureTarget("zz", (-curvature, 0.0, curvature)),)
    return basis, TargetSpec.with_standard_nulls(desired)
