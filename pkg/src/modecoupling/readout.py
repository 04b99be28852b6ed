"""Fluorescence detection statistics and their inversion into motional populations.

Photon counts from a detection window are modeled as Poisson mixtures whose
component means are fixed by how many ions fluoresce.  This module provides
the forward direction (sampling counts, thresholding them into bright-ion
numbers) and the inverse direction (mixture-weight MLE, bright-probability to
number-state conversion, sideband-ratio thermometry, and the stochastic
motion-to-spin mapping channels used for joint two-mode state readout).
"""
from __future__ import annotations

import warnings
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import presets
from .hilbert import JointState

__all__ = [
    "FluorescenceModel",
    "Thresholds",
    "SidebandMapModel",
    "MixtureWeights",
    "ReferenceCalibration",
    "InferredPopulations",
    "JointPopulationEstimate",
    "InconsistencyWarning",
    "SidebandRatioError",
    "BE_MODEL",
    "MG_MODEL",
    "BE_CUTS",
    "MG_CUTS",
    "PROBE_WEIGHT",
    "sample_counts",
    "classify",
    "mle_bright_probs",
    "fit_reference_means",
    "infer_number_populations",
    "sideband_probe_signals",
    "sideband_ratio_nbar",
    "alternating_map_bright_probability",
    "stretch_map_bright_distribution",
    "mapping_outcome_probabilities",
    "joint_mapping_channel",
    "estimate_joint_populations",
]


class InconsistencyWarning(UserWarning):
    """Bright probabilities convert to number populations summing above one.

    Carries the raw (pre-clamp) populations so the caller can inspect how far
    out of model the data sit.
    """

    def __init__(self, message: str, raw: tuple[float, ...]):
        super().__init__(message)
        self.raw = raw


class SidebandRatioError(ValueError):
    """Sideband-ratio thermometry outside its domain of validity."""


# ---------------------------------------------------------------------------
# detection models


@dataclass(frozen=True)
class FluorescenceModel:
    """Poisson count statistics for one detection channel.

    ``bright_mean`` is the mean count contributed by a single fluorescing ion;
    ``background`` is the mean with no ion fluorescing.  ``label`` tags the
    species / detection window the numbers were calibrated for.
    """

    bright_mean: float
    background: float
    label: str = ""

    def __post_init__(self) -> None:
        if not self.bright_mean > self.background >= 0.0:
            raise ValueError(
                f"need bright mean > background >= 0, got "
                f"({self.bright_mean}, {self.background})")

    def mean(self, n_bright):
        """Mean photon count with ``n_bright`` ions fluorescing."""
        return np.asarray(n_bright) * self.bright_mean + self.background


@dataclass(frozen=True)
class Thresholds:
    """Strictly increasing count cut points; class = number of cuts exceeded."""

    cuts: tuple[float, ...]

    def __post_init__(self) -> None:
        cuts = tuple(self.cuts)
        object.__setattr__(self, "cuts", cuts)
        if len(cuts) == 0:
            raise ValueError("at least one cut point required")
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise ValueError(f"cut points must be strictly increasing: {cuts}")

    @property
    def classes(self) -> int:
        return len(self.cuts) + 1


@dataclass(frozen=True)
class SidebandMapModel:
    """Bright-probability to number-population conversion factors.

    P(n=1) = P_b(1)/one_quantum and P(n=2) = P_b(2)/two_quantum; the factors
    fold mapping-pulse imperfections into the inversion.
    """

    one_quantum: float = presets.SIDEBAND_MAP_FACTORS[0]
    two_quantum: float = presets.SIDEBAND_MAP_FACTORS[1]

    def __post_init__(self) -> None:
        for f in (self.one_quantum, self.two_quantum):
            if not 0.0 < f <= 1.0:
                raise ValueError(f"conversion factors must lie in (0, 1]: {f}")


BE_MODEL = FluorescenceModel(presets.BE_BRIGHT_MEAN, presets.BE_BACKGROUND, "be")
MG_MODEL = FluorescenceModel(presets.MG_BRIGHT_MEAN, presets.MG_BACKGROUND, "mg")
BE_CUTS = Thresholds(presets.BE_THRESHOLDS)
MG_CUTS = Thresholds(presets.MG_THRESHOLD)


def sample_counts(model: FluorescenceModel, n_bright, rng: np.random.Generator):
    """Draw photon counts for ``n_bright`` fluorescing ions (int or array)."""
    n = np.asarray(n_bright)
    if np.any(n < 0):
        raise ValueError("number of bright ions cannot be negative")
    return rng.poisson(model.mean(n))


def classify(counts, thresholds: Thresholds | Sequence[float]):
    """Number of bright ions assigned to ``counts``: how many cuts it exceeds.

    The boundary convention is count > cut, so a count equal to a cut point
    falls in the lower class.
    """
    if not isinstance(thresholds, Thresholds):
        thresholds = Thresholds(tuple(thresholds))
    c = np.asarray(counts)
    if np.any(c < 0):
        raise ValueError("counts cannot be negative")
    out = (c[..., None] > np.asarray(thresholds.cuts)).sum(axis=-1)
    if np.isscalar(counts) or c.ndim == 0:
        return int(out)
    return out


# ---------------------------------------------------------------------------
# mixture-weight MLE


def _project_simplex(v: np.ndarray) -> np.ndarray:
    # Euclidean projection onto the probability simplex (sort-based).
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


@dataclass
class MixtureWeights:
    """Mixture weights with Fisher uncertainties from a count histogram."""

    probs: np.ndarray
    sigma: np.ndarray
    log_likelihood: float
    iterations: int


def mle_bright_probs(counts, means) -> MixtureWeights:
    """Maximum-likelihood weights of a fixed-mean Poisson mixture.

    ``counts`` are the raw per-trial photon counts, ``means`` the known
    component means (e.g. background, one-bright, two-bright).  The weights
    are optimized over the probability simplex by projected gradient ascent
    on the mean log-likelihood; iteration stops once the projected-gradient
    residual falls below 1e-10.  Uncertainties come from the observed Fisher
    information of the reduced (free) coordinates.
    """
    data = np.asarray(counts, dtype=int).ravel()
    if data.size == 0:
        raise ValueError("count histogram is empty")
    if np.any(data < 0):
        raise ValueError("counts cannot be negative")
    mu = np.asarray(means, dtype=float).ravel()
    k = mu.size
    if k < 2:
        raise ValueError("need at least two mixture components")
    if np.any(mu < 0):
        raise ValueError("Poisson means cannot be negative")
    if np.min(np.abs(np.subtract.outer(mu, mu))[~np.eye(k, dtype=bool)]) == 0:
        raise ValueError(f"mixture means must be distinct: {mu}")

    values, mult = np.unique(data, return_counts=True)
    weight = mult / data.size
    pmf = stats.poisson.pmf(values[:, None], mu[None, :])  # (values, components)

    def objective(w: np.ndarray) -> tuple[float, np.ndarray]:
        den = np.maximum(pmf @ w, 1e-300)  # counts far outside every component
        ll = float(weight @ np.log(den))
        grad = (weight / den) @ pmf
        return ll, grad

    # EM warm start (monotone, stays on the simplex), then projected-gradient
    # polish to drive the stationarity residual below the quoted tolerance.
    w = np.full(k, 1.0 / k)
    for it in range(2000):
        den = np.maximum(pmf @ w, 1e-300)
        w_new = w * ((weight / den) @ pmf)
        w_new /= w_new.sum()
        if np.max(np.abs(w_new - w)) < 1e-14:
            w = w_new
            break
        w = w_new

    ll, grad = objective(w)
    iterations = 0
    step = 1.0
    for iterations in range(1, 50001):
        residual = _project_simplex(w + grad) - w
        if np.max(np.abs(residual)) < 1e-10:
            break
        # backtracking line search along the projection arc
        while step > 1e-18:
            trial = _project_simplex(w + step * grad)
            ll_trial, grad_trial = objective(trial)
            if ll_trial >= ll - 1e-18:
                break
            step *= 0.5
        w, ll, grad = trial, ll_trial, grad_trial
        step = min(step * 2.0, 1e6)
    else:
        raise RuntimeError("mixture MLE failed to reach stationarity")

    # Observed Fisher information in reduced coordinates (w[0] eliminated).
    den = np.maximum(pmf @ w, 1e-300)
    diff = pmf[:, 1:] - pmf[:, :1]
    score = diff / den[:, None]
    info = data.size * (score.T * weight) @ score
    cov = np.linalg.pinv(info)
    sigma = np.empty(k)
    sigma[1:] = np.sqrt(np.maximum(np.diag(cov), 0.0))
    sigma[0] = np.sqrt(max(float(np.ones(k - 1) @ cov @ np.ones(k - 1)), 0.0))
    return MixtureWeights(w, sigma, ll * data.size, iterations)


@dataclass
class ReferenceCalibration:
    """Poisson-mixture fit of a reference histogram with free means."""

    means: np.ndarray
    weights: np.ndarray
    log_likelihood: float
    iterations: int


def fit_reference_means(counts, n_components: int, *,
                        initial_means=None, max_iter: int = 20000,
                        tol: float = 1e-12) -> ReferenceCalibration:
    """Fit component means and weights of a Poisson mixture to reference data.

    Deterministic EM from quantile-spread initial means (or caller-supplied
    ones); components are returned sorted by mean.  This is the calibration
    step that turns a measured reference histogram into the fixed means used
    by :func:`mle_bright_probs`.
    """
    data = np.asarray(counts, dtype=int).ravel()
    if data.size == 0:
        raise ValueError("reference histogram is empty")
    if np.any(data < 0):
        raise ValueError("counts cannot be negative")
    if n_components < 1:
        raise ValueError("need at least one component")
    values, mult = np.unique(data, return_counts=True)
    weight = mult / data.size

    if initial_means is None:
        q = (np.arange(n_components) + 0.5) / n_components
        mu = np.quantile(data, q).astype(float)
        # collapse-free start: spread exactly coincident quantiles
        mu += np.arange(n_components) * 1e-3
    else:
        mu = np.asarray(initial_means, dtype=float).ravel()
        if mu.size != n_components:
            raise ValueError("initial_means length must match n_components")
    mu = np.maximum(mu, 1e-9)
    w = np.full(n_components, 1.0 / n_components)

    ll_old = -np.inf
    for it in range(1, max_iter + 1):
        pmf = stats.poisson.pmf(values[:, None], mu[None, :])
        den = np.maximum(pmf @ w, 1e-300)
        ll = float(weight @ np.log(den))
        resp = (w * pmf) / den[:, None]        # (values, components)
        mass = weight @ resp
        w = mass / mass.sum()
        mu = ((weight * values) @ resp) / np.maximum(mass, 1e-300)
        mu = np.maximum(mu, 1e-12)
        if abs(ll - ll_old) < tol * max(1.0, abs(ll)):
            break
        ll_old = ll
    order = np.argsort(mu)
    return ReferenceCalibration(mu[order], w[order], ll * data.size, it)


# ---------------------------------------------------------------------------
# population inversion and thermometry


@dataclass(frozen=True)
class InferredPopulations:
    """Number-state populations inverted from bright probabilities."""

    populations: np.ndarray
    raw: np.ndarray
    clamped: bool


def infer_number_populations(bright_probs,
                             model: SidebandMapModel | None = None
                             ) -> InferredPopulations:
    """Invert bright probabilities (P_b(0), P_b(1), P_b(2)) into P(n).

    P(1) and P(2) divide out the mapping conversion factors; P(0) is fixed by
    normalization.  Raw values are clamped to [0, 1] and renormalized, with
    the clamping flagged.  A raw total beyond 1.05 raises an
    :class:`InconsistencyWarning` carrying the raw populations.
    """
    model = SidebandMapModel() if model is None else model
    pb = np.asarray(bright_probs, dtype=float).ravel()
    if pb.size != 3:
        raise ValueError("expected three bright probabilities")
    if np.any(pb < -1e-12) or abs(pb.sum() - 1.0) > 1e-6:
        raise ValueError(f"bright probabilities must lie on the simplex: {pb}")

    p1 = pb[1] / model.one_quantum
    p2 = pb[2] / model.two_quantum
    raw = np.array([1.0 - p1 - p2, p1, p2])
    if p1 + p2 > 1.05:
        warnings.warn(InconsistencyWarning(
            f"converted populations sum to {p1 + p2:.4f} > 1.05; "
            f"raw (P0, P1, P2) = {tuple(raw)}", tuple(raw)), stacklevel=2)
    clipped = np.clip(raw, 0.0, 1.0)
    clamped = bool(np.any(clipped != raw))
    return InferredPopulations(clipped / clipped.sum(), raw, clamped)


PROBE_WEIGHT = 1e-4  # squared half-angle of the default weak probe


def sideband_probe_signals(populations, angle: float | None = None
                           ) -> tuple[float, float]:
    """Spin-flip probabilities of subtracting/adding sideband probes.

    For a probe pulse of base angle ``angle`` on a number distribution, the
    subtracting probe flips with probability sin^2(angle*sqrt(n)/2) on |n>
    and the adding probe with sin^2(angle*sqrt(n+1)/2).  ``angle=None`` takes
    the weak-probe limit, where the pair is proportional to (<n>, <n>+1)
    exactly; the PROBE_WEIGHT prefactor only keeps the values probabilities.
    """
    p = np.asarray(populations, dtype=float).ravel()
    if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError("populations must form a normalized distribution")
    n = np.arange(p.size)
    if angle is None:
        nbar = float(p @ n)
        return PROBE_WEIGHT * nbar, PROBE_WEIGHT * (nbar + 1.0)
    if angle <= 0.0:
        raise ValueError("probe angle must be positive")
    p_mss = float(p @ np.sin(angle * np.sqrt(n) / 2.0) ** 2)
    p_mas = float(p @ np.sin(angle * np.sqrt(n + 1.0) / 2.0) ** 2)
    return p_mss, p_mas


def sideband_ratio_nbar(p_mss: float, p_mas: float) -> float:
    """Mean occupation from the sideband ratio r = P_MSS / P_MAS.

    nbar = r/(1-r).  Exact for thermal states at any probe strength and for
    any state in the weak-probe limit; biased otherwise.
    """
    if not (0.0 <= p_mss <= 1.0 and 0.0 <= p_mas <= 1.0):
        raise ValueError("sideband probabilities must lie in [0, 1]")
    if p_mas == 0.0:
        raise SidebandRatioError(
            "adding-sideband probability is zero; the ratio is undefined")
    r = p_mss / p_mas
    if r >= 1.0:
        raise SidebandRatioError(
            f"sideband ratio {r:.4f} >= 1 lies outside the thermal model")
    return r / (1.0 - r)


# ---------------------------------------------------------------------------
# motion-to-spin mapping channels for joint two-mode readout


def alternating_map_bright_probability(mapping: int, fidelity: float,
                                       max_n: int) -> np.ndarray:
    """P(center ion ends bright | n) for the number-selective mapping.

    The mapping-|k> pipeline peels k quanta with k sequential transfers
    (ideal shelving parks every stuck or failed branch in the dark manifold)
    and finishes with one more transfer emptying whatever is left: only |k>
    survives bright.  Each transfer succeeds with probability ``fidelity``;
    a failed final transfer leaves n > k branches erroneously bright.
    """
    if mapping not in (0, 1, 2):
        raise ValueError(f"mapping index must be 0, 1 or 2, got {mapping}")
    if not 0.0 < fidelity <= 1.0:
        raise ValueError("transfer fidelity must lie in (0, 1]")
    n = np.arange(max_n + 1)
    prob = np.zeros(max_n + 1)
    prob[n == mapping] = fidelity ** mapping
    prob[n > mapping] = fidelity ** mapping * (1.0 - fidelity)
    return prob


def stretch_map_bright_distribution(fidelity: float, max_n: int) -> np.ndarray:
    """P(number of bright outer ions | n) for the pair-distributed mapping.

    Each quantum (up to the two-ion capacity) is transferred onto one of the
    outer ions with probability ``fidelity``, darkening it; n = 1 lands the
    excitation on the ion pair symmetrically, so exactly one ion goes dark.
    Rows are distributions over 0..2 bright ions.
    """
    if not 0.0 < fidelity <= 1.0:
        raise ValueError("transfer fidelity must lie in (0, 1]")
    out = np.zeros((max_n + 1, 3))
    for n in range(max_n + 1):
        flips = min(n, 2)
        for s in range(flips + 1):
            out[n, 2 - s] = stats.binom.pmf(s, flips, fidelity)
    return out


def _classification_matrix(model: FluorescenceModel, thresholds: Thresholds,
                           max_bright: int) -> np.ndarray:
    """P(class | n_bright) under Poisson counts, shape (classes, max_bright+1)."""
    means = model.mean(np.arange(max_bright + 1))
    # class >= j iff counts exceed cut j; integer survival functions are exact
    exceed = np.array([stats.poisson.sf(t, means) for t in thresholds.cuts])
    upper = np.vstack([np.ones_like(means), exceed])
    lower = np.vstack([exceed, np.zeros_like(means)])
    return upper - lower


def _joint_number_populations(state, min_dim: int) -> np.ndarray:
    """Joint number distribution of a two-mode state or plain array."""
    if isinstance(state, JointState):
        dims = state.layout.dims
        modes = state.layout.mode_indices
        if len(modes) < 2:
            raise ValueError("need a state with at least two modes")
        diag = np.real(np.diag(state.rho)).reshape(dims)
        axes = tuple(i for i in range(len(dims)) if i not in modes[:2])
        p = diag.sum(axis=axes) if axes else diag
    else:
        p = np.asarray(state, dtype=float)
    if p.ndim != 2:
        raise ValueError("joint populations must be a two-axis array")
    if min(p.shape) < min_dim:
        raise ValueError(
            f"mode cutoff too small for the mapping pipelines: need at least "
            f"{min_dim} number states per mode, got {p.shape}")
    if np.any(p < -1e-9) or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError("joint populations must form a distribution")
    return np.maximum(p, 0.0) / p.sum()


def mapping_outcome_probabilities(state, mapping: int, *,
                                  be_fidelity: float = presets.RAP_FIDELITY["be"],
                                  mg_fidelity: float = presets.RAP_FIDELITY["mg"],
                                  be_model: FluorescenceModel = BE_MODEL,
                                  mg_model: FluorescenceModel = MG_MODEL,
                                  be_cuts: Thresholds = BE_CUTS,
                                  mg_cuts: Thresholds = MG_CUTS) -> np.ndarray:
    """Exact outcome probabilities P(be_class, mg_class) of one mapping run.

    Combines the stochastic mapping channels with the Poisson threshold
    confusion matrices; shape (3, 2) over (bright outer ions, center bright).
    """
    p = _joint_number_populations(state, 4)
    na, ns = p.shape
    q_bright = alternating_map_bright_probability(mapping, mg_fidelity, na - 1)
    be_dist = stretch_map_bright_distribution(be_fidelity, ns - 1)
    conf_mg = _classification_matrix(mg_model, mg_cuts, 1)    # (2, 2)
    conf_be = _classification_matrix(be_model, be_cuts, 2)    # (3, 3)

    # mapping and detection act on separate ions, but the modes can be
    # correlated: combine per joint (n_a, n_s) weight, not per marginal
    out = np.zeros((3, 2))
    for ia in range(na):
        mg = conf_mg @ np.array([1.0 - q_bright[ia], q_bright[ia]])
        for isv in range(ns):
            if p[ia, isv] == 0.0:
                continue
            be = conf_be @ be_dist[isv]
            out += p[ia, isv] * np.outer(be, mg)
    return out


def joint_mapping_channel(state, mapping: int, rng: np.random.Generator, *,
                          trials: int = 1,
                          be_fidelity: float = presets.RAP_FIDELITY["be"],
                          mg_fidelity: float = presets.RAP_FIDELITY["mg"],
                          be_model: FluorescenceModel = BE_MODEL,
                          mg_model: FluorescenceModel = MG_MODEL,
                          be_cuts: Thresholds = BE_CUTS,
                          mg_cuts: Thresholds = MG_CUTS
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Sample per-trial readout outcomes of one motion-to-spin mapping run.

    Draws a joint number state, passes it through the stochastic mapping
    channels (transfer infidelity leaves population behind), then samples
    fluorescence counts and classifies them.  Returns
    ``(bright outer ions in 0..2, center ion bright in 0..1)`` per trial.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    p = _joint_number_populations(state, 4)
    na, ns = p.shape
    q_bright = alternating_map_bright_probability(mapping, mg_fidelity, na - 1)
    be_dist = stretch_map_bright_distribution(be_fidelity, ns - 1)

    idx = rng.choice(na * ns, size=trials, p=p.ravel())
    n_a, n_s = np.divmod(idx, ns)
    mg_bright = rng.random(trials) < q_bright[n_a]
    cum = np.cumsum(be_dist[n_s], axis=1)
    be_bright = (rng.random(trials)[:, None] > cum).sum(axis=1)

    mg_counts = sample_counts(mg_model, mg_bright.astype(int), rng)
    be_counts = sample_counts(be_model, be_bright, rng)
    return classify(be_counts, be_cuts), classify(mg_counts, mg_cuts)


@dataclass(frozen=True)
class JointPopulationEstimate:
    """Joint number populations reconstructed from mapping-run outcomes."""

    populations: np.ndarray     # (3, 3) over (n_a, n_s)
    sigma: np.ndarray
    raw: np.ndarray
    trials: dict

    def __post_init__(self) -> None:
        if np.any(self.sigma < 0):
            raise ValueError("uncertainties cannot be negative")


def estimate_joint_populations(
        outcomes: Mapping[int, tuple[np.ndarray, np.ndarray]]
        ) -> JointPopulationEstimate:
    """Combine the three mapping runs into joint number populations.

    ``outcomes[k]`` holds the (be_classes, mg_classes) arrays of the
    mapping-|k> run.  A center-bright trial heralds n_a = k, and the number
    of dark outer ions gives n_s; raw frequencies N_i/N_rep are renormalized
    across the nine states, with binomial uncertainties sqrt(P(1-P)/N_rep).
    """
    missing = {0, 1, 2} - set(outcomes)
    if missing:
        raise ValueError(f"missing mapping runs: {sorted(missing)}")
    raw = np.zeros((3, 3))
    n_rep = np.zeros((3, 3))
    trials = {}
    for k in (0, 1, 2):
        be, mg = (np.asarray(a) for a in outcomes[k])
        if be.shape != mg.shape or be.ndim != 1 or be.size == 0:
            raise ValueError("mapping outcomes must be matching 1-D arrays")
        trials[k] = be.size
        herald = mg == 1
        for s in range(3):
            raw[k, s] = np.count_nonzero(herald & (be == 2 - s)) / be.size
        n_rep[k, :] = be.size
    total = raw.sum()
    if total == 0.0:
        raise ValueError("no center-bright heralds in any mapping run")
    populations = raw / total
    sigma = np.sqrt(populations * (1.0 - populations) / n_rep)
    return JointPopulationEstimate(populations, sigma, raw, trials)
