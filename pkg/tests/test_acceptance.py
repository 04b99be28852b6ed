"""End-to-end acceptance checks.

Each test certifies one advertised guarantee of the package at its stated
tolerance and runtime budget.  Run with ``pytest -v`` to get one pass/fail
line per guarantee.
"""

from __future__ import annotations

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
from scipy.linalg import null_space

from modecoupling import coupling, crystal, electrodes, hilbert, presets, qnd, readout, sequence
from modecoupling.hilbert import CouplingGenerator, JointState, Mode, NoiseModel, SpaceLayout
from modecoupling.polynomial import Polynomial3D
from modecoupling.units import TWO_PI

HEATING = NoiseModel(heating_rates={0: 60.0, 1: 1.0})


@contextmanager
def deadline(seconds: float):
    start = time.perf_counter()
    yield
    assert time.perf_counter() - start < seconds


def fringe_phase(x: np.ndarray, y: np.ndarray) -> float:
    design = np.column_stack([np.sin(x), np.cos(x), np.ones_like(x)])
    a, b, _ = np.linalg.lstsq(design, y, rcond=None)[0]
    return math.atan2(b, a)


def test_mode_structure_ratios_and_protected_center():
    # three equal ions: axial frequencies at {1, sqrt(3), sqrt(29/5)} times
    # the in-phase frequency; the calibrated Be-Mg-Be string leaves the
    # center ion motionless in the Stretch mode
    with deadline(1.0):
        be = presets.BE9
        trap = crystal.TrapPotential.from_frequencies(
            be, TWO_PI * 8.0e6, TWO_PI * 9.0e6, TWO_PI * 1.0e6
        )
        sol = crystal.normal_modes(crystal.CrystalConfig((be,) * 3, trap))
        ratios = sol.frequencies[presets.AXIAL] / sol.frequencies[presets.AXIAL][0]
        assert np.allclose(
            ratios, [1.0, math.sqrt(3.0), math.sqrt(29.0 / 5.0)], rtol=1e-9
        )

        bmb = presets.bmb_solution()
        xi_mg = crystal.participation(bmb, 1, presets.AXIAL, presets.STRETCH)
        assert abs(xi_mg) < 1e-10


def test_selection_rules_for_drive_parity():
    # even curvature across the string cannot couple the opposite-parity
    # mode pair; odd curvature makes the two end ions add constructively
    with deadline(1.0):
        sol = presets.bmb_solution()
        pair = presets.bmb_mode_pair()

        symmetric = coupling.DrivePolynomial(Polynomial3D({(0, 0, 2): 1.0e6}))
        g0, per_ion = coupling.coupling_strength(symmetric, sol, *pair)
        assert np.max(np.abs(per_ion)) > 0.0
        assert abs(g0) < 1e-12 * np.max(np.abs(per_ion))

        antisymmetric = coupling.DrivePolynomial(Polynomial3D({(0, 0, 3): 1.0e9}))
        g0, per_ion = coupling.coupling_strength(antisymmetric, sol, *pair)
        assert per_ion[1] == pytest.approx(0.0, abs=1e-12 * abs(g0))
        assert g0 == pytest.approx(2.0 * per_ion[0], rel=1e-10)
        assert g0 == pytest.approx(2.0 * per_ion[2], rel=1e-10)


def test_integrator_matches_closed_form_exchange():
    # noise-free master-equation integration against the closed-form
    # exchange amplitudes, for every Fock product with at most four total
    # quanta, across a full exchange period
    with deadline(30.0):
        g0 = 2.0 * math.pi * 2.55e3
        layout = SpaceLayout((Mode(5), Mode(5)))
        gen = CouplingGenerator(g0=g0, phase=0.45)
        for m in range(5):
            for n in range(5 - m):
                occ = (m, n)
                for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
                    t = frac * 2.0 * math.pi / g0
                    evolved = hilbert.evolve(
                        JointState.fock(layout, occ), gen, duration=t
                    )
                    amps = hilbert.analytic_exchange({occ: 1.0}, g0, 0.45, t)
                    psi = np.zeros(layout.dim, dtype=complex)
                    for p in range(amps.shape[0]):
                        for q in range(amps.shape[1]):
                            if p <= 5 and q <= 5:
                                psi[layout.index((p, q))] = amps[p, q]
                    rho_ref = np.outer(psi, psi.conj())
                    assert np.max(np.abs(evolved.rho - rho_ref)) < 1e-7


def test_swap_beamsplitter_and_storage_phase_ideals():
    with deadline(10.0):
        g0 = 1.0e4
        # full population transfer after a quarter exchange period
        layout = SpaceLayout((Mode(3), Mode(3)))
        swapped = hilbert.evolve(
            JointState.fock(layout, (1, 0)),
            CouplingGenerator(g0=g0),
            duration=math.pi / (2.0 * g0),
        )
        assert swapped.population((0, 1)) == pytest.approx(1.0, abs=1e-8)

        # two-quantum coincidence null at the balanced-beamsplitter point
        series = sequence.hom_interference(
            (1, 1), "duration", np.array([math.pi / (4.0 * g0)]), g0
        )
        assert series.columns["p11"][0] == pytest.approx(0.0, abs=1e-8)

        # storing (|0> + |1>)/sqrt(2) through two consecutive swaps flips
        # the fringe by pi relative to plain waiting
        phis = np.linspace(-math.pi, math.pi, 17)
        delay = sequence.ramsey_experiment("delay", phis, g0)
        double = sequence.ramsey_experiment("double-swap", phis, g0)
        dphi = fringe_phase(phis, double.columns["p_down"]) - fringe_phase(
            phis, delay.columns["p_down"]
        )
        assert abs(math.remainder(dphi, 2.0 * math.pi)) == pytest.approx(
            math.pi, abs=1e-6
        )


def test_heating_limited_swap_error_per_swap():
    # repeated swaps under 60 quanta/s on the hot mode and 1 quantum/s on
    # the protected one: the per-swap error fitted from F(M) = (1 - eps)^M
    # lands between 0.5 % and 1.5 %.  The quoted 100 us swap time pins the
    # exchange rate; each pulse is a true quarter period at that rate.
    with deadline(120.0):
        g0 = math.pi / (2.0 * 100e-6)
        result = sequence.swap_fidelity_decay(15, g0, noise=HEATING)
        assert 0.005 <= result.epsilon <= 0.015


def test_fit_recovery_of_exchange_rate_and_resonance():
    # synthetic noisy scans generated at the calibrated operating point are
    # recovered by the bundled fit models to 0.5 %
    with deadline(60.0):
        g0 = 0.5 * presets.EXCHANGE_RATE
        taus = np.linspace(0.0, 2.5 * math.pi / g0, 41)
        series = sequence.scan_duration(taus, g0, noise=HEATING)
        fit = sequence.fit_model(series.x, series.columns["p_b1"], "exchange")
        assert fit.params["rate"] == pytest.approx(presets.EXCHANGE_RATE, rel=5e-3)

        tau_s = math.pi / (2.0 * g0)
        freqs = presets.MODE_GAP + TWO_PI * np.linspace(-12e3, 12e3, 31)
        line = sequence.scan_frequency(
            freqs, g0, presets.MODE_GAP, duration=tau_s, noise=HEATING
        )
        lfit = sequence.fit_model(
            line.x, line.columns["p_a1"], "lineshape", duration=tau_s
        )
        assert lfit.params["center"] == pytest.approx(presets.MODE_GAP, rel=5e-3)


def test_readout_mle_recovery_and_conversion_factors():
    with deadline(60.0):
        # configured count levels: 30 bright photons over 2 (outer-ion) and
        # 1 (center-ion) background, thresholds at {13, 46} and 9
        assert [readout.BE_MODEL.mean(k) for k in (0, 1, 2)] == [2.0, 32.0, 62.0]
        assert [readout.MG_MODEL.mean(k) for k in (0, 1)] == [1.0, 31.0]
        assert [readout.classify(c, readout.BE_CUTS) for c in (13, 14, 46, 47)] \
            == [0, 1, 1, 2]
        assert [readout.classify(c, readout.MG_CUTS) for c in (9, 10)] == [0, 1]

        # mixture weights recovered within three reported standard errors
        means = (2.0, 32.0, 62.0)
        true = np.array([0.3, 0.45, 0.25])
        rng = np.random.default_rng(17)
        component = rng.choice(3, size=100_000, p=true)
        data = rng.poisson(np.asarray(means)[component])
        res = readout.mle_bright_probs(data, means)
        for k in range(3):
            assert abs(res.probs[k] - true[k]) < 3.0 * res.sigma[k]

        # bright probabilities convert to number populations through the
        # fixed 0.942 and 0.889 mapping efficiencies, applied exactly
        one = readout.infer_number_populations((0.058, 0.942, 0.0))
        assert np.allclose(one.populations, (0.0, 1.0, 0.0), atol=1e-12)
        two = readout.infer_number_populations((0.111, 0.0, 0.889))
        assert np.allclose(two.populations, (0.0, 0.0, 1.0), atol=1e-12)


def test_repeated_measurement_statistics():
    with deadline(300.0):
        rng = np.random.default_rng(20260814)
        noise = qnd.default_noise()
        runs = {
            n: qnd.run_repeated(0.023, qnd.ZERO_TO_DARK, n, 30_000, rng,
                                noise=noise)
            for n in (1, 2, 3)
        }

        # single-round dark fraction and two-round discard fraction
        assert abs(runs[1].probability(("d",)) - 0.960) < 0.015
        assert abs(qnd.post_select(runs[2]).discard - 0.078) < 0.03

        # conditioning on more trailing dark outcomes purifies the motional
        # state; ordering holds at Monte-Carlo resolution and the values sit
        # at the few-hundredths scale of the reference pattern
        last = qnd.conditioned_nbar(runs[3], (None, None, "d"))
        two = qnd.conditioned_nbar(runs[3], (None, "d", "d"))
        three = qnd.conditioned_nbar(runs[3], ("d", "d", "d"))
        slack = 1.5e-3  # three standard errors at 30k trials
        assert last >= two - slack
        assert two >= three - slack
        assert last > three
        for got, ref in zip((last, two, three), (0.034, 0.030, 0.027)):
            assert abs(got - ref) < 0.015

        # without imperfections every trial repeats its first outcome
        cfg = qnd.ProtocolConfig.ideal()
        series = qnd.run_repeated([0.7, 0.3], qnd.ZERO_TO_DARK, 3, 5000,
                                  np.random.default_rng(7), config=cfg)
        assert np.all(series.outcomes == series.outcomes[:, :1])


def test_occupation_from_sideband_ratio():
    # thermal states: nbar = r/(1 - r) at any probe strength; states with
    # support on {0, 1} satisfy the same identity in the weak-probe limit
    for nbar in (0.023, 0.1, 0.5, 2.0):
        pops = hilbert.thermal_populations(nbar, 140)
        for angle in (None, 0.7, math.pi):
            p_mss, p_mas = readout.sideband_probe_signals(pops, angle)
            est = readout.sideband_ratio_nbar(p_mss, p_mas)
            assert est == pytest.approx(nbar, rel=1e-9, abs=1e-12)
    for q in (0.0, 0.12, 0.37, 0.85):
        pops = np.array([1.0 - q, q])
        p_mss, p_mas = readout.sideband_probe_signals(pops, None)
        est = readout.sideband_ratio_nbar(p_mss, p_mas)
        assert est == pytest.approx(q, rel=1e-9, abs=1e-12)


def test_electrode_solver_oracle_and_optimality():
    with deadline(1.0):
        # mirror electrode pair, hand-solved: V = (v, -v) with
        # v = t/(c1 - c2) realizes the antisymmetric curvature target
        c1, c2, t = 1.7, 0.4, 0.9
        zz = np.array([[c1, c2], [c2, c1]])
        curvs = np.zeros((2, 2, 3, 3))
        curvs[:, :, 2, 2] = zz
        basis = electrodes.ElectrodeBasis(np.zeros((2, 2, 3)), curvs)
        target = electrodes.TargetSpec(
            desired=(electrodes.CurvatureTarget("zz", (t, -t)),)
        )
        sol = electrodes.solve_amplitudes(basis, target)
        v = t / (c1 - c2)
        assert sol.amplitudes == pytest.approx([v, -v], abs=1e-12)
        assert sol.feasible

        # twelve-electrode example: no feasible direction lowers the
        # weighted objective, so the returned point is first-order optimal
        basis, target = electrodes.synthetic_example()
        sol = electrodes.solve_amplitudes(basis, target)
        base = electrodes.evaluate_solution(basis, sol.amplitudes, target)
        a_hard = basis.curvatures[:, :, 2, 2].T
        null = null_space(a_hard)
        assert null.shape[1] > 0
        for k in range(null.shape[1]):
            for sign in (+1.0, -1.0):
                shifted = sol.amplitudes + sign * 1e-6 * null[:, k]
                probe = electrodes.evaluate_solution(basis, shifted, target)
                assert probe.objective >= base.objective - 1e-15
                assert probe.desired_error < 1e-9
