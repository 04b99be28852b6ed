from __future__ import annotations

import math

import numpy as np
import pytest

from modecoupling import config
from modecoupling.crystal import ConfigurationError
from modecoupling.units import TWO_PI

MINIMAL_MODES = """
[crystal]
species = ["Be9", "Mg25", "Be9"]

[crystal.trap]
radial_x = "8.0 MHz"
radial_y = "8.5 MHz"
axial = "2.0 MHz"

[experiment]
kind = "modes"
"""

PAIR_BLOCKS = """
[crystal]
species = ["Be9", "Mg25", "Be9"]

[crystal.trap]
radial_x = "8.0 MHz"
radial_y = "8.5 MHz"
axial = "2.0 MHz"
mode_gap = "0.283 MHz"

[drive]
beta = 0.286
ramp_time = "20 us"
calibrate_exchange = "5.1 kHz"
axis = "z"
mode_a = "alternating"
mode_b = "stretch"

[drive.polynomial]
z3 = 1.0
"""


class TestQuantities:
    def test_frequency_suffix_stored_as_angular(self):
        text = MINIMAL_MODES.replace('axial = "2.0 MHz"', 'axial = "3.66 MHz"')
        cfg = config.parse_config(text)
        assert cfg.crystal.trap.axial == pytest.approx(TWO_PI * 3.66e6, rel=1e-15)

    def test_time_and_mass_suffixes(self):
        text = PAIR_BLOCKS + "\n[experiment]\nkind = \"couple\"\n"
        cfg = config.parse_config(text)
        assert cfg.drive.ramp_time == pytest.approx(20e-6, rel=1e-15)
        amu = 9.0121831
        assert cfg.crystal.species[0].mass == pytest.approx(amu * 1.66053906892e-27,
                                                            rel=1e-6)

    def test_bare_numbers_are_si(self):
        text = MINIMAL_MODES.replace('axial = "2.0 MHz"', "axial = 12566370.0")
        cfg = config.parse_config(text)
        assert cfg.crystal.trap.axial == 12566370.0

    def test_wrong_unit_rejected(self):
        text = MINIMAL_MODES.replace('axial = "2.0 MHz"', 'axial = "2.0 us"')
        with pytest.raises(ConfigurationError, match="axial"):
            config.parse_config(text)

    def test_custom_species_table(self):
        text = MINIMAL_MODES.replace(
            'species = ["Be9", "Mg25", "Be9"]',
            'species = [{ name = "Ca40", mass = "39.9625909 amu" }]',
        )
        cfg = config.parse_config(text)
        assert cfg.crystal.species[0].name == "Ca40"
        assert cfg.crystal.species[0].mass == pytest.approx(6.636e-26, rel=1e-3)

    def test_unknown_species_name(self):
        text = MINIMAL_MODES.replace('"Mg25"', '"Xx99"')
        with pytest.raises(ConfigurationError, match="Xx99"):
            config.parse_config(text)


class TestUnknownKeys:
    def test_misspelled_key_named_with_line(self):
        text = MINIMAL_MODES.replace("radial_y", "radail_y")
        line = text.splitlines().index('radail_y = "8.5 MHz"') + 1
        with pytest.raises(ConfigurationError,
                           match=rf"unknown key 'crystal\.trap\.radail_y' \(line {line}\)"):
            config.parse_config(text)

    def test_unknown_top_level_section(self):
        with pytest.raises(ConfigurationError, match="unknown key 'lasers'"):
            config.parse_config(MINIMAL_MODES + "\n[lasers]\npower = 1.0\n")

    def test_unknown_experiment_key(self):
        text = MINIMAL_MODES + "repetitions = 5\n"
        with pytest.raises(ConfigurationError, match="repetitions"):
            config.parse_config(text)

    def test_key_of_other_experiment_rejected(self):
        text = MINIMAL_MODES + "trials = 100\n"
        with pytest.raises(ConfigurationError,
                           match="does not apply to experiment 'modes'"):
            config.parse_config(text)

    def test_unknown_noise_mode_name(self):
        text = MINIMAL_MODES + "\n[noise.heating]\nin_phase = 750.0\n"
        with pytest.raises(ConfigurationError, match="in_phase"):
            config.parse_config(text)


class TestStructure:
    def test_missing_experiment_block(self):
        with pytest.raises(ConfigurationError, match=r"missing \[experiment\]"):
            config.parse_config("[crystal]\nspecies = [\"Be9\"]\n")

    def test_unknown_kind(self):
        text = MINIMAL_MODES.replace('kind = "modes"', 'kind = "tomography"')
        with pytest.raises(ConfigurationError, match="tomography"):
            config.parse_config(text)

    def test_missing_required_block(self):
        with pytest.raises(ConfigurationError, match=r"\[crystal\] block"):
            config.parse_config('[experiment]\nkind = "modes"\n')
        text = MINIMAL_MODES.replace('kind = "modes"', 'kind = "couple"')
        with pytest.raises(ConfigurationError, match=r"\[drive\] block"):
            config.parse_config(text)

    def test_empty_species(self):
        text = MINIMAL_MODES.replace('species = ["Be9", "Mg25", "Be9"]',
                                     "species = []")
        with pytest.raises(ConfigurationError, match="species"):
            config.parse_config(text)

    def test_bad_monomial_key(self):
        text = PAIR_BLOCKS.replace("z3 = 1.0", "w3 = 1.0")
        text += "\n[experiment]\nkind = \"couple\"\n"
        with pytest.raises(ConfigurationError, match="w3"):
            config.parse_config(text)

    def test_duplicate_monomial(self):
        text = PAIR_BLOCKS.replace("z3 = 1.0", "z3 = 1.0\nzzz = 2.0")
        text += "\n[experiment]\nkind = \"couple\"\n"
        with pytest.raises(ConfigurationError, match="duplicate monomial"):
            config.parse_config(text)

    def test_same_mode_pair_rejected(self):
        text = PAIR_BLOCKS.replace('mode_b = "stretch"', 'mode_b = "alternating"')
        text += "\n[experiment]\nkind = \"couple\"\n"
        with pytest.raises(ConfigurationError, match="must differ"):
            config.parse_config(text)

    def test_grid_validation(self):
        head = PAIR_BLOCKS + "\n[experiment]\nkind = \"scan-time\"\n"
        with pytest.raises(ConfigurationError, match="requires key 'experiment.grid'"):
            config.parse_config(head)
        with pytest.raises(ConfigurationError, match="points"):
            config.parse_config(
                head + '[experiment.grid]\nstart = "0 us"\nstop = "1 us"\npoints = 1\n'
            )
        with pytest.raises(ConfigurationError, match="missing required key 'stop'"):
            config.parse_config(
                head + '[experiment.grid]\nstart = "0 us"\npoints = 5\n'
            )
        with pytest.raises(ConfigurationError, match="values list is empty"):
            config.parse_config(head + "[experiment.grid]\nvalues = []\n")

    def test_grid_values_and_linspace_agree(self):
        head = PAIR_BLOCKS + "\n[experiment]\nkind = \"scan-time\"\n"
        spanned = config.parse_config(
            head + '[experiment.grid]\nstart = "0 us"\nstop = "100 us"\npoints = 5\n'
        )
        listed = config.parse_config(
            head + '[experiment.grid]\nvalues = ["0 us", "25 us", "50 us", "75 us", "100 us"]\n'
        )
        assert np.allclose(spanned.experiment.grid, listed.experiment.grid,
                           rtol=0.0, atol=1e-18)

    def test_qnd_missing_counts(self):
        text = PAIR_BLOCKS + "\n[experiment]\nkind = \"qnd\"\nseed = 7\nrounds = 2\n"
        with pytest.raises(ConfigurationError, match="experiment.trials"):
            config.parse_config(text)

    def test_stochastic_requires_seed(self):
        text = PAIR_BLOCKS + "\n[experiment]\nkind = \"qnd\"\ntrials = 10\nrounds = 1\n"
        with pytest.raises(ConfigurationError, match="seed"):
            config.parse_config(text)
        cfg = config.parse_config(text, seed=123)
        assert cfg.experiment.seed == 123

    def test_seed_range(self):
        text = PAIR_BLOCKS + (
            "\n[experiment]\nkind = \"qnd\"\ntrials = 10\nrounds = 1\nseed = -1\n"
        )
        with pytest.raises(ConfigurationError, match="seed"):
            config.parse_config(text)

    def test_invalid_toml_reported(self):
        with pytest.raises(ConfigurationError, match="not valid TOML"):
            config.parse_config("[experiment\nkind = modes")


class TestDefaults:
    def test_empty_noise_block_means_no_imperfections(self):
        cfg = config.parse_config(MINIMAL_MODES + "\n[noise]\n")
        noise = cfg.noise
        assert noise.heating == () and noise.dephasing == ()
        assert noise.recoil_kick == 0.0 and noise.readout_flip == 0.0
        assert noise.rap_fidelity == ()

    def test_absent_noise_block_is_none(self):
        assert config.parse_config(MINIMAL_MODES).noise is None

    def test_kind_specific_defaults(self):
        text = PAIR_BLOCKS + (
            "\n[experiment]\nkind = \"hom\"\nscan = \"phase\"\n"
            "[experiment.grid]\nstart = 0.0\nstop = 6.28\npoints = 5\n"
        )
        cfg = config.parse_config(text)
        assert cfg.experiment.initial == "11"
        text = PAIR_BLOCKS + (
            "\n[experiment]\nkind = \"ramsey\"\n"
            "[experiment.grid]\nstart = 0.0\nstop = 6.28\npoints = 5\n"
        )
        assert config.parse_config(text).experiment.variant == "delay"

    def test_output_defaults(self):
        out = config.parse_config(MINIMAL_MODES).output
        assert out.directory == "." and out.format == "csv" and out.basename is None


class TestCanonicalForm:
    def full_text(self) -> str:
        return PAIR_BLOCKS + (
            "\n[noise]\nrecoil_kick = 0.012\nreadout_flip = 0.02\n"
            "[noise.heating]\nalternating = \"60 /s\"\nstretch = \"1 /s\"\n"
            "[noise.rap_fidelity]\nbe = 0.95\nmg = 0.94\n"
            "\n[experiment]\nkind = \"qnd\"\nseed = 42\ntrials = 100\nrounds = 2\n"
            "variant = \"zero-to-bright\"\ninitial_nbar = 0.05\ncutoff = 5\n"
            "\n[output]\ndirectory = \"out\"\nformat = \"json\"\nbasename = \"r\"\n"
        )

    def test_round_trip_identity(self):
        cfg = config.parse_config(self.full_text())
        again = config.parse_config(config.emit_canonical(cfg))
        assert again == cfg

    def test_hash_ignores_formatting(self):
        text = self.full_text()
        cfg = config.parse_config(text)
        noisy = text.replace("seed = 42", "seed   =   42  # the answer")
        assert config.config_hash(config.parse_config(noisy)) == config.config_hash(cfg)

    def test_hash_tracks_values(self):
        cfg = config.parse_config(self.full_text())
        other = config.parse_config(self.full_text().replace("seed = 42", "seed = 43"))
        assert config.config_hash(other) != config.config_hash(cfg)

    def test_grid_survives_round_trip(self):
        text = PAIR_BLOCKS + (
            "\n[experiment]\nkind = \"scan-freq\"\n"
            "[experiment.grid]\nstart = \"0.275 MHz\"\nstop = \"0.291 MHz\"\npoints = 7\n"
        )
        cfg = config.parse_config(text)
        assert cfg.experiment.grid[0] == pytest.approx(TWO_PI * 0.275e6, rel=1e-15)
        again = config.parse_config(config.emit_canonical(cfg))
        assert again.experiment.grid == cfg.experiment.grid


class TestRngStreams:
    def test_same_seed_same_stream(self):
        a = config.rng_stream(2026, "qnd").integers(0, 1 << 30, 8)
        b = config.rng_stream(2026, "qnd").integers(0, 1 << 30, 8)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        a = config.rng_stream(2026, "qnd").integers(0, 1 << 30, 8)
        b = config.rng_stream(2027, "qnd").integers(0, 1 << 30, 8)
        assert not np.array_equal(a, b)

    def test_unknown_stream(self):
        with pytest.raises(ConfigurationError, match="stream"):
            config.rng_stream(1, "dice")

    def test_full_seed_width_accepted(self):
        config.rng_stream(2**64 - 1, "qnd")
        with pytest.raises(ConfigurationError):
            config.rng_stream(2**64, "qnd")
