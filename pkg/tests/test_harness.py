from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import norm

from turbomud.errors import ConfigError
from turbomud.harness import (config_from_dict, parse_config_text,
                              preset_config, resolve_config, run_scenario,
                              single_user_bound)


def tiny_coded_cfg(**over):
    base = dict(channel="equicorrelated", users=2, rho=0.5, coded=True,
                generators="111,101", info_bits=64, detector="gaussian",
                schedule="flooding", outer_iterations=2, snr_db="4",
                seed=7, max_frames=2, min_error_events=1, frame_cap=2)
    base.update(over)
    return config_from_dict(base)


class TestConfigParsing:
    def test_flat_text_roundtrip(self):
        cfg = parse_config_text("""
            # scenario
            channel = equicorrelated
            users = 4
            rho = 0.7
            generators = 10011,11101
            snr_db = 1,2,3
            snr_fixed = 2:11
            estimate_sigma2 = true
        """)
        assert cfg.users == 4
        assert cfg.snr_db == (1.0, 2.0, 3.0)
        assert cfg.snr_fixed == {2: 11.0}
        assert cfg.estimate_sigma2 is True

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            parse_config_text("flux_capacitance = 11")

    def test_bad_values(self):
        with pytest.raises(ConfigError, match="rho"):
            config_from_dict(dict(rho=1.5))
        with pytest.raises(ConfigError, match="detector"):
            config_from_dict(dict(detector="psychic"))
        with pytest.raises(ConfigError, match="generators"):
            config_from_dict(dict(generators="111"))
        with pytest.raises(ConfigError, match="boolean"):
            config_from_dict(dict(coded="maybe"))

    def test_presets_resolve(self):
        for name in ("scenario-i", "scenario-ii", "ddf-two-user"):
            cfg = preset_config(name)
            assert cfg.validate() is cfg
        cfg = resolve_config("presets/scenario-i")
        assert cfg.users == 4 and cfg.rho == 0.7
        assert cfg.generators == "10011,11101"
        cfg2 = resolve_config("presets/scenario-ii")
        assert (cfg2.spreading_gain, cfg2.users) == (32, 32)
        assert cfg2.generators == "111,101"

    def test_missing_config(self):
        with pytest.raises(ConfigError, match="no config file or preset"):
            resolve_config("/nonexistent/path.cfg")


class TestRunScenario:
    def test_noiseless_channel_zero_errors(self):
        cfg = tiny_coded_cfg(snr_db="inf")
        report = run_scenario(cfg)
        for it in (1, 2):
            assert report.errors(float("inf"), it) == 0
            assert report.bits(float("inf"), it) == 2 * 2 * 64

    def test_error_accounting_exact(self):
        cfg = tiny_coded_cfg(snr_db="2")
        report = run_scenario(cfg)
        # total bits per cell = info_bits * frames for each user
        for user in (1, 2):
            assert report.bits(2.0, 1, user) == 64 * 2

    def test_deterministic_csv(self, tmp_path):
        cfg = tiny_coded_cfg(snr_db="3")
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        run_scenario(cfg).to_csv(p1)
        run_scenario(cfg).to_csv(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_worker_count_invariance(self, tmp_path):
        cfg = tiny_coded_cfg(snr_db="3", estimate_sigma2=True,
                             max_frames=3, frame_cap=3)
        r1 = run_scenario(replace(cfg, workers=1))
        r2 = run_scenario(replace(cfg, workers=2))
        p1, p2 = tmp_path / "w1.csv", tmp_path / "w2.csv"
        r1.to_csv(p1)
        r2.to_csv(p2)
        assert p1.read_bytes() == p2.read_bytes()
        e1, e2 = tmp_path / "w1em.csv", tmp_path / "w2em.csv"
        r1.em_to_csv(e1)
        r2.em_to_csv(e2)
        assert e1.read_bytes() == e2.read_bytes()

    def test_uncoded_ddf_preset_runs(self):
        cfg = preset_config("ddf-two-user")
        cfg = replace(cfg, snr_db=(14.0,), info_bits=256, max_frames=2,
                      frame_cap=2, min_error_events=1)
        report = run_scenario(cfg)
        assert report.bits(14.0, 1) == 2 * 2 * 256
        # five iterations recorded: DDF pass plus four refinement sweeps
        assert report.bits(14.0, 5) == report.bits(14.0, 1)

    def test_scenario_ii_preset_full_size_smoke(self):
        # one frame at the real 32x32 random-spreading size with joint
        # noise/amplitude estimation wired in
        cfg = replace(preset_config("scenario-ii"), snr_db=(6.0,),
                      max_frames=1, frame_cap=1, min_error_events=1)
        report = run_scenario(cfg)
        assert report.bits(6.0, cfg.outer_iterations) == 32 * 256
        assert (6.0, cfg.outer_iterations) in report.em

    def test_em_trajectory_recorded(self):
        cfg = tiny_coded_cfg(snr_db="4", estimate_sigma2=True)
        report = run_scenario(cfg)
        assert (4.0, 1) in report.em and (4.0, 2) in report.em

    def test_min_error_events_extends_past_budget(self):
        cfg = tiny_coded_cfg(snr_db="2", max_frames=1, frame_cap=40,
                             min_error_events=30)
        report = run_scenario(cfg)
        # ran more than the 1-frame budget to gather error events
        assert report.bits(2.0, 1) > 2 * 64 or \
            report.errors(2.0, 1) >= 30 or \
            report.bits(2.0, 1) == 40 * 2 * 64


class TestSingleUserBound:
    def test_uncoded_matches_gaussian_tail(self):
        # SNR = A^2/sigma2: uncoded BPSK error rate is Q(sqrt(snr))
        snr_db = 6.0
        cfg = config_from_dict(dict(
            channel="equicorrelated", users=1, rho=0.0, coded="false",
            info_bits=4096, detector="gaussian", schedule="flooding",
            outer_iterations=1, snr_db=str(snr_db), seed=3,
            max_frames=30, min_error_events=50, frame_cap=60))
        report = single_user_bound(cfg)
        ber = report.ber(snr_db, 1)
        expected = norm.sf(np.sqrt(10 ** (snr_db / 10.0)))
        assert abs(ber - expected) < 4 * report.stderr(snr_db, 1)

    def test_coded_high_snr_error_free(self):
        cfg = tiny_coded_cfg(snr_db="12", max_frames=2)
        report = single_user_bound(cfg)
        assert report.errors(12.0, cfg.outer_iterations) == 0

    def test_deterministic(self, tmp_path):
        cfg = tiny_coded_cfg(snr_db="5")
        a = single_user_bound(cfg)
        b = single_user_bound(cfg)
        pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
        a.to_csv(pa)
        b.to_csv(pb)
        assert pa.read_bytes() == pb.read_bytes()
