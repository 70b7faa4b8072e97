import pytest

from starcrs.config import (RunConfig, apply_env_seed, apply_overrides,
                            load_config, save_config)
from starcrs.errors import ConfigError


class TestValidation:
    def test_defaults_valid(self):
        RunConfig().validate()

    def test_negative_alpha_named(self):
        with pytest.raises(ConfigError) as ei:
            RunConfig(alpha=-1.0).validate()
        assert "alpha" in str(ei.value)

    def test_all_problems_listed(self):
        with pytest.raises(ConfigError) as ei:
            RunConfig(alpha=-1.0, tau=0.0, batch_size=0).validate()
        msg = str(ei.value)
        assert "alpha" in msg and "tau" in msg and "batch_size" in msg
        assert len(ei.value.problems) >= 3

    def test_head_divisibility(self):
        with pytest.raises(ConfigError) as ei:
            RunConfig(d=30, n_heads=4).validate()
        assert "n_heads" in str(ei.value)

    def test_prompt_budget_guard(self):
        with pytest.raises(ConfigError):
            RunConfig(conv_dialogue_budget=500).validate()

    def test_bad_decode_mode(self):
        with pytest.raises(ConfigError):
            RunConfig(decode="beam").validate()


class TestFileFormat:
    def test_round_trip(self, tmp_path):
        cfg = RunConfig(alpha=0.01, k_sim=3, entity_text_path=False,
                        corpus_path="x.jsonl")
        p = tmp_path / "run.cfg"
        save_config(cfg, p)
        assert load_config(p) == cfg

    def test_comments_and_blanks(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("# a comment\n\nalpha=0.5  # trailing note\n\nseed=7\n")
        cfg = load_config(p)
        assert cfg.alpha == 0.5
        assert cfg.seed == 7

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("alhpa=0.5\n")
        with pytest.raises(ConfigError) as ei:
            load_config(p)
        assert "alhpa" in str(ei.value)

    def test_bad_line_rejected(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("alpha 0.5\n")
        with pytest.raises(ConfigError) as ei:
            load_config(p)
        assert ":1:" in str(ei.value)

    def test_bool_parsing(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("entity_text_path=false\nrgcn_self=1\n")
        cfg = load_config(p)
        assert cfg.entity_text_path is False
        assert cfg.rgcn_self is True

    def test_bad_bool_value(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("entity_text_path=sometimes\n")
        with pytest.raises(ConfigError):
            load_config(p)


class TestOverrides:
    def test_override_chain(self):
        cfg = apply_overrides(RunConfig(), [("alpha", "0.01"), ("seed", "3")])
        assert cfg.alpha == 0.01 and cfg.seed == 3
        # original untouched
        assert RunConfig().alpha != 0.01

    def test_multiple_bad_overrides_all_reported(self):
        with pytest.raises(ConfigError) as ei:
            apply_overrides(RunConfig(), [("nope", "1"), ("alpha", "abc")])
        assert len(ei.value.problems) == 2


class TestEnvSeed:
    def test_env_overrides_seed(self, monkeypatch):
        monkeypatch.setenv("STARCRS_SEED", "99")
        assert apply_env_seed(RunConfig(seed=1)).seed == 99

    def test_env_absent_keeps_seed(self, monkeypatch):
        monkeypatch.delenv("STARCRS_SEED", raising=False)
        assert apply_env_seed(RunConfig(seed=1)).seed == 1

    def test_env_bad_value(self, monkeypatch):
        monkeypatch.setenv("STARCRS_SEED", "many")
        with pytest.raises(ConfigError):
            apply_env_seed(RunConfig())

    def test_load_applies_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("STARCRS_SEED", "42")
        p = tmp_path / "run.cfg"
        p.write_text("seed=5\n")
        assert load_config(p).seed == 42
