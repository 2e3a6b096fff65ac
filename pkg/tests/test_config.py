import numpy as np
import pytest

from gfndiv.config import ConfigError, default_config, parse_config, parse_text, with_overrides
from gfndiv.envs import PhyloEnv, SetEnv, write_phylo_data


class TestParse:
    def test_minimal_config_resolves_defaults(self):
        cfg = parse_text("env = set\nobjective = revkl\n")
        assert (cfg.env.kind, cfg.env.D, cfg.env.N) == ("set", 32, 16)
        assert cfg.objective.kind == "revkl" and cfg.objective.cv and cfg.objective.loo
        assert (cfg.train.steps, cfg.train.batch, cfg.train.seeds) == (512, 128, (0, 1, 2))
        assert (cfg.train.lr, cfg.train.lr_log_z, cfg.train.power) == (1e-3, 1e-1, 1.0)
        assert cfg.variance.batches == (32, 64, 128, 256, 512, 1024)
        assert cfg.variance.repetitions == 100

    def test_phylo_batch_default(self):
        assert default_config("phylo").train.batch == 64

    def test_sections(self):
        cfg = parse_text("env = seq\nobjective = renyi\n[env]\nD = 3\nN = 2\n[objective]\nalpha = -2\ncv = off\n[train]\nseeds = 4,5\n")
        assert (cfg.env.D, cfg.env.N) == (3, 2)
        assert cfg.objective.alpha == -2.0 and not cfg.objective.cv
        assert cfg.train.seeds == (4, 5)
        spec = cfg.divergence()
        assert spec.kind == "renyi" and not spec.cv.use_score_cv and spec.cv.use_loo

    def test_comments_ignored(self):
        cfg = parse_text("# a run\nenv = set ; inline\n[env]\nD = 5  # five\nN = 2\n")
        assert cfg.env.D == 5

    def test_alpha_one_rejected_with_line(self):
        with pytest.raises(ConfigError, match=r"<config>:4: .*alpha = 1"):
            parse_text("env = set\nobjective = renyi\n[objective]\nalpha = 1\n")

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match=r":3: unknown key 'learning_rate'"):
            parse_text("env = set\n[train]\nlearning_rate = 0.1\n")

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match=r"unknown section \[model\]"):
            parse_text("[model]\nwidth = 3\n")

    def test_d_less_than_n(self):
        with pytest.raises(ConfigError, match=r":3: set env needs D >= N"):
            parse_text("env = set\n[env]\nD = 2\nN = 4\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError, match=r":2: bad value for train.steps"):
            parse_text("[train]\nsteps = many\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="no such config file"):
            parse_config(tmp_path / "absent.ini")

    def test_file_path_in_errors(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("env = set\n[env]\nwidth = 3\n")
        with pytest.raises(ConfigError, match="run.ini:3:"):
            parse_config(path)


class TestOverrides:
    def test_override_value(self):
        cfg = with_overrides(default_config(), ["train.steps=10", "env.D=6", "env.N=3"])
        assert (cfg.train.steps, cfg.env.D, cfg.env.N) == (10, 6, 3)

    def test_override_validated(self):
        with pytest.raises(ConfigError):
            with_overrides(default_config(), ["train.nonsense=1"])

    def test_override_shape(self):
        with pytest.raises(ConfigError):
            with_overrides(default_config(), ["steps=1"])

    def test_env_switch_resets_env_defaults(self):
        cfg = with_overrides(default_config("set"), ["env.kind=phylo"])
        assert cfg.env.kind == "phylo" and cfg.env.species == 7 and cfg.train.batch == 64

    def test_roundtrip_preserves_everything(self):
        cfg = parse_text("env = seq\nobjective = tsallis\n[env]\nD = 3\nN = 2\nf = 0.1,0.2,0.3\n[objective]\nalpha = 2\n")
        assert with_overrides(cfg, ["train.hidden=64"]).flat() == cfg.flat()


class TestBuildEnv:
    def test_tables_drawn_from_env_seed(self):
        a = with_overrides(default_config(), ["env.D=6", "env.N=3"]).build_env()
        b = with_overrides(default_config(), ["env.D=6", "env.N=3"]).build_env()
        c = with_overrides(default_config(), ["env.D=6", "env.N=3", "env.seed=1"]).build_env()
        assert isinstance(a, SetEnv)
        np.testing.assert_array_equal(a.f, b.f)
        assert not np.array_equal(a.f, c.f)
        assert np.all(np.abs(a.f) <= 1.0)

    def test_explicit_table(self):
        env = parse_text("[env]\nD = 3\nN = 2\nf = 1,2,3\n").build_env()
        np.testing.assert_array_equal(env.f, [1.0, 2.0, 3.0])

    def test_table_length_checked(self):
        with pytest.raises(ConfigError, match="f must list D=3"):
            parse_text("[env]\nD = 3\nN = 2\nf = 1,2\n")

    def test_phylo_data_file(self, tmp_path):
        path = tmp_path / "species.txt"
        write_phylo_data(path, ["a", "b", "c"], np.array([[0, 1], [2, 3], [0, 0]]))
        env = parse_text(f"env = phylo\n[env]\ndata = {path}\n").build_env()
        assert isinstance(env, PhyloEnv) and env.names == ["a", "b", "c"]
