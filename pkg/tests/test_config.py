"""Unit tests for configuration management."""

from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from src.config import (
    AppConfig,
    ExperimentConfig,
    LinkConfig,
    ModelSpecConfig,
    load_config,
    save_config,
)
from src.model_gen import LinkKind
from src.presets import (
    BASELINE_METHODS,
    DESK_REPLICATES,
    FULL_REPLICATES,
    Preset,
    build_preset,
    log_grid,
)

REPO_CONFIG = Path(__file__).resolve().parent.parent / "config.yaml"


class TestLinkConfig:
    def test_defaults(self):
        link = LinkConfig().build()
        assert link.kind == LinkKind.OFFSET_LOGISTIC
        assert link.floor == 0.1

    def test_invalid_kind(self):
        with pytest.raises(ValidationError, match="Invalid link kind"):
            LinkConfig(kind="probit")

    def test_tabulated_needs_table(self):
        with pytest.raises(ValidationError):
            LinkConfig(kind="tabulated")

    def test_tabulated_from_csv(self, tmp_path):
        path = tmp_path / "link.csv"
        path.write_text("eta,pi\n-2,0.12\n-1,0.27\n0,0.5\n1,0.73\n2,0.88\n")
        link = LinkConfig(kind="tabulated", table=path).build()
        assert float(link(0.0)) == pytest.approx(0.5)


class TestModelSpecConfig:
    def test_shorthand_vectors(self):
        spec = ModelSpecConfig(sigma=0.2).build(5)
        np.testing.assert_array_equal(spec.theta_out, [1, 0, 0, 0, 0])
        np.testing.assert_array_equal(spec.mu_x, np.zeros(5))
        assert spec.sigma == 0.2

    def test_dense_vectors(self):
        spec = ModelSpecConfig(theta_out=[0.5, -0.5], theta_prop="zero", mu_x="e1").build(2)
        np.testing.assert_array_equal(spec.theta_out, [0.5, -0.5])
        assert spec.mu_out == pytest.approx(0.5)

    def test_wrong_length(self):
        with pytest.raises(ValueError, match="theta_out"):
            ModelSpecConfig(theta_out=[1.0, 2.0]).build(3)

    def test_invalid_shorthand(self):
        with pytest.raises(ValidationError):
            ModelSpecConfig(theta_out="e2")

    def test_needs_dimension(self):
        with pytest.raises(ValueError, match="dimension"):
            ModelSpecConfig().build()

    def test_dotted_keys(self):
        config = ModelSpecConfig.model_validate({"link.floor": 0.2, "link": {"kind": "offset-logistic"}})
        assert config.link.floor == 0.2
        assert config.link.kind == "offset-logistic"

    def test_covariance_from_csv(self, tmp_path):
        path = tmp_path / "sigma.csv"
        path.write_text("2,0.5\n0.5,1\n")
        spec = ModelSpecConfig(sigma_matrix=str(path)).build(2)
        np.testing.assert_array_equal(spec.sigma_matrix, [[2.0, 0.5], [0.5, 1.0]])


class TestExperimentConfig:
    def test_defaults(self):
        config = ExperimentConfig()
        assert config.seed == 20240607
        assert config.omega == 0.05
        assert config.dimension(1000) == 1250

    def test_dimension_at_least_one(self):
        assert ExperimentConfig(ratio=0.001).dimension(100) == 1

    def test_flat_model_sizes(self):
        config = ExperimentConfig(model={"p": 30, "n": 250})
        assert config.n_grid == [250]
        assert config.dimension(250) == 30

    def test_explicit_grid_wins_over_model_n(self):
        config = ExperimentConfig(model={"n": 250}, n_grid=[100, 200])
        assert config.n_grid == [100, 200]

    def test_invalid_method(self):
        with pytest.raises(ValidationError, match="Invalid method"):
            ExperimentConfig(methods=["ridge", "lasso"])

    @pytest.mark.parametrize(
        "field, value",
        [
            ("n_grid", []),
            ("lam_grid", [1.0, 0.0]),
            ("seed", -1),
            ("seed", 2**64),
            ("route", "exact"),
            ("loss", "hinge"),
            ("baseline_outcome", "lasso"),
            ("baseline_link", "probit"),
            ("omega", 0.0),
        ],
    )
    def test_invalid_values(self, field, value):
        with pytest.raises(ValidationError):
            ExperimentConfig(**{field: value})


class TestAppConfig:
    def test_defaults(self):
        config = AppConfig()
        assert config.output_folder == Path("output")
        assert config.workers == 1
        assert config.experiment is None

    def test_workers_range(self):
        with pytest.raises(ValidationError):
            AppConfig(workers=0)

    def test_env_prefix(self, monkeypatch):
        monkeypatch.setenv("MARDEBIAS_WORKERS", "4")
        assert AppConfig().workers == 4

    def test_ensure_directories(self, tmp_path):
        config = AppConfig(output_folder=tmp_path / "out", logs_folder=tmp_path / "logs")
        config.ensure_directories()
        assert (tmp_path / "out").is_dir()
        assert (tmp_path / "logs").is_dir()


class TestLoadSave:
    def test_missing_file_gives_defaults(self, tmp_path):
        config = load_config(tmp_path / "absent.yaml")
        assert config.workers == 1

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        assert load_config(path).workers == 1

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("workers: [1, 2\n")
        with pytest.raises(ValueError, match="Invalid YAML"):
            load_config(path)

    def test_round_trip(self, tmp_path):
        path = tmp_path / "config.yaml"
        original = AppConfig(workers=3, experiment=build_preset("fig2"))
        save_config(original, path)
        loaded = load_config(path)
        assert loaded.workers == 3
        assert loaded.experiment == original.experiment

    def test_repository_config(self):
        config = load_config(REPO_CONFIG)
        assert config.experiment.name == "fig-debias-custom"
        assert config.experiment.model.link.floor == 0.1
        assert config.experiment.model.build(10).p == 10


class TestPresets:
    def test_log_grid(self):
        assert log_grid() == [100, 129, 167, 215, 278, 359, 464, 599, 774, 1000]

    @pytest.mark.parametrize("name", ["fig1", "fig2", "fig3"])
    def test_baseline_presets(self, name):
        config = build_preset(name)
        assert config.ratio == 0.07
        assert config.methods == BASELINE_METHODS
        assert config.replicates == DESK_REPLICATES
        assert config.misspecify_outcome == (name == "fig3")
        assert config.baseline_outcome == ("ridge" if name == "fig2" else "ols")

    def test_debias_preset(self):
        config = build_preset(Preset.FIG_DEBIAS, full_scale=True)
        assert config.replicates == FULL_REPLICATES
        assert config.ratio == 1.25
        assert config.model.sigma == 0.2
        assert "empirical-sca-moment" in config.methods

    def test_lambda_sweep_preset(self):
        config = build_preset("lambda-sweep")
        assert config.n_grid == [1000]
        assert len(config.lam_grid) == 8
        assert config.lam_grid[0] == pytest.approx(0.1)
        assert config.lam_grid[-1] == pytest.approx(10.0)

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            build_preset("fig9")
