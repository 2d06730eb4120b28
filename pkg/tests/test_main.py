"""Tests for the command-line entry point."""

import numpy as np
import pandas as pd
import pytest
import yaml

from main import EXIT_ERROR, EXIT_OK, main, read_dataset
from src.model_gen import ModelSpec, generate


@pytest.fixture(autouse=True)
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


@pytest.fixture
def data_files(workdir):
    data = generate(ModelSpec.unit_signal(40, sigma=0.2), 60, seed=3)
    y = np.where(data.a == 1.0, data.y, np.nan)
    paths = []
    for name, values in (("X", data.X), ("y", y), ("a", data.a)):
        path = workdir / f"{name}.csv"
        pd.DataFrame(values).to_csv(path, header=False, index=False)
        paths.append(str(path))
    return ",".join(paths), data


class TestReadDataset:
    def test_blank_outcomes_are_zeroed(self, data_files):
        paths, data = data_files
        loaded = read_dataset(paths, "identity")
        np.testing.assert_allclose(loaded.X, data.X)
        np.testing.assert_array_equal(loaded.y[data.a == 0], 0.0)
        assert loaded.is_whitened

    def test_needs_three_paths(self):
        with pytest.raises(ValueError):
            read_dataset("X.csv,y.csv", "identity")


class TestEstimateCommand:
    def test_writes_coefficients(self, data_files, workdir, capsys):
        paths, _ = data_files
        out = workdir / "coef.csv"
        code = main(["estimate", "--data", paths, "--lambda", "1", "--out", str(out)])
        assert code == EXIT_OK
        table = pd.read_csv(out)
        assert list(table.columns) == ["coordinate", "theta_de", "standard_error"]
        assert len(table) == 40
        assert "mu_out:" in capsys.readouterr().out

    def test_bad_data_argument(self):
        assert main(["estimate", "--data", "X.csv", "--lambda", "1"]) == EXIT_ERROR

    def test_oracle_methods_not_offered(self, data_files):
        paths, _ = data_files
        with pytest.raises(SystemExit):
            main(["estimate", "--data", paths, "--lambda", "1", "--method", "oracle-ascw"])


class TestSimulateCommand:
    def test_config_experiment(self, workdir):
        config = {
            "output_folder": str(workdir / "out"),
            "logs_folder": str(workdir / "logs"),
            "experiment": {
                "name": "cli",
                "model": {"sigma": 0.5},
                "n_grid": [60],
                "ratio": 0.1,
                "replicates": 5,
                "methods": ["ridge", "naive"],
            },
        }
        (workdir / "config.yaml").write_text(yaml.safe_dump(config))
        code = main(["simulate", "--replicates", "2", "--seed", "9"])
        assert code == EXIT_OK
        frame = pd.read_csv(workdir / "out" / "cli.csv")
        assert len(frame) == 2 * 2
        assert set(frame["seed"]) == {9 ^ 0, 9 ^ 1}
        assert (workdir / "logs" / "success.log").exists()

    def test_no_experiment(self):
        assert main(["simulate"]) == EXIT_ERROR
