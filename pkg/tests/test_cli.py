import csv
import json

import numpy as np
import pytest

from regmz.cli import main
from regmz.datamat import load_data_matrix
from regmz.mzlearn import load_mz_model
from regmz.predict import kappas_of
from regmz.presets import ConfigError, preset_config, resolve_config

KAPPA_TOY_ROW = [0.002, 1.044, -0.046]


def read_table(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], np.array(rows[1:], dtype=float)


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    """Shared toy pipeline: generate, learn mori2, predict, evaluate."""
    root = tmp_path_factory.mktemp("toy")
    assert main(["generate", "--preset", "toy", "--seed", "7", "--tag", "mori2", "--out", str(root / "data")]) == 0
    assert main(["learn", "--data", str(root / "data"), "--tag", "mori2", "--out", str(root / "model")]) == 0
    assert main(["predict", "--model", str(root / "model"), "--data", str(root / "data"),
                 "--out", str(root / "pred")]) == 0
    assert main(["evaluate", "--model", str(root / "model"), "--data", str(root / "data"),
                 "--pred", str(root / "pred"), "--out", str(root / "eval")]) == 0
    return root


class TestConfig:
    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="data.n_trajectoriez"):
            resolve_config({"data": {"n_trajectoriez": 5}}, preset="toy")

    def test_unknown_section_named(self):
        with pytest.raises(ConfigError, match="bogus"):
            resolve_config({"bogus": {}}, preset="toy")

    def test_unknown_tag(self):
        with pytest.raises(ConfigError, match="cnn"):
            resolve_config({"learn": {"tags": ["cnn"]}}, preset="toy")

    def test_overrides_and_seed(self):
        cfg = resolve_config({"data": {"n_trajectories": 50}}, preset="toy", seed=3)
        assert cfg["data"]["n_trajectories"] == 50
        assert cfg["experiment"]["seed"] == 3
        assert cfg["predict"] == preset_config("toy")["predict"]

    def test_paper_scale(self):
        assert resolve_config(preset="lorenz63", scale="paper")["data"]["n_snapshots"] == 10**6

    def test_cli_rejects_bad_key(self, tmp_path, capsys):
        cfg = tmp_path / "bad.toml"
        cfg.write_text('[experiment]\npreset = "toy"\n[predict]\nhorizon = 3\n')
        assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 2
        assert "predict.horizon" in capsys.readouterr().err
        assert not (tmp_path / "d").exists()

    def test_toml_config(self, tmp_path):
        cfg = tmp_path / "small.toml"
        cfg.write_text('[experiment]\npreset = "toy"\nseed = 4\n'
                       '[data]\nn_trajectories = 30\nn_test_trajectories = 5\n')
        assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
        written = json.loads((tmp_path / "d" / "config.json").read_text())
        assert written["data"]["n_trajectories"] == 30
        assert written["experiment"]["seed"] == 4
        assert load_data_matrix(tmp_path / "d" / "train.mzdm").values.shape == (30, 1, 61)


class TestPipeline:
    def test_tag_matrix_shape(self, toy_run):
        D = load_data_matrix(toy_run / "data" / "train_mori2.mzdm")
        assert D.values.shape == (10**4, 3, 61)
        np.testing.assert_array_equal(D.values[:, 0], 1.0)
        np.testing.assert_allclose(D.values[:, 2], D.values[:, 1] ** 2, rtol=1e-14)

    def test_toy_kappa(self, toy_run):
        kappa = kappas_of(load_mz_model(toy_run / "model"))[0]
        np.testing.assert_allclose(kappa[1], KAPPA_TOY_ROW, atol=0.02)

    def test_rollout_files(self, toy_run):
        files = sorted((toy_run / "pred").glob("rollout_*.csv"))
        assert len(files) == 1000
        header, rows = read_table(files[0])
        assert header[0] == "time"
        assert rows.shape == (60, 1 + len(header) - 1)
        np.testing.assert_allclose(rows[:, 0], 0.05 * np.arange(1, 61), rtol=1e-12)

    def test_evaluation_tables(self, toy_run):
        header, mse = read_table(toy_run / "eval" / "toy_mori2_mse.csv")
        assert header == ["step", "time", "mse"]
        assert mse.shape == (60, 3)
        assert np.all(mse[:, 2] >= 0)
        summary = json.loads((toy_run / "eval" / "toy_mori2_summary.json").read_text())
        assert summary["config"]["diverged"] == []

    def test_diagnostics(self, toy_run):
        header, rows = read_table(toy_run / "model" / "diagnostics.csv")
        assert header[:3] == ["order", "fit_mse", "memory_norm"]
        assert "gfd_orthogonality" in header
        assert rows[0, header.index("gfd_orthogonality")] < 1e-9

    def test_truth_as_prediction_scores_zero(self, toy_run, tmp_path):
        pred = load_data_matrix(toy_run / "pred" / "pred.mzdm")
        test = load_data_matrix(toy_run / "data" / "test_mori2.mzdm")
        perfect = pred.replace(values=test.values[:, :, 1:61].copy())
        from regmz.datamat import save_data_matrix

        (tmp_path / "pred").mkdir()
        save_data_matrix(perfect, tmp_path / "pred" / "pred.mzdm")
        assert main(["evaluate", "--model", str(toy_run / "model"), "--data", str(toy_run / "data"),
                     "--pred", str(tmp_path / "pred"), "--out", str(tmp_path / "eval")]) == 0
        _, mse = read_table(tmp_path / "eval" / "toy_mori2_mse.csv")
        np.testing.assert_array_equal(mse[:, 2], 0.0)
        _, kl = read_table(tmp_path / "eval" / "toy_mori2_kl.csv")
        np.testing.assert_allclose(kl[:, -1], 0.0, atol=1e-12)

    def test_markov_only(self, toy_run, tmp_path):
        assert main(["predict", "--model", str(toy_run / "model"), "--data", str(toy_run / "data"),
                     "--markov-only", "--out", str(tmp_path)]) == 0
        a = load_data_matrix(tmp_path / "pred.mzdm")
        b = load_data_matrix(toy_run / "pred" / "pred.mzdm")
        assert a.attrs["mode"] == b.attrs["mode"]
        # the toy model has H = 1, so memory adds nothing
        np.testing.assert_array_equal(a.values, b.values)


class TestHashes:
    def test_mismatch_refused(self, toy_run, tmp_path, capsys):
        cfg = tmp_path / "other.toml"
        cfg.write_text('[experiment]\npreset = "toy"\nseed = 8\n')
        args = ["predict", "--config", str(cfg), "--model", str(toy_run / "model"),
                "--data", str(toy_run / "data"), "--out", str(tmp_path / "p")]
        assert main(args) == 2
        assert "hash mismatch" in capsys.readouterr().err
        assert main(args + ["--force"]) == 0
        assert (tmp_path / "p" / "pred.mzdm").exists()

    def test_learn_checks_data(self, toy_run, tmp_path):
        cfg = tmp_path / "other.toml"
        cfg.write_text('[experiment]\npreset = "toy"\nseed = 8\n')
        assert main(["learn", "--config", str(cfg), "--data", str(toy_run / "data"), "--tag", "mori2",
                     "--out", str(tmp_path / "m")]) == 2

    def test_missing_directory(self, tmp_path):
        assert main(["learn", "--data", str(tmp_path / "nope"), "--tag", "mori2",
                     "--out", str(tmp_path / "m")]) == 2


class TestDeterminism:
    def test_reproduce_identical(self, tmp_path):
        small = tmp_path / "small.toml"
        small.write_text('[experiment]\npreset = "toy"\n'
                         '[data]\nn_trajectories = 500\nn_test_trajectories = 50\n'
                         '[predict]\nn_rollouts = 50\n')
        for name in ("a", "b"):
            assert main(["reproduce", "toy", "--config", str(small), "--seed", "7",
                         "--out", str(tmp_path / name)]) == 0
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert len(files) > 20
        for rel in files:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel

    def test_seed_changes_data(self, tmp_path):
        small = tmp_path / "small.toml"
        small.write_text('[experiment]\npreset = "toy"\n[data]\nn_trajectories = 20\nn_test_trajectories = 5\n')
        for s in ("1", "2"):
            main(["generate", "--config", str(small), "--seed", s, "--out", str(tmp_path / s)])
        a = load_data_matrix(tmp_path / "1" / "train.mzdm").values
        b = load_data_matrix(tmp_path / "2" / "train.mzdm").values
        assert not np.array_equal(a, b)
