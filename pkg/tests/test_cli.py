import json

import numpy as np
import pytest

import condspec as cs
from condspec.checkpoint import load_checkpoint, save_checkpoint
from condspec.cli import main
from condspec.errors import ValidationError


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--N", "6", "--n", "64", "--seed", "4", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def fit_dir(tmp_path_factory, sim_dir):
    path = tmp_path_factory.mktemp("fit")
    code = main(["fit", "--series", str(sim_dir / "series.csv"),
                 "--outcomes", str(sim_dir / "outcomes.csv"),
                 "--iters", "60", "--burnin", "20", "--seed", "7",
                 "--nj", "6", "--nh", "3", "--out", str(path)])
    assert code == 0
    return path


class TestSimulate:
    def test_outputs_exist(self, sim_dir):
        assert (sim_dir / "series.csv").exists()
        assert (sim_dir / "outcomes.csv").exists()
        manifest = json.loads((sim_dir / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert manifest["seed"] == 4

    def test_simulated_data_loadable(self, sim_dir):
        data = cs.load_dataset(sim_dir / "series.csv", sim_dir / "outcomes.csv")
        assert (data.n_subjects, data.n_time, data.n_channels) == (6, 64, 3)


class TestFit:
    def test_outputs(self, fit_dir):
        assert (fit_dir / "chain.ckpt").exists()
        log = json.loads((fit_dir / "fit_log.json").read_text())
        assert log["iterations"] == 60
        assert log["retained"] == 40
        assert set(log["acceptance"]) == {"1", "2", "3"}
        manifest = json.loads((fit_dir / "manifest.json").read_text())
        assert "config_hash" in manifest and len(manifest["inputs"]) == 2

    def test_missing_outcomes_exit_2(self, sim_dir, tmp_path):
        code = main(["fit", "--series", str(sim_dir / "series.csv"),
                     "--outcomes", str(sim_dir / "missing.csv"),
                     "--iters", "30", "--burnin", "10", "--seed", "1",
                     "--out", str(tmp_path)])
        assert code == 2

    def test_rerun_bit_identical_checkpoint(self, sim_dir, fit_dir, tmp_path):
        code = main(["fit", "--series", str(sim_dir / "series.csv"),
                     "--outcomes", str(sim_dir / "outcomes.csv"),
                     "--iters", "60", "--burnin", "20", "--seed", "7",
                     "--nj", "6", "--nh", "3", "--out", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "chain.ckpt").read_bytes() == (fit_dir / "chain.ckpt").read_bytes()


class TestCheckpoint:
    def test_roundtrip(self, fit_dir):
        draws = load_checkpoint(fit_dir / "chain.ckpt")
        assert draws.n_channels == 3
        assert draws.n_retained == 40
        assert draws.config.n_j == 6

    def test_roundtrip_preserves_arrays(self, tmp_path):
        rng = np.random.default_rng(0)
        data = cs.from_arrays(rng.standard_normal((3, 32, 2)), [0.0, 0.7, 1.0])
        draws = cs.run_chain(data, cs.ModelConfig(iterations=20, burn_in=5,
                                                  n_j=3, n_h=2, seed=42))
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, draws)
        back = load_checkpoint(path)
        for kl in draws.eta_r:
            assert np.array_equal(back.eta_r[kl], draws.eta_r[kl])
        for k in draws.eta_d:
            assert np.array_equal(back.eta_d[k], draws.eta_d[k])
        for label in draws.tau2:
            assert np.array_equal(back.tau2[label], draws.tau2[label])
        assert np.array_equal(back.outcomes, draws.outcomes)
        assert back.acceptance == draws.acceptance

    def test_corruption_detected(self, fit_dir, tmp_path):
        blob = bytearray((fit_dir / "chain.ckpt").read_bytes())
        blob[-5] ^= 0xFF
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(bytes(blob))
        with pytest.raises(ValidationError, match="hash mismatch"):
            load_checkpoint(bad)

    def test_unknown_version_rejected(self, fit_dir, tmp_path):
        blob = bytearray((fit_dir / "chain.ckpt").read_bytes())
        blob[8] = 99
        bad = tmp_path / "vers.ckpt"
        bad.write_bytes(bytes(blob))
        with pytest.raises(ValidationError, match="version"):
            load_checkpoint(bad)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"definitely not a checkpoint")
        with pytest.raises(ValidationError, match="magic"):
            load_checkpoint(path)


class TestSummarize:
    def test_default_file_count_p3(self, fit_dir, tmp_path):
        code = main(["summarize", "--checkpoint", str(fit_dir / "chain.ckpt"),
                     "--out", str(tmp_path), "--ugrid", "11"])
        assert code == 0
        csvs = sorted(p.name for p in tmp_path.glob("*.csv"))
        assert len(csvs) == 15    # 3 logspec + 3 coherence + 9 band curves
        assert "logspec_p1.csv" in csvs and "cohhf_p1q3.csv" in csvs
        meta = json.loads((tmp_path / "metadata.json").read_text())
        assert meta["retained_draws"] == 40
        assert meta["hf_band"] == [0.15, 0.40]

    def test_custom_band_in_metadata(self, fit_dir, tmp_path):
        code = main(["summarize", "--checkpoint", str(fit_dir / "chain.ckpt"),
                     "--out", str(tmp_path), "--ugrid", "7",
                     "--band", "0.04:0.15"])
        assert code == 0
        meta = json.loads((tmp_path / "metadata.json").read_text())
        assert meta["hf_band"] == [0.04, 0.15]

    def test_idempotent_outputs(self, fit_dir, tmp_path_factory):
        a = tmp_path_factory.mktemp("sa")
        b = tmp_path_factory.mktemp("sb")
        for out in (a, b):
            assert main(["summarize", "--checkpoint", str(fit_dir / "chain.ckpt"),
                         "--out", str(out), "--ugrid", "9"]) == 0
        for name in (p.name for p in a.glob("*.csv")):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_derivatives_flag(self, fit_dir, tmp_path):
        code = main(["summarize", "--checkpoint", str(fit_dir / "chain.ckpt"),
                     "--out", str(tmp_path), "--ugrid", "9", "--derivatives"])
        assert code == 0
        assert (tmp_path / "dcohhf_p1q2.csv").exists()

    def test_bad_checkpoint_exit_2(self, tmp_path):
        junk = tmp_path / "x.ckpt"
        junk.write_bytes(b"nope")
        assert main(["summarize", "--checkpoint", str(junk),
                     "--out", str(tmp_path / "o")]) == 2

    def test_curve_csv_columns(self, fit_dir, tmp_path):
        main(["summarize", "--checkpoint", str(fit_dir / "chain.ckpt"),
              "--out", str(tmp_path), "--ugrid", "5"])
        header = (tmp_path / "hf_p1.csv").read_text().splitlines()[0]
        assert header == "u,mean,lo95,hi95"
        header = (tmp_path / "logspec_p2.csv").read_text().splitlines()[0]
        assert header == "omega,u,mean,lo95,hi95"


class TestStudyCommand:
    @pytest.mark.slow
    def test_smoke_and_assertions(self, tmp_path):
        code = main(["study", "--N", "8", "--n", "64", "--replicates", "2",
                     "--seed", "1", "--iters", "80", "--burnin", "30",
                     "--nj", "5", "--nh", "3", "--out", str(tmp_path),
                     "--assert", "coverage:0.0:1.0"])
        assert code == 0
        report = (tmp_path / "report.csv").read_text().splitlines()
        assert report[0].startswith("measure,estimator")
        bayes_rows = [line for line in report if ",bayes," in line]
        assert len(bayes_rows) == 9
        payload = json.loads((tmp_path / "report.json").read_text())
        assert payload["replicates"] == 2

    @pytest.mark.slow
    def test_failing_assertion_exit_1(self, tmp_path):
        code = main(["study", "--N", "8", "--n", "64", "--replicates", "1",
                     "--seed", "2", "--iters", "60", "--burnin", "20",
                     "--nj", "5", "--nh", "3", "--out", str(tmp_path),
                     "--assert", "coverage:0.9999:1.0"])
        assert code == 1

    def test_zero_replicates_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as err:
            main(["study", "--N", "8", "--n", "64", "--replicates", "0",
                  "--seed", "1", "--out", str(tmp_path)])
        assert err.value.code == 2


class TestParser:
    def test_unknown_command_rejected(self):
        with pytest.raises(SystemExit) as err:
            main(["frobnicate"])
        assert err.value.code == 2

    def test_band_parse_error(self, tmp_path):
        with pytest.raises(SystemExit) as err:
            main(["summarize", "--checkpoint", "x", "--out", str(tmp_path),
                  "--band", "nonsense"])
        assert err.value.code == 2
