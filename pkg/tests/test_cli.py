import json
import subprocess

import pytest

from ultrasnn import cli


def run_cli(args):
    return cli.run(args)


def train_args(out, extra=()):
    return [
        "train", "--dataset", "blobs", "--model", "ultralif", "--timesteps", "1",
        "--epochs", "2", "--hidden", "12", "--batch", "32", "--lr", "0.02",
        "--seed", "42", "--out", str(out), *extra,
    ]


class TestTrainCommand:
    def test_writes_all_artifacts(self, tmp_path):
        out = tmp_path / "run"
        assert run_cli(train_args(out)) == 0
        for name in ("metrics.csv", "summary.json", "checkpoint.npz",
                     "checkpoint_final.npz", "manifest.json", "config.txt",
                     "training_curves.png", "eps_trajectory.png"):
            path = out / name
            assert path.is_file() and path.stat().st_size > 0, name
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["config"]["seed"] == 42
        header = (out / "metrics.csv").read_text().splitlines()[0]
        assert header == "epoch,loss,acc,spike_soft,spike_hard,energy,eps_layer0,lr"

    def test_rerun_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_cli(train_args(a))
        run_cli(train_args(b))
        for name in ("metrics.csv", "checkpoint.npz", "summary.json", "config.txt"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_config_file_round_trip(self, tmp_path):
        a = tmp_path / "a"
        run_cli(train_args(a))
        b = tmp_path / "b"
        run_cli(train_args(b, extra=("--config", str(a / "config.txt"))))
        assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()

    def test_no_figures_flag(self, tmp_path):
        out = tmp_path / "nofig"
        run_cli(train_args(out, extra=("--no-figures",)))
        assert not (out / "training_curves.png").exists()
        assert (out / "metrics.csv").is_file()

    def test_missing_dataset_gives_io_exit(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ULTRASNN_DATA_DIR", str(tmp_path / "empty"))
        rc = run_cli(["train", "--dataset", "mnist", "--epochs", "1",
                      "--out", str(tmp_path / "x")])
        assert rc == cli.EXIT_IO


class TestIdxDatasetPath:
    def _write_idx_dataset(self, root):
        import struct

        rng = __import__("numpy").random.default_rng(5)
        d = root / "mnist"
        d.mkdir()

        def images(n):
            pix = rng.integers(0, 256, size=n * 36, dtype="u1")
            return struct.pack(">IIII", 2051, n, 6, 6) + pix.tobytes()

        def labels(n):
            lab = (rng.integers(0, 3, size=n)).astype("u1")
            return struct.pack(">II", 2049, n) + lab.tobytes()

        (d / "train-images-idx3-ubyte").write_bytes(images(60))
        (d / "train-labels-idx1-ubyte").write_bytes(labels(60))
        (d / "t10k-images-idx3-ubyte").write_bytes(images(20))
        (d / "t10k-labels-idx1-ubyte").write_bytes(labels(20))

    def test_train_and_eval_over_idx_files(self, tmp_path):
        self._write_idx_dataset(tmp_path)
        out = tmp_path / "run"
        rc = run_cli([
            "train", "--dataset", "mnist", "--data-dir", str(tmp_path),
            "--model", "ultradlif", "--timesteps", "2", "--epochs", "2",
            "--hidden", "8", "--batch", "16", "--subset", "40",
            "--seed", "42", "--out", str(out),
        ])
        assert rc == 0
        assert (out / "metrics.csv").is_file()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["dataset"] == "mnist"
        assert manifest["config"]["subset"] == 40
        rc = run_cli(["eval", "--checkpoint", str(out / "checkpoint.npz"),
                      "--dataset", "mnist", "--data-dir", str(tmp_path)])
        assert rc == 0


class TestEvalCommand:
    def test_eval_hard_spikes(self, tmp_path, capsys):
        out = tmp_path / "run"
        run_cli(train_args(out))
        rc = run_cli(["eval", "--checkpoint", str(out / "checkpoint.npz"),
                      "--dataset", "blobs", "--hard-spikes",
                      "--out", str(tmp_path / "ev")])
        assert rc == 0
        summary = json.loads((tmp_path / "ev" / "summary.json").read_text())
        assert summary["hard_spikes"] is True
        assert 0.0 <= summary["acc"] <= 1.0
        assert summary["energy"] == summary["spike_hard"] * 1


class TestGradcheckCommand:
    def test_all_ultra_kinds_pass(self):
        assert run_cli(["gradcheck", "--model", "all", "--fd-step", "1e-5"]) == 0

    def test_absurd_step_fails(self):
        rc = run_cli(["gradcheck", "--model", "ultralif", "--fd-step", "10.0"])
        assert rc == cli.EXIT_CHECK_FAILED

    def test_baseline_mismatch_demo(self):
        assert run_cli(["gradcheck", "--model", "lif"]) == 0

    def test_out_writes_report_and_manifest(self, tmp_path):
        out = tmp_path / "gc"
        assert run_cli(["gradcheck", "--model", "ultralif",
                        "--out", str(out)]) == 0
        payload = json.loads((out / "gradcheck.json").read_text())
        assert payload["passed"] is True
        assert payload["results"][0]["max_rel_err"] < 1e-4
        assert (out / "manifest.json").is_file()


class TestAblateCommand:
    def test_ablation_outputs(self, tmp_path):
        out = tmp_path / "abl"
        rc = run_cli([
            "ablate-eps", "--dataset", "blobs", "--model", "ultradlif",
            "--timesteps", "1", "--epochs", "2", "--hidden", "8",
            "--batch", "32", "--lr", "0.02", "--fixed", "0.5,1.0",
            "--out", str(out),
        ])
        assert rc == 0
        runs = json.loads((out / "ablation.json").read_text())
        assert [r["eps_mode"] for r in runs] == ["fixed:0.5", "fixed:1.0", "learned"]
        for r in runs:
            if r["eps_mode"].startswith("fixed"):
                want = float(r["eps_mode"].split(":")[1])
                assert r["final_eps"][0] == pytest.approx(want)
        assert (out / "eps_ablation.png").stat().st_size > 0


class TestAnalyzeCommand:
    def test_regions_formula_and_empirical(self, tmp_path, capsys):
        out = tmp_path / "ana"
        rc = run_cli(["analyze", "regions", "--hidden", "3", "--inputs", "2",
                      "--seed", "7", "--out", str(out)])
        assert rc == 0
        payload = json.loads((out / "analysis.json").read_text())
        assert payload["formula"] == 7
        assert payload["empirical"] == 7
        assert (out / "regions.png").stat().st_size > 0

    def test_zonotope_and_temporal(self, tmp_path):
        out = tmp_path / "z"
        assert run_cli(["analyze", "zonotope", "--hidden", "4", "--inputs", "2",
                        "--seed", "3", "--out", str(out)]) == 0
        payload = json.loads((out / "analysis.json").read_text())
        assert payload["volume"] > 0
        assert payload["diagnostics"]["capacity_lower_bound"] == 4
        out2 = tmp_path / "t"
        assert run_cli(["analyze", "temporal", "--hidden", "3", "--inputs", "2",
                        "--timesteps", "2", "--seed", "5", "--out", str(out2)]) == 0
        payload = json.loads((out2 / "analysis.json").read_text())
        assert payload["count"] <= payload["bound"] == 49

    def test_energy_report(self, tmp_path):
        run_dir = tmp_path / "run"
        run_cli(train_args(run_dir))
        out = tmp_path / "en"
        rc = run_cli(["analyze", "energy", "--metrics", str(run_dir / "metrics.csv"),
                      "--timesteps", "1", "--out", str(out)])
        assert rc == 0
        payload = json.loads((out / "analysis.json").read_text())
        for row in payload["rows"]:
            assert row["energy"] == row["spike_soft"] * 1

    def test_checkpoint_driven_analysis(self, tmp_path):
        run_dir = tmp_path / "run"
        run_cli(train_args(run_dir, extra=("--hidden", "5", "--blobs-dim", "2")))
        out = tmp_path / "ana"
        rc = run_cli(["analyze", "regions", "--checkpoint",
                      str(run_dir / "checkpoint.npz"), "--out", str(out)])
        assert rc == 0
        payload = json.loads((out / "analysis.json").read_text())
        assert payload["inputs"] == 2 and payload["hidden"] == 5
        assert payload["empirical"] <= payload["formula"]


class TestEntryPoint:
    def test_console_script_help(self):
        proc = subprocess.run(["ultrasnn", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0
        assert "train" in proc.stdout and "analyze" in proc.stdout

    def test_unknown_flag_is_config_error(self):
        proc = subprocess.run(["ultrasnn", "train", "--bogus"],
                              capture_output=True, text=True)
        assert proc.returncode == 2


class TestErrorCategories:
    def test_numeric_error_exit(self, tmp_path):
        # exact enumeration only supports n <= 2
        rc = run_cli(["analyze", "regions", "--hidden", "3", "--inputs", "5",
                      "--method", "exact", "--out", str(tmp_path / "x")])
        assert rc == cli.EXIT_NUMERIC


class TestAnalyzeDeterminism:
    def test_rerun_byte_identical_json(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run_cli(["analyze", "regions", "--hidden", "4", "--inputs", "2",
                            "--seed", "11", "--no-figures", "--out", str(out)]) == 0
        assert (a / "analysis.json").read_bytes() == (b / "analysis.json").read_bytes()
