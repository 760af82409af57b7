import json

import numpy as np
from PIL import Image

from cfpnet.cli import dispatch


def _synth(out, n=6, size="32x32", seed=0, extra=()):
    return dispatch(
        ["synth", "--n", str(n), "--size", size, "--ratio", "0.25", "--seed", str(seed), "--out", str(out), *extra]
    )


class TestSynth:
    def test_writes_pairs_and_effective_config(self, tmp_path):
        out = tmp_path / "ds"
        assert _synth(out) == 0
        assert len(list((out / "images").glob("*.png"))) == 6
        assert len(list((out / "masks").glob("*.png"))) == 6
        config = json.loads((out / "effective_config.json").read_text())
        assert config["command"] == "synth" and config["n"] == 6

    def test_group_labels_written(self, tmp_path):
        out = tmp_path / "ds"
        assert _synth(out, extra=("--groups", "3")) == 0
        assert (out / "groups.csv").exists()

    def test_same_seed_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert _synth(a, seed=5) == 0 and _synth(b, seed=5) == 0
        for name in sorted(p.name for p in (a / "images").iterdir()):
            assert (a / "images" / name).read_bytes() == (b / "images" / name).read_bytes()
            assert (a / "masks" / name).read_bytes() == (b / "masks" / name).read_bytes()


class TestMetricsCommand:
    def test_self_comparison(self, tmp_path, capsys):
        img = (np.random.default_rng(0).random((16, 16)) * 255).astype(np.uint8)
        path = tmp_path / "a.png"
        Image.fromarray(img).save(path)
        assert dispatch(["metrics", str(path), str(path)]) == 0
        values = json.loads(capsys.readouterr().out)
        assert values["jaccard"] == 1.0
        assert values["tanimoto"] == 1.0
        assert values["mae"] == 0.0

    def test_missing_file_is_a_clean_error(self, tmp_path, capsys):
        code = dispatch(["metrics", str(tmp_path / "missing.png"), str(tmp_path / "missing.png")])
        assert code != 0
        assert "error:" in capsys.readouterr().err


class TestInspect:
    def test_prints_parameters_and_receptive_field(self, capsys, tmp_path):
        assert dispatch(["inspect", "--model", "cfpnet-m", "--input", "256x128", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "parameters: 681577" in out
        assert "receptive field stage1: 11" in out
        assert (tmp_path / "complexity.json").exists()
        assert (tmp_path / "complexity.csv").exists()
        assert (tmp_path / "layer_audit.json").exists()
        audit = (tmp_path / "layer_audit.csv").read_text().strip().splitlines()
        assert len(audit) == 1 + 17

    def test_unet_inspect(self, capsys):
        assert dispatch(["inspect", "--model", "unet-32", "--input", "64x64"]) == 0
        assert "parameters: 7760097" in capsys.readouterr().out


class TestBenchmark:
    def test_report_written(self, tmp_path, capsys):
        assert dispatch(
            ["benchmark", "--model", "cfpnet-m", "--input", "32x32", "--frames", "3", "--warmup", "1", "--out", str(tmp_path)]
        ) == 0
        report = json.loads((tmp_path / "speed_report.json").read_text())
        assert report["frames"] == 3
        assert "fps" in capsys.readouterr().out


class TestStability:
    def test_sweep_csv(self, tmp_path):
        assert dispatch(
            ["stability", "--sizes", "32", "64", "--ratios", "0.2", "0.4", "--perturbation", "0.1", "--out", str(tmp_path)]
        ) == 0
        lines = (tmp_path / "stability.csv").read_text().strip().splitlines()
        assert lines[0] == "size,ratio,metric,value"
        assert len(lines) == 1 + 2 * 2 * 3


class TestPipeline:
    def test_synth_then_cross_validate_then_predict(self, tmp_path, capsys):
        dataset = tmp_path / "ds"
        assert _synth(dataset, n=10, seed=7) == 0

        cv_out = tmp_path / "cv"
        assert dispatch(
            [
                "cross-validate", "--dataset", str(dataset), "--k", "5",
                "--epochs", "1", "--batch", "2", "--seed", "7", "--out", str(cv_out),
            ]
        ) == 0
        report = json.loads((cv_out / "crossval_report.json").read_text())
        assert report["k"] == 5 and len(report["fold_values"]) == 5
        assert (cv_out / "crossval_report.csv").exists()

        train_out = tmp_path / "run"
        assert dispatch(
            [
                "train", "--dataset", str(dataset), "--epochs", "1", "--batch", "2",
                "--seed", "7", "--out", str(train_out),
            ]
        ) == 0
        assert (train_out / "checkpoint.pt").exists()
        log = (train_out / "training_log.csv").read_text().splitlines()
        assert log[0] == "epoch,train_loss,val_tanimoto" and len(log) == 2

        pred_out = tmp_path / "preds"
        assert dispatch(
            [
                "predict", "--dataset", str(dataset), "--checkpoint", str(train_out / "checkpoint.pt"),
                "--out", str(pred_out),
            ]
        ) == 0
        assert len(list(pred_out.glob("synth-*.png"))) == 10

    def test_reports_are_byte_identical_across_reruns(self, tmp_path):
        dataset = tmp_path / "ds"
        assert _synth(dataset, n=4, size="16x16", seed=3) == 0
        outputs = []
        for name in ("cv1", "cv2"):
            out = tmp_path / name
            assert dispatch(
                [
                    "cross-validate", "--dataset", str(dataset), "--k", "2",
                    "--epochs", "1", "--batch", "2", "--seed", "3", "--out", str(out),
                ]
            ) == 0
            outputs.append(out)
        for filename in ("crossval_report.json", "crossval_report.csv"):
            assert (outputs[0] / filename).read_bytes() == (outputs[1] / filename).read_bytes()
        configs = [json.loads((out / "effective_config.json").read_text()) for out in outputs]
        for config in configs:
            config.pop("out")
        assert configs[0] == configs[1]

    def test_grouped_cross_validation(self, tmp_path):
        dataset = tmp_path / "ds"
        assert _synth(dataset, n=6, seed=1, extra=("--groups", "3")) == 0
        cv_out = tmp_path / "cv"
        assert dispatch(
            [
                "cross-validate", "--dataset", str(dataset), "--grouped",
                "--epochs", "1", "--batch", "2", "--out", str(cv_out),
            ]
        ) == 0
        per_group = (cv_out / "per_group.csv").read_text().splitlines()
        assert per_group[0] == "group,mean_tanimoto_pct" and len(per_group) == 4


class TestConfigFile:
    def test_file_values_apply_and_flags_override(self, tmp_path):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"n": 4, "ratio": 0.3, "size": "16x16"}))
        out = tmp_path / "ds"
        assert dispatch(["synth", "--config", str(config), "--ratio", "0.2", "--out", str(out)]) == 0
        effective = json.loads((out / "effective_config.json").read_text())
        assert effective["n"] == 4  # from file
        assert effective["ratio"] == 0.2  # flag wins
        assert effective["size"] == [16, 16]


class TestErrors:
    def test_unknown_subcommand(self, capsys):
        assert dispatch(["frobnicate"]) == 2
        assert capsys.readouterr().err

    def test_missing_dataset(self, tmp_path, capsys):
        code = dispatch(["train", "--dataset", str(tmp_path / "nope"), "--epochs", "1", "--out", str(tmp_path / "o")])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_bad_size_flag(self, capsys):
        assert dispatch(["inspect", "--input", "banana"]) == 2
