import json

from tailspin.cli import main
from tailspin.io import dataset_provenance, load_dataset


def run_cli(*args):
    return main(list(args))


FAST = [
    "--set", "data.per_class=30",
    "--set", "data.test_per_class=20",
    "--set", "pretrain.epochs=3",
    "--set", "pretrain.batch_size=16",
    "--set", "finetune.epochs=2",
    "--set", "single_stage.epochs=2",
    "--set", "eval.knn_k=5",
]


class TestRunDeterminism:
    def test_byte_identical_metrics_and_summary(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            code = run_cli("run", "--seed", "7", "--output", str(out), *FAST,
                           "--set", "data.gamma=5", "--set", "data.nu=0.3")
            assert code == 0
        assert (out_a / "metrics.jsonl").read_bytes() == (out_b / "metrics.jsonl").read_bytes()
        assert (out_a / "summary.json").read_bytes() == (out_b / "summary.json").read_bytes()

    def test_summary_contains_hash_and_metrics(self, tmp_path):
        out = tmp_path / "run"
        assert run_cli("run", "--seed", "3", "--output", str(out), *FAST) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary) >= {"config_hash", "seed", "balanced_accuracy", "knn_accuracy"}
        resolved = (out / "config.resolved").read_text()
        assert "run.seed = 3" in resolved

    def test_record_count_one_per_epoch_per_stage(self, tmp_path):
        out = tmp_path / "run"
        assert run_cli("run", "--seed", "3", "--output", str(out), *FAST) == 0
        stages = [json.loads(l)["stage"] for l in (out / "metrics.jsonl").read_text().splitlines()]
        assert stages.count("pretrain") == 3
        assert stages.count("finetune") == 2


class TestStagewiseCommands:
    def test_generate_corrupt_pretrain_finetune_eval(self, tmp_path):
        out = tmp_path / "exp"
        base = ["--seed", "5", "--output", str(out), *FAST,
                "--set", "data.gamma=4", "--set", "data.nu=0.2"]
        assert run_cli("generate", *base) == 0
        assert load_dataset(out / "data" / "train").num_samples == 90
        assert run_cli("corrupt", *base) == 0
        corrupted = load_dataset(out / "data" / "train-corrupted")
        assert corrupted.true_counts().min() < 30
        assert run_cli("pretrain", *base) == 0
        assert run_cli("finetune", *base) == 0
        assert run_cli("eval", *base, "--set", "eval.export_embeddings=true") == 0
        payload = json.loads((out / "eval.json").read_text())
        assert "knn_accuracy" in payload and "balanced_accuracy" in payload
        assert (out / "embeddings" / "test" / "embeddings.bin").is_file()

    def test_corrupt_severe_imbalance_provenance_min_class_50(self, tmp_path):
        out = tmp_path / "severe"
        base = ["--seed", "5", "--output", str(out),
                "--set", "data.num_classes=10", "--set", "data.per_class=5000",
                "--set", "data.test_per_class=10", "--set", "data.gamma=100"]
        assert run_cli("generate", *base) == 0
        assert run_cli("corrupt", *base) == 0
        prov = dataset_provenance(out / "data" / "train-corrupted")
        assert prov["min_class_count"] == 50
        assert prov["max_class_count"] == 5000

    def test_freeze_override_trains_last_layer_only(self, tmp_path):
        out = tmp_path / "frozen"
        assert run_cli("run", "--seed", "4", "--output", str(out), *FAST,
                       "--set", "finetune.freeze=last_layer_only") == 0
        from tailspin.io import load_checkpoint
        from tailspin.nn import params_digest

        pre_model, _, _ = load_checkpoint(out / "checkpoints" / "pretrained")
        fin_model, head, _ = load_checkpoint(out / "checkpoints" / "finetuned")
        # encoder untouched by fine-tuning, and the first head layer kept its
        # pretrained projector weights under the last-layer-only policy
        assert params_digest(pre_model.encoder.parameters()) == params_digest(fin_model.encoder.parameters())
        assert params_digest([head.layers[0].weight]) == params_digest([pre_model.projector.layers[0].weight])

    def test_single_stage_run(self, tmp_path):
        out = tmp_path / "single"
        assert run_cli("run-single-stage", "--seed", "9", "--output", str(out), *FAST,
                       "--set", "finetune.loss=ce") == 0
        stages = {json.loads(l)["stage"] for l in (out / "metrics.jsonl").read_text().splitlines()}
        assert stages == {"single_stage"}
        assert (out / "summary.json").is_file()


class TestGradcheckCommand:
    def test_exit_zero_and_table(self, capsys):
        assert run_cli("gradcheck") == 0
        table = capsys.readouterr().out
        assert "max_rel_err" in table
        for name in ("ce", "la_sl", "simsiam", "simclr", "byol", "barlow_twins"):
            assert name in table
        assert "FAIL" not in table


class TestErrorReporting:
    def test_unknown_key_machine_parsable_exit_2(self, capsys, tmp_path):
        code = run_cli("run", "--output", str(tmp_path / "x"), "--set", "pretrain.methd=simsiam")
        assert code == 2
        err = capsys.readouterr().err.strip().splitlines()[-1]
        assert err.startswith("config-error:")
        assert "pretrain.method" in err

    def test_validation_error_exit_1(self, capsys, tmp_path):
        code = run_cli("run", "--output", str(tmp_path / "x"), "--set", "data.nu=2.0", *FAST)
        assert code == 1
        err = capsys.readouterr().err.strip().splitlines()[-1]
        assert err.startswith("validation-error:")

    def test_missing_dataset_reported(self, capsys, tmp_path):
        code = run_cli("pretrain", "--output", str(tmp_path / "nothing"))
        assert code == 1
        err = capsys.readouterr().err.strip().splitlines()[-1]
        assert err.split(":", 1)[0] in ("validation-error", "io-error")


def test_console_script_entry_point():
    import subprocess
    import sys

    proc = subprocess.run(
        [sys.executable, "-m", "tailspin.cli", "gradcheck"],
        capture_output=True, text=True, timeout=600,
    )
    assert proc.returncode == 0
    assert "max_rel_err" in proc.stdout
