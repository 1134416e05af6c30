import json

import numpy as np
import pytest

from tailspin.config import config_load, write_resolved
from tailspin.data import ImbalanceSpec, NoiseSpec, apply_exponential_imbalance, generate_synthetic, inject_symmetric_noise
from tailspin.errors import ConfigError, ValidationError
from tailspin.evaluation import MetricsRecord
from tailspin.io import MetricsWriter, load_checkpoint, load_dataset, save_checkpoint, save_dataset
from tailspin.nn import build_model, params_digest
from tailspin.pipeline import build_finetune_head


class TestDatasetFormat:
    @pytest.fixture()
    def corrupted(self):
        ds = generate_synthetic(4, 25, 6, 5.0, seed=31)
        ds = apply_exponential_imbalance(ds, ImbalanceSpec(4.0, seed=31))
        return inject_symmetric_noise(ds, NoiseSpec(0.3, seed=31))

    def test_round_trip_bitwise(self, tmp_path, corrupted):
        save_dataset(corrupted, tmp_path / "ds", provenance={"gamma": 4.0, "nu": 0.3})
        back = load_dataset(tmp_path / "ds")
        assert np.array_equal(back.features, corrupted.features)
        assert np.array_equal(back.labels_observed, corrupted.labels_observed)
        assert np.array_equal(back.labels_true, corrupted.labels_true)
        assert back.num_classes == corrupted.num_classes
        assert back.split == corrupted.split

    def test_byte_length_mismatch_detected(self, tmp_path, corrupted):
        save_dataset(corrupted, tmp_path / "ds")
        (tmp_path / "ds" / "features.bin").write_bytes(b"\x00" * 12)
        with pytest.raises(ValidationError, match="bytes"):
            load_dataset(tmp_path / "ds")

    def test_manifest_is_human_readable_json(self, tmp_path, corrupted):
        save_dataset(corrupted, tmp_path / "ds", provenance={"gamma": 4.0})
        manifest = json.loads((tmp_path / "ds" / "manifest.json").read_text())
        assert manifest["kind"] == "dataset"
        assert manifest["provenance"]["gamma"] == 4.0


class TestCheckpointFormat:
    def test_model_and_head_round_trip(self, tmp_path):
        model = build_model("byol", 8, seed=41)
        head = build_finetune_head(model, 3, "byol", seed=41)
        save_checkpoint(tmp_path / "ck", model, head, extra={"stage": "finetune"})
        model2, head2, extra = load_checkpoint(tmp_path / "ck")
        assert extra == {"stage": "finetune"}
        assert model2.arch == model.arch
        assert model2.predictor is not None and model2.ema_encoder is not None
        # float32 storage: round trip through f32 is exact on re-save
        f32 = model.encoder.layers[0].weight.data.astype(np.float32)
        assert np.array_equal(model2.encoder.layers[0].weight.data, f32.astype(np.float64))
        assert head2.dims == head.dims

    def test_head_only_checkpoint(self, tmp_path):
        model = build_model("simclr", 8, seed=42)
        head = build_finetune_head(model, 5, "simclr", seed=42)
        save_checkpoint(tmp_path / "ck", None, head)
        model2, head2, _ = load_checkpoint(tmp_path / "ck")
        assert model2 is None
        assert head2.dims == [32, 5]

    def test_simclr_model_without_predictor_round_trips(self, tmp_path):
        model = build_model("simclr", 8, seed=43)
        save_checkpoint(tmp_path / "ck", model)
        model2, head2, _ = load_checkpoint(tmp_path / "ck")
        assert head2 is None
        assert model2.predictor is None and model2.ema_encoder is None
        assert model2.encoder.dims == model.encoder.dims


class TestMetricsFile:
    def test_one_line_per_record_and_parse_back(self, tmp_path):
        path = tmp_path / "metrics.jsonl"
        records = [MetricsRecord("finetune", e, 0.1 * e, 0.01, 3) for e in range(25)]
        with MetricsWriter(path) as sink:
            for r in records:
                sink(r)
        lines = path.read_text().splitlines()
        assert len(lines) == 25
        assert [MetricsRecord.from_json_line(l) for l in lines] == records

    def test_flush_per_record_survives_interruption(self, tmp_path):
        path = tmp_path / "metrics.jsonl"
        sink = MetricsWriter(path)
        for e in range(7):
            sink(MetricsRecord("pretrain", e, 1.0, 0.06, 3))
        # reader sees all 7 complete lines while the writer is still open
        lines = path.read_text().splitlines()
        assert len(lines) == 7
        assert all(json.loads(l)["epoch"] == i for i, l in enumerate(lines))
        sink.close()


class TestConfig:
    def test_empty_file_gives_defaults(self, tmp_path):
        p = tmp_path / "empty.cfg"
        p.write_text("")
        cfg = config_load(p)
        assert cfg["pretrain.method"] == "simsiam"
        assert cfg["finetune.loss"] == "la_sl"
        assert cfg["run.seed"] == 0

    def test_file_and_overrides(self, tmp_path):
        p = tmp_path / "exp.cfg"
        p.write_text("# comment\ndata.gamma = 10\nfinetune.loss = ce\n")
        cfg = config_load(p, overrides=["finetune.loss=la_sl", "run.seed=7"])
        assert cfg["data.gamma"] == 10.0
        assert cfg["finetune.loss"] == "la_sl"  # override wins
        assert cfg["run.seed"] == 7

    def test_unknown_key_suggests_nearest(self):
        with pytest.raises(ConfigError, match="pretrain.method"):
            config_load(None, overrides=["pretrain.methd=simsiam"])

    def test_type_mismatch_names_expected_type(self):
        with pytest.raises(ConfigError, match="int"):
            config_load(None, overrides=["pretrain.epochs=ten"])

    def test_choice_validation(self):
        with pytest.raises(ConfigError, match="finetune.loss"):
            config_load(None, overrides=["finetune.loss=focal"])

    def test_resolved_file_written(self, tmp_path):
        cfg = config_load(None, overrides=["data.gamma=3.5"])
        write_resolved(cfg, tmp_path)
        text = (tmp_path / "config.resolved").read_text()
        assert "data.gamma = 3.5" in text
        assert "run.seed = 0" in text

    def test_hash_changes_iff_any_key_changes(self):
        base = config_load(None)
        same = config_load(None)
        assert base.config_hash() == same.config_hash()
        changed = config_load(None, overrides=["data.nu=0.1"])
        assert changed.config_hash() != base.config_hash()

    def test_hash_ignores_output_dir(self):
        a = config_load(None, overrides=["run.output_dir=runs/a"])
        b = config_load(None, overrides=["run.output_dir=runs/b"])
        assert a.config_hash() == b.config_hash()

    def test_tau_auto_and_numeric(self):
        assert config_load(None).superloss_tau() is None
        assert config_load(None, overrides=["finetune.tau=1.25"]).superloss_tau() == 1.25
        with pytest.raises(ConfigError):
            config_load(None, overrides=["finetune.tau=banana"]).superloss_tau()

    def test_missing_file_is_config_error(self):
        with pytest.raises(ConfigError, match="not found"):
            config_load("/nonexistent/path.cfg")

    def test_bool_parsing(self):
        cfg = config_load(None, overrides=["pretrain.disable_stop_gradient=true"])
        assert cfg["pretrain.disable_stop_gradient"] is True
        with pytest.raises(ConfigError):
            config_load(None, overrides=["pretrain.disable_stop_gradient=maybe"])

    def test_resolved_file_is_itself_loadable(self, tmp_path):
        cfg = config_load(None, overrides=["data.gamma=7.5", "finetune.loss=ce_sl", "run.seed=11"])
        write_resolved(cfg, tmp_path)
        back = config_load(tmp_path / "config.resolved")
        assert back.values == cfg.values
        assert back.config_hash() == cfg.config_hash()
