import dataclasses
import json

import numpy as np
import pytest

from flowtrans import data as data_mod
from flowtrans import pipeline
from flowtrans.errors import ConfigError
from flowtrans.pipeline import (DataSection, RunConfig, effective_config,
                                parse_run_config)


class TestRunConfigParsing:
    def test_defaults_applied(self):
        cfg = parse_run_config({"seed": 3})
        assert cfg.seed == 3
        assert cfg.data.scenes == 200
        assert cfg.train.schedule == "cosine"
        assert cfg.codec.kind == "patch"

    def test_missing_seed(self):
        with pytest.raises(ConfigError, match="seed"):
            parse_run_config({"data": {}})

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="optimizer"):
            parse_run_config({"seed": 1, "optimizer": {}})

    def test_unknown_key_reports_dotted_path(self):
        with pytest.raises(ConfigError, match=r"infer\.solver"):
            parse_run_config({"seed": 1, "infer": {"solver": "rk4"}})

    def test_section_must_be_object(self):
        with pytest.raises(ConfigError):
            parse_run_config({"seed": 1, "train": 5})

    def test_eval_json_alias(self):
        cfg = parse_run_config({"seed": 1, "eval": {"json": True}})
        assert cfg.eval.emit_json is True

    def test_effective_config_round_trips(self):
        cfg = parse_run_config({"seed": 9, "train": {"epochs": 7, "lr": 0.01},
                                "data": {"scenes": 12, "size": 32}})
        echo = effective_config(cfg)
        again = parse_run_config(echo)
        assert again == cfg
        assert echo["train"]["epochs"] == 7
        assert echo["model"]["hidden_channels"] == [32, 64, 32]


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    cfg = RunConfig(seed=11, data=DataSection(scenes=12, size=32))
    cfg = dataclasses.replace(
        cfg, train=dataclasses.replace(cfg.train, epochs=2, batch_size=8))
    run_dir = root / "run"
    pipeline.train_run(cfg, run_dir)
    return run_dir


class TestRunArtifacts:
    def test_manifest_lists_artifacts(self, small_run):
        doc = json.loads((small_run / "run.json").read_text())
        for key in ("scaler_radar", "scaler_optical", "codec_radar",
                    "codec_optical", "checkpoint", "loss_trace"):
            assert key in doc["artifacts"]
        assert doc["config"]["train"]["epochs"] == 2
        assert (small_run / "loss_trace.csv").exists()
        assert (small_run / "checkpoint_final.tens").exists()

    def test_loss_trace_has_stage_columns(self, small_run):
        header = (small_run / "loss_trace.csv").read_text().splitlines()[0]
        assert header == ("epoch,train_loss,loss_continuous,loss_discrete,"
                          "loss_boundary,val_loss,lr")

    def test_infer_then_eval(self, small_run):
        results = pipeline.infer_run(small_run, steps=6, out_name="r6")
        doc, loaded = pipeline.load_results(results)
        assert doc["steps"] == 6
        assert len(loaded) == 2  # 12 scenes -> floor(0.2*12) = 2 test chips
        rep = pipeline.eval_run(results)
        assert np.isfinite(rep.records["latent"].mse)
        assert (results / "report.csv").exists()

    def test_truth_results_align(self, small_run):
        results = pipeline.infer_run(small_run, steps=4, out_name="r4")
        doc, loaded = pipeline.load_results(results)
        truths = pipeline.truth_results(doc)
        assert [t.chip_id for t in truths] == [r.chip_id for r in loaded]

    def test_vq_codec_pipeline_variant(self, tmp_path):
        cfg = parse_run_config({
            "seed": 4,
            "data": {"scenes": 10, "size": 32},
            "codec": {"kind": "vq", "channels": 8, "vq_codes": 16,
                      "vq_epochs": 2, "vq_hidden": 16},
            "train": {"epochs": 1, "batch_size": 8},
        })
        run_dir = tmp_path / "vq_run"
        pipeline.train_run(cfg, run_dir)
        results = pipeline.infer_run(run_dir, steps=4)
        rep = pipeline.eval_run(results)
        assert np.isfinite(rep.records["rgb"].ssim)

    def test_eval_json_section_emits_report_json(self, tmp_path):
        cfg = parse_run_config({
            "seed": 6, "data": {"scenes": 10, "size": 32},
            "train": {"epochs": 1, "batch_size": 8},
            "eval": {"json": True},
        })
        run_dir = tmp_path / "run"
        pipeline.train_run(cfg, run_dir)
        results = pipeline.infer_run(run_dir, steps=4)
        pipeline.eval_run(results)
        assert (results / "report.json").exists()

    def test_external_data_dir_is_referenced(self, tmp_path):
        data_dir = tmp_path / "shared_data"
        data_mod.generate_dataset(data_dir, seed=2, scenes=10, size=32)
        cfg = parse_run_config({
            "seed": 2, "data": {"dir": str(data_dir)},
            "train": {"epochs": 1, "batch_size": 8},
        })
        run_dir = tmp_path / "run"
        doc = pipeline.train_run(cfg, run_dir)
        assert doc["data_dir"] == str(data_dir)
        assert not (run_dir / "data").exists()
