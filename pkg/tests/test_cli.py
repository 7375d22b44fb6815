import json

import numpy as np
import pytest
import torch

from flowtrans import data as data_mod
from flowtrans import pipeline
from flowtrans.cli import main
from flowtrans.errors import ConfigError
from flowtrans.model import flat_parameters
from flowtrans.render import index_to_image, rgb_to_image
from flowtrans.trainer import load_checkpoint


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """One small trained run shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli_run")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({
        "seed": 5,
        "data": {"scenes": 16, "size": 32},
        "train": {"epochs": 2, "batch_size": 8},
        "infer": {"steps": 5},
    }))
    run_dir = root / "run"
    assert main(["train", "--config", str(cfg), "--out", str(run_dir)]) == 0
    return run_dir


class TestGenData:
    def test_contract(self, tmp_path, capsys):
        out = tmp_path / "d"
        code = main(["gen-data", "--seed", "7", "--scenes", "10",
                     "--size", "64", "--out", str(out)])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["pairs"]) == 10
        files = list(out.glob("*.chp"))
        assert len(files) == 20  # radar + optical per pair


class TestExitCodes:
    def test_usage_error_unknown_command(self):
        assert main(["frobnicate"]) == 1

    def test_usage_error_missing_argument(self):
        assert main(["gen-data", "--seed", "1"]) == 1

    def test_missing_data_dir_is_data_error(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 1, "data": {"dir": str(tmp_path / "nope")}}))
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2
        assert "error: data:" in capsys.readouterr().err

    def test_malformed_config_is_data_error(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{broken")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2

    def test_unknown_config_key_names_path(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 1, "train": {"warmup": 5}}))
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2
        assert "train.warmup" in capsys.readouterr().err

    def test_eval_on_missing_results(self, tmp_path):
        assert main(["eval", "--results", str(tmp_path / "none")]) == 2

    def test_plot_on_missing_results(self, tmp_path):
        assert main(["plot", "--results", str(tmp_path / "none"),
                     "--out", str(tmp_path / "o")]) == 2


class TestScalerAndCodecCommands:
    def test_fit_scaler(self, tiny_run, tmp_path):
        data_dir = tiny_run / "data"
        out = tmp_path / "s.json"
        assert main(["fit-scaler", "--data", str(data_dir), "--role", "radar",
                     "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["channels"] == 2
        assert doc["pmin_pct"] == 0.1 and doc["pmax_pct"] == 99.9

    def test_fit_scaler_optical_defaults(self, tiny_run, tmp_path):
        out = tmp_path / "s.json"
        assert main(["fit-scaler", "--data", str(tiny_run / "data"),
                     "--role", "optical", "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["pmin_pct"] == 1.0 and doc["pmax_pct"] == 98.0

    def test_train_codec_and_encode(self, tiny_run, tmp_path):
        data_dir = tiny_run / "data"
        scaler_path = tiny_run / "scaler_radar.json"
        codec_path = tmp_path / "vq.json"
        assert main(["train-codec", "--data", str(data_dir), "--role", "radar",
                     "--scaler", str(scaler_path), "--out", str(codec_path),
                     "--epochs", "2", "--channels", "8", "--codes", "16"]) == 0
        assert codec_path.exists() and codec_path.with_suffix(".tens").exists()

        latents = tmp_path / "latents.tens"
        assert main(["encode", "--data", str(data_dir), "--role", "radar",
                     "--codec", str(codec_path), "--scaler", str(scaler_path),
                     "--split", "val", "--out", str(latents)]) == 0
        tensors = data_mod.read_tensors(latents)
        assert all(v.shape == (8, 16, 16) for v in tensors.values())


class TestInferEvalPlot:
    def test_infer_writes_results_and_pngs(self, tiny_run):
        code = main(["infer", "--run", str(tiny_run), "--steps", "4", "--png",
                     "--out-name", "res_png"])
        assert code == 0
        out = tiny_run / "res_png"
        tens = list(out.glob("pair_*.tens"))
        assert tens
        assert len(list(out.glob("*_rgb.png"))) == len(tens)

    def test_eval_emits_csv_and_json(self, tiny_run, tmp_path):
        main(["infer", "--run", str(tiny_run), "--steps", "4",
              "--out-name", "res_eval"])
        csv_path = tmp_path / "rep.csv"
        json_path = tmp_path / "rep.json"
        assert main(["eval", "--results", str(tiny_run / "res_eval"),
                     "--csv", str(csv_path), "--json", str(json_path)]) == 0
        header = csv_path.read_text().splitlines()[0]
        assert header == "schedule,steps,seed,MSE_latent,R2_latent,RGB_SSIM,RGB_PSNR,NDVI_SSIM,NDWI_SSIM"
        assert json.loads(json_path.read_text())[0]["steps"] == 4

    def test_plot_three_results_nine_pngs(self, tiny_run, tmp_path):
        main(["infer", "--run", str(tiny_run), "--steps", "4",
              "--out-name", "res_plot"])
        res_dir = tiny_run / "res_plot"
        doc = json.loads((res_dir / "results.json").read_text())
        assert len(doc["files"]) == 3  # 16 scenes -> 3 test chips
        out = tmp_path / "plots"
        assert main(["plot", "--results", str(res_dir), "--out", str(out)]) == 0
        assert len(list(out.glob("*.png"))) == 9

    def test_plot_bytes_deterministic(self, tiny_run, tmp_path):
        main(["infer", "--run", str(tiny_run), "--steps", "4",
              "--out-name", "res_det"])
        outs = []
        for name in ("p1", "p2"):
            out = tmp_path / name
            main(["plot", "--results", str(tiny_run / "res_det"), "--out", str(out)])
            outs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.png"))})
        assert outs[0] == outs[1]

    def test_eval_on_truth_scores_perfect(self, tiny_run, capsys):
        # hand-build a results dir whose contents ARE the ground truth
        from flowtrans.inference import save_result
        src = tiny_run / "res_eval_truth_src"
        main(["infer", "--run", str(tiny_run), "--steps", "4",
              "--out-name", "res_eval_truth_src"])
        doc = json.loads((src / "results.json").read_text())
        truths = pipeline.truth_results(doc)
        truth_dir = tiny_run / "res_truth"
        truth_dir.mkdir(exist_ok=True)
        for t in truths:
            save_result(truth_dir / f"{t.chip_id}.tens", t)
        (truth_dir / "results.json").write_text(json.dumps(doc))
        assert main(["eval", "--results", str(truth_dir)]) == 0
        out = capsys.readouterr().out
        assert "RGB_SSIM=1.0" in out and "R2_latent=1.0" in out

    def test_schedule_flag_round_trip(self, tiny_run):
        assert main(["infer", "--run", str(tiny_run), "--steps", "4",
                     "--schedule", "expo", "--expo-k", "2.0",
                     "--out-name", "res_expo"]) == 0
        doc = json.loads((tiny_run / "res_expo" / "results.json").read_text())
        assert doc["schedule"] == "expo(k=2)"
        assert main(["infer", "--run", str(tiny_run), "--steps", "4",
                     "--schedule", "expo", "--out-name", "x"]) == 2  # k missing
        # overriding to a parameter-free schedule drops any configured k
        assert main(["infer", "--run", str(tiny_run), "--steps", "4",
                     "--schedule", "linear", "--out-name", "res_lin"]) == 0


class TestFinetune:
    def test_zero_epochs_keeps_params_adds_lineage(self, tiny_run, tmp_path):
        out = tmp_path / "ft0"
        assert main(["finetune", "--run", str(tiny_run), "--data",
                     str(tiny_run / "data"), "--epochs", "0", "--out", str(out)]) == 0
        m_old, _, _ = load_checkpoint(tiny_run / "checkpoint_final")
        m_new, _, manifest = load_checkpoint(out / "checkpoint_final")
        assert np.array_equal(flat_parameters(m_old), flat_parameters(m_new))
        assert len(manifest["lineage"]) == 1

    def test_finetune_trains_further(self, tiny_run, tmp_path):
        out = tmp_path / "ft2"
        assert main(["finetune", "--run", str(tiny_run), "--data",
                     str(tiny_run / "data"), "--epochs", "2", "--out", str(out)]) == 0
        doc = json.loads((out / "run.json").read_text())
        assert doc["epochs_trained"] == 4  # 2 parent + 2 new
        m_old, _, _ = load_checkpoint(tiny_run / "checkpoint_final")
        m_new, _, _ = load_checkpoint(out / "checkpoint_final")
        assert not np.array_equal(flat_parameters(m_old), flat_parameters(m_new))

    def test_incompatible_dataset_rejected(self, tiny_run, tmp_path):
        # odd chip size is indivisible by the codec's spatial factor
        bad_data = tmp_path / "odd"
        data_mod.generate_dataset(bad_data, seed=1, scenes=4, size=33)
        with pytest.raises(ConfigError):
            pipeline.finetune_run(tiny_run, bad_data, 1, tmp_path / "bad")

    def test_same_data_finetune_reduces_or_maintains_train_loss(self, tiny_run, tmp_path):
        out = tmp_path / "ft_same"
        assert main(["finetune", "--run", str(tiny_run), "--data",
                     str(tiny_run / "data"), "--epochs", "10", "--out", str(out)]) == 0
        parent_final = float((tiny_run / "loss_trace.csv")
                             .read_text().splitlines()[-1].split(",")[1])
        ft_final = float((out / "loss_trace.csv")
                         .read_text().splitlines()[-1].split(",")[1])
        assert ft_final <= parent_final * 1.05

    def test_shifted_domain_finetune_improves_that_domain(self, tiny_run, tmp_path):
        import torch
        from flowtrans import scaler as scaler_mod
        from flowtrans.codec import load_codec
        from flowtrans.trainer import TrainConfig, validation_loss

        shifted = tmp_path / "shifted"
        data_mod.generate_dataset(shifted, seed=31, scenes=16, size=32,
                                  radar_mixing=((0.55, 0.45), (0.15, 0.85)))

        def encode_val(run_dir):
            manifest = data_mod.load_manifest(shifted)
            rs = scaler_mod.load(run_dir / "scaler_radar.json")
            osc = scaler_mod.load(run_dir / "scaler_optical.json")
            c1 = load_codec(run_dir / "codec_radar.json")
            c2 = load_codec(run_dir / "codec_optical.json")
            _, radar = data_mod.load_split(shifted, manifest, "val", "radar")
            _, optical = data_mod.load_split(shifted, manifest, "val", "optical")
            z1 = np.stack([c1.encode(scaler_mod.transform(rs, c)).data for c in radar])
            z2 = np.stack([c2.encode(scaler_mod.transform(osc, c)).data for c in optical])
            return (torch.from_numpy(z1.astype(np.float32)),
                    torch.from_numpy(z2.astype(np.float32)))

        z1v, z2v = encode_val(tiny_run)
        cfg = TrainConfig(epochs=1, batch_size=8, seed=0)
        before_model, _, _ = load_checkpoint(tiny_run / "checkpoint_final")
        loss_before = validation_loss(before_model, z1v, z2v, cfg,
                                      np.random.default_rng(5))

        out = tmp_path / "ft_shift"
        assert main(["finetune", "--run", str(tiny_run), "--data", str(shifted),
                     "--epochs", "6", "--out", str(out)]) == 0
        after_model, _, _ = load_checkpoint(out / "checkpoint_final")
        loss_after = validation_loss(after_model, z1v, z2v, cfg,
                                     np.random.default_rng(5))
        assert loss_after < loss_before


class TestRender:
    def test_colormap_endpoints(self):
        img = index_to_image(np.array([[-1.0, 0.0, 1.0]]))
        assert list(img[0, 0]) == [0, 0, 255]      # blue
        assert list(img[0, 1]) == [255, 255, 255]  # white
        assert list(img[0, 2]) == [0, 160, 0]      # green

    def test_rgb_clipping(self):
        arr = np.array([[[-0.5]], [[0.5]], [[2.0]]])
        img = rgb_to_image(arr)
        assert list(img[0, 0]) == [0, 128, 255]
