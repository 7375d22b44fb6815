import numpy as np
import pytest
import torch
from torch import nn

from flowtrans import data
from flowtrans.codec import IdentityCodec, PatchCodec
from flowtrans.core import ImageChip, LatentTensor
from flowtrans.errors import (ConfigError, DomainError, NumericError,
                              ShapeError)
from flowtrans.inference import (InferConfig, check_codec_compat, derive_result,
                                 load_result, ndvi, ndwi, run_inference,
                                 save_result, split_channels, translate,
                                 translate_latents, truth_result)
from flowtrans.model import ConstantVelocityModel, ModelConfig, VelocityModel
from flowtrans.schedules import Schedule, schedule_grid


class BatchOracleModel(nn.Module):
    """Returns a fixed per-element velocity field (the exact batch target)."""

    def __init__(self, deltas: torch.Tensor):
        super().__init__()
        self.register_buffer("deltas", deltas)

    def forward(self, x_t, z_src, m):
        return self.deltas.to(x_t.dtype)


class ExplodingModel(nn.Module):
    def forward(self, x_t, z_src, m):
        out = torch.full_like(x_t, float("inf"))
        return out


def latent(arr, tag="t"):
    return LatentTensor(np.asarray(arr, dtype=np.float64), tag)


class TestInferConfig:
    def test_validation(self):
        with pytest.raises(DomainError):
            InferConfig(steps=1)
        with pytest.raises(DomainError):
            InferConfig(index_eps=0.0)

    def test_defaults(self):
        cfg = InferConfig()
        assert cfg.steps == 100
        assert cfg.schedule == Schedule.cosine()
        assert cfg.index_eps == 1e-7


class TestTranslate:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.z1 = latent(rng.standard_normal((3, 8, 8)))
        self.z2 = latent(rng.standard_normal((3, 8, 8)))
        delta = torch.from_numpy(self.z2.data - self.z1.data)
        self.oracle = ConstantVelocityModel(delta)

    @pytest.mark.parametrize("T", [2, 3, 100])
    def test_oracle_telescopes_to_target(self, T):
        out = translate(self.oracle, self.z1, InferConfig(steps=T))
        assert np.max(np.abs(out.data - self.z2.data)) < 1e-6

    @pytest.mark.parametrize("sched", [Schedule.linear(), Schedule.cosine(),
                                       Schedule.exponential(2.0)])
    def test_oracle_t_invariant_per_schedule(self, sched):
        outs = [translate(self.oracle, self.z1,
                          InferConfig(steps=T, schedule=sched)).data
                for T in (2, 3, 5, 100)]
        for o in outs[1:]:
            assert np.max(np.abs(o - outs[0])) < 1e-9
        assert np.max(np.abs(outs[0] - self.z2.data)) < 1e-6

    def test_zero_model_returns_source(self):
        model = VelocityModel(ModelConfig(latent_channels=3,
                                          hidden_channels=(4, 6, 4))).eval()
        out = translate(model, self.z1, InferConfig(steps=10))
        assert np.array_equal(out.data, self.z1.data)

    def test_t2_is_single_full_step(self):
        model = VelocityModel(ModelConfig(latent_channels=3,
                                          hidden_channels=(4, 6, 4))).eval()
        g = torch.Generator().manual_seed(1)
        with torch.no_grad():
            for p in model.parameters():
                p.copy_(0.05 * torch.randn(p.shape, generator=g))
        out = translate(model, self.z1, InferConfig(steps=2))
        z1t = torch.from_numpy(self.z1.data).unsqueeze(0).float()
        with torch.no_grad():
            manual = z1t.double() + model(z1t, z1t, 0.0).double() * 1.0
        assert np.allclose(out.data, manual.squeeze(0).numpy(), atol=1e-12)

    def test_nonfinite_reports_step(self):
        with pytest.raises(NumericError, match="step 0"):
            translate(ExplodingModel(), self.z1, InferConfig(steps=5))

    def test_tag_and_dtype_preserved(self):
        z32 = LatentTensor(self.z1.data.astype(np.float32), "mytag")
        out = translate(self.oracle, z32, InferConfig(steps=4))
        assert out.codec_tag == "mytag"
        assert out.data.dtype == np.float32

    def test_batched_matches_single(self):
        grid = schedule_grid(Schedule.cosine(), 7)
        z = torch.from_numpy(np.stack([self.z1.data, self.z1.data * 0.5]))
        out = translate_latents(self.oracle, z, grid)
        single = translate(self.oracle, self.z1, InferConfig(steps=7))
        assert np.allclose(out[0].numpy(), single.data, atol=1e-12)


class TestChannelOps:
    def test_split_constant(self):
        chip_ = ImageChip(np.full((4, 16, 16), 0.3, np.float32),
                          ("R", "G", "B", "NIR"))
        rgb, nir = split_channels(chip_)
        assert rgb.data.shape == (3, 16, 16) and nir.data.shape == (1, 16, 16)
        assert np.all(rgb.data == 0.3) and np.all(nir.data == 0.3)

    def test_split_preserves_order(self):
        arr = np.stack([np.full((4, 4), i, np.float32) for i in range(4)])
        rgb, nir = split_channels(ImageChip(arr, ("R", "G", "B", "NIR")))
        assert np.all(rgb.data[0] == 0) and np.all(rgb.data[2] == 2)
        assert np.all(nir.data == 3)
        assert rgb.labels == ("R", "G", "B")

    def test_split_wrong_channel_count(self):
        with pytest.raises(ShapeError):
            split_channels(ImageChip(np.zeros((3, 8, 8), np.float32), ("R", "G", "B")))

    def test_ndvi_values(self):
        assert ndvi(np.array([0.5]), np.array([0.5]))[0] == pytest.approx(0.0, abs=1e-6)
        assert ndvi(np.array([0.6]), np.array([0.2]))[0] == pytest.approx(0.5, abs=1e-6)
        assert ndvi(np.array([1.0]), np.array([0.0]))[0] == pytest.approx(1.0, abs=1e-6)

    def test_ndwi_values(self):
        assert ndwi(np.array([0.7]), np.array([0.7]))[0] == pytest.approx(0.0, abs=1e-6)
        assert ndwi(np.array([0.8]), np.array([0.2]))[0] == pytest.approx(0.6, abs=1e-6)
        assert ndwi(np.array([0.0]), np.array([1.0]))[0] == pytest.approx(-1.0, abs=1e-6)

    def test_index_bounds_on_nonnegative_input(self):
        rng = np.random.default_rng(0)
        a = rng.random((32, 32))
        b = rng.random((32, 32))
        for vals in (ndvi(a, b), ndwi(a, b)):
            assert vals.min() >= -1.0 - 1e-6 and vals.max() <= 1.0 + 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ndvi(np.zeros((4, 4)), np.zeros((5, 5)))

    def test_clip_unit(self):
        raw = np.stack([np.full((16, 16), v, np.float32)
                        for v in (-0.2, 0.5, 1.4, 0.9)])
        chip_ = ImageChip(raw, ("R", "G", "B", "NIR"))
        z = LatentTensor(np.zeros((1, 8, 8), np.float32), "t")
        res = derive_result("c", z, chip_, InferConfig(clip_unit=True))
        assert res.chip.data.min() >= 0.0 and res.chip.data.max() <= 1.0


class TestRunInference:
    def test_identity_codecs_zero_model_pass_through(self):
        # same-shape source/target: the pipeline decodes the source latent as-is
        _, optical = data.generate_pair(0, 32, 32)
        codec = IdentityCodec(4, ("R", "G", "B", "NIR"))
        model = VelocityModel(ModelConfig(latent_channels=4,
                                          hidden_channels=(4, 6, 4))).eval()
        results = run_inference(model, codec, codec, [optical], InferConfig(steps=5))
        assert len(results) == 1
        assert np.allclose(results[0].chip.data, optical.data, atol=1e-6)
        red = optical.data[0].astype(np.float64)
        nir_band = optical.data[3].astype(np.float64)
        expected = (nir_band - red) / (nir_band + red + 1e-7)
        assert np.allclose(results[0].ndvi, expected, atol=1e-6)

    def test_oracle_velocity_with_patch_codecs_recovers_truth(self):
        radar_codec = PatchCodec(2, ("VV", "VH"), channels=16, factor=2, seed=0)
        optical_codec = PatchCodec(4, ("R", "G", "B", "NIR"), channels=16,
                                   factor=2, seed=1)
        pairs = [data.generate_pair(s, 32, 32) for s in range(3)]
        z1 = np.stack([radar_codec.encode(r).data for r, _ in pairs])
        z2 = np.stack([optical_codec.encode(o).data for _, o in pairs])
        oracle = BatchOracleModel(torch.from_numpy(z2 - z1))
        results = run_inference(oracle, radar_codec, optical_codec,
                                [r for r, _ in pairs], InferConfig(steps=100))
        for res, (_, optical) in zip(results, pairs):
            assert np.max(np.abs(res.chip.data - optical.data)) < 1e-5

    def test_three_chips_ordered(self):
        codec = IdentityCodec(4, ("R", "G", "B", "NIR"))
        model = VelocityModel(ModelConfig(latent_channels=4,
                                          hidden_channels=(4, 6, 4))).eval()
        chips = [data.generate_pair(s, 32, 32)[1] for s in range(3)]
        results = run_inference(model, codec, codec, chips, InferConfig(steps=3),
                                ids=["a", "b", "c"])
        assert [r.chip_id for r in results] == ["a", "b", "c"]
        for res, chip_ in zip(results, chips):
            assert np.allclose(res.chip.data, chip_.data, atol=1e-6)

    def test_component_error_carries_chip_id(self):
        codec = IdentityCodec(4, ("R", "G", "B", "NIR"))
        model = VelocityModel(ModelConfig(latent_channels=4,
                                          hidden_channels=(4, 6, 4))).eval()
        bad = ImageChip(np.zeros((2, 32, 32), np.float32), ("VV", "VH"))
        with pytest.raises(ShapeError, match="oops"):
            run_inference(model, codec, codec, [bad], InferConfig(steps=3),
                          ids=["oops"])

    def test_incompatible_codecs(self):
        c1 = PatchCodec(2, ("VV", "VH"), channels=8, factor=2)
        c2 = PatchCodec(4, ("R", "G", "B", "NIR"), channels=16, factor=2)
        with pytest.raises(ConfigError):
            check_codec_compat(c1, c2)

    def test_truth_result_matches_pipeline_shapes(self):
        codec = PatchCodec(4, ("R", "G", "B", "NIR"), channels=16, factor=2)
        _, optical = data.generate_pair(1, 32, 32)
        truth = truth_result(codec, optical, InferConfig(), "c0")
        assert truth.latent.data.shape == (16, 16, 16)
        assert truth.ndvi.shape == (32, 32)


class TestResultIO:
    def test_round_trip(self, tmp_path):
        _, optical = data.generate_pair(2, 32, 32)
        codec = IdentityCodec(4, ("R", "G", "B", "NIR"))
        res = truth_result(codec, optical, InferConfig(), "c7")
        save_result(tmp_path / "c7.tens", res)
        back = load_result(tmp_path / "c7.tens", "c7", codec.tag)
        assert np.array_equal(back.chip.data, res.chip.data)
        assert np.allclose(back.ndvi, res.ndvi, atol=1e-7)
        assert back.chip_id == "c7"
