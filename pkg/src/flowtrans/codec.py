"""Image <-> latent codecs: identity, lossless patch projection, and a small
trainable vector-quantized autoencoder.

All three share one contract: encode maps a (C, H, W) chip to a
(channels, H/factor, W/factor) latent tagged with the codec's identity;
decode inverts it. The patch codec is linear and training-free, so engine
tests on top of it are not confounded by codec error.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .core import ImageChip, LatentTensor
from .errors import DomainError, NumericError, ParseError, ShapeError, TagError

KIND_IDENTITY = "identity"
KIND_PATCH = "patch"
KIND_VQ = "vq"


@dataclass(frozen=True)
class LatentSpec:
    channels: int = 16
    spatial_factor: int = 2
    codec_kind: str = KIND_PATCH

    def __post_init__(self):
        if self.channels < 1 or self.spatial_factor < 1:
            raise DomainError("latent channels and spatial factor must be positive")
        if self.codec_kind not in (KIND_IDENTITY, KIND_PATCH, KIND_VQ):
            raise DomainError(f"unknown codec kind {self.codec_kind!r}")


def _check_encode_shape(codec, chip_: ImageChip) -> None:
    f = codec.spec.spatial_factor
    if chip_.channels != codec.input_channels:
        raise ShapeError(
            f"chip has {chip_.channels} channels, codec expects {codec.input_channels}"
        )
    if chip_.height % f or chip_.width % f:
        raise ShapeError(
            f"chip dims {chip_.height}x{chip_.width} not divisible by factor {f}"
        )


def _check_decode_tag(codec, z: LatentTensor) -> None:
    if z.codec_tag != codec.tag:
        raise TagError(f"latent tagged {z.codec_tag!r} cannot be decoded by {codec.tag!r}")


def space_to_depth(data: np.ndarray, factor: int) -> np.ndarray:
    """(C, H, W) -> (C * factor^2, H/factor, W/factor), block-major."""
    c, h, w = data.shape
    blocks = data.reshape(c, h // factor, factor, w // factor, factor)
    return blocks.transpose(0, 2, 4, 1, 3).reshape(c * factor * factor, h // factor, w // factor)


def depth_to_space(data: np.ndarray, factor: int) -> np.ndarray:
    d, h, w = data.shape
    c = d // (factor * factor)
    blocks = data.reshape(c, factor, factor, h, w)
    return blocks.transpose(0, 3, 1, 4, 2).reshape(c, h * factor, w * factor)


class IdentityCodec:
    """Pass-through codec: the latent is the image itself."""

    def __init__(self, input_channels: int, labels: Sequence[str]):
        self.input_channels = input_channels
        self.labels = tuple(labels)
        self.spec = LatentSpec(channels=input_channels, spatial_factor=1,
                               codec_kind=KIND_IDENTITY)

    @property
    def tag(self) -> str:
        return f"identity(in={self.input_channels})"

    def encode(self, chip_: ImageChip) -> LatentTensor:
        _check_encode_shape(self, chip_)
        return LatentTensor(chip_.data.astype(np.float32, copy=True), self.tag)

    def decode(self, z: LatentTensor) -> ImageChip:
        _check_decode_tag(self, z)
        return ImageChip(z.data.astype(np.float32, copy=True), self.labels)


class PatchCodec:
    """Lossless linear codec: space-to-depth plus a seeded orthonormal projection.

    With d = input_channels * factor^2 and latent channels >= d the map is an
    isometry, so decode(encode(x)) == x up to float32 rounding; with fewer
    channels it degrades to an orthogonal projection.
    """

    def __init__(self, input_channels: int, labels: Sequence[str],
                 channels: int = 16, factor: int = 2, seed: int = 0):
        self.input_channels = input_channels
        self.labels = tuple(labels)
        self.seed = seed
        self.spec = LatentSpec(channels=channels, spatial_factor=factor,
                               codec_kind=KIND_PATCH)
        d = input_channels * factor * factor
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((max(channels, d), min(channels, d)))
        q, r = np.linalg.qr(g)
        q = q * np.sign(np.diag(r))
        # (channels, d): orthonormal columns when channels >= d, rows otherwise
        self._matrix = q if channels >= d else q.T

    @property
    def tag(self) -> str:
        s = self.spec
        return (f"patch(in={self.input_channels},f={s.spatial_factor},"
                f"c={s.channels},seed={self.seed})")

    def encode(self, chip_: ImageChip) -> LatentTensor:
        _check_encode_shape(self, chip_)
        v = space_to_depth(chip_.data.astype(np.float64), self.spec.spatial_factor)
        z = np.einsum("cd,dhw->chw", self._matrix, v)
        return LatentTensor(z.astype(np.float32), self.tag)

    def decode(self, z: LatentTensor) -> ImageChip:
        _check_decode_tag(self, z)
        v = np.einsum("cd,chw->dhw", self._matrix, z.data.astype(np.float64))
        img = depth_to_space(v, self.spec.spatial_factor)
        return ImageChip(img.astype(np.float32), self.labels)


class _VQNet(nn.Module):
    """Space-to-depth encoder/decoder pair around a nearest-code quantizer."""

    def __init__(self, input_channels: int, channels: int, factor: int,
                 num_codes: int, hidden: int):
        super().__init__()
        d = input_channels * factor * factor
        self.factor = factor
        self.enc = nn.Sequential(
            nn.Conv2d(d, hidden, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(hidden, channels, 3, padding=1),
        )
        self.dec = nn.Sequential(
            nn.Conv2d(channels, hidden, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(hidden, d, 3, padding=1),
        )
        self.codebook = nn.Parameter(torch.empty(num_codes, channels))
        nn.init.uniform_(self.codebook, -1.0 / num_codes, 1.0 / num_codes)

    def encode_continuous(self, x: torch.Tensor) -> torch.Tensor:
        x = F.pixel_unshuffle(x, self.factor)
        return self.enc(x)

    def quantize(self, z_e: torch.Tensor) -> torch.Tensor:
        b, c, h, w = z_e.shape
        flat = z_e.permute(0, 2, 3, 1).reshape(-1, c)
        dists = (flat.pow(2).sum(1, keepdim=True)
                 - 2.0 * flat @ self.codebook.t()
                 + self.codebook.pow(2).sum(1))
        idx = dists.argmin(dim=1)
        # contiguous so downstream convs see the same layout as the raw latent
        z_q = self.codebook[idx].reshape(b, h, w, c).permute(0, 3, 1, 2).contiguous()
        return z_q

    def decode_latent(self, z_q: torch.Tensor) -> torch.Tensor:
        return F.pixel_shuffle(self.dec(z_q), self.factor)

    def forward(self, x: torch.Tensor):
        z_e = self.encode_continuous(x)
        z_q = self.quantize(z_e)
        # straight-through: decoder grads flow into the encoder unchanged
        z_st = z_e + (z_q - z_e).detach()
        recon = self.decode_latent(z_st)
        return recon, z_e, z_q


class VQCodec:
    """Small trainable vector-quantized autoencoder codec."""

    def __init__(self, input_channels: int, labels: Sequence[str],
                 channels: int = 16, factor: int = 2, num_codes: int = 64,
                 hidden: int = 32, seed: int = 0):
        self.input_channels = input_channels
        self.labels = tuple(labels)
        self.seed = seed
        self.num_codes = num_codes
        self.hidden = hidden
        self.spec = LatentSpec(channels=channels, spatial_factor=factor,
                               codec_kind=KIND_VQ)
        torch.manual_seed(seed)
        self.net = _VQNet(input_channels, channels, factor, num_codes, hidden)
        self.net.eval()

    @property
    def tag(self) -> str:
        s = self.spec
        fp = 0
        for p in self.net.state_dict().values():
            fp = zlib.crc32(p.numpy().tobytes(), fp)
        return (f"vq(in={self.input_channels},f={s.spatial_factor},c={s.channels},"
                f"codes={self.num_codes},seed={self.seed},fp={fp:08x})")

    def encode(self, chip_: ImageChip) -> LatentTensor:
        _check_encode_shape(self, chip_)
        with torch.no_grad():
            x = torch.from_numpy(chip_.data.astype(np.float32)).unsqueeze(0)
            z_q = self.net.quantize(self.net.encode_continuous(x))
        return LatentTensor(z_q.squeeze(0).numpy(), self.tag)

    def decode(self, z: LatentTensor) -> ImageChip:
        _check_decode_tag(self, z)
        with torch.no_grad():
            zq = torch.from_numpy(z.data.astype(np.float32)).unsqueeze(0)
            img = self.net.decode_latent(zq).squeeze(0).numpy()
        return ImageChip(img, self.labels)

    def reconstruction_mse(self, chips: Sequence[ImageChip]) -> float:
        """Mean squared reconstruction error over a chip collection."""
        total, count = 0.0, 0
        for c in chips:
            rec = self.decode(self.encode(c))
            total += float(np.sum((rec.data.astype(np.float64) - c.data) ** 2))
            count += c.data.size
        return total / count


def train_vq(codec: VQCodec, train_chips: Sequence[ImageChip],
             val_chips: Sequence[ImageChip] | None = None, *,
             epochs: int, lr: float = 1e-3, batch_size: int = 16,
             beta: float = 0.25, seed: int = 0) -> list[dict]:
    """Train the VQ codec in place; returns the per-epoch loss trace.

    Loss is reconstruction MSE plus the dictionary term ||sg(z_e) - e||^2 and
    the commitment term beta * ||z_e - sg(e)||^2; quantization gradients use
    the straight-through estimator. Zero epochs leave the codec untouched.
    """
    if epochs < 0:
        raise DomainError("epochs must be >= 0")
    if lr <= 0:
        raise DomainError("learning rate must be positive")
    trace: list[dict] = []
    if epochs == 0:
        return trace

    for c in train_chips:
        _check_encode_shape(codec, c)
    net = codec.net
    data = torch.from_numpy(
        np.stack([c.data.astype(np.float32) for c in train_chips])
    )
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)

    # seed the codebook from real encoder outputs so all codes start in range
    with torch.no_grad():
        z = net.encode_continuous(data[: min(len(data), 32)])
        flat = z.permute(0, 2, 3, 1).reshape(-1, z.shape[1])
        pick = rng.choice(flat.shape[0], size=codec.num_codes,
                          replace=flat.shape[0] < codec.num_codes)
        seeded = flat[torch.from_numpy(pick)].clone()
        seeded += 1e-4 * torch.from_numpy(
            rng.standard_normal(seeded.shape)).to(seeded.dtype)
        net.codebook.copy_(seeded)

    opt = torch.optim.Adam(net.parameters(), lr=lr)
    net.train()
    for epoch in range(epochs):
        order = rng.permutation(len(data))
        epoch_loss, epoch_recon, batches = 0.0, 0.0, 0
        for start in range(0, len(data), batch_size):
            batch = data[torch.from_numpy(order[start:start + batch_size])]
            recon, z_e, z_q = net(batch)
            recon_mse = F.mse_loss(recon, batch)
            dict_loss = F.mse_loss(z_q, z_e.detach())
            commit_loss = F.mse_loss(z_e, z_q.detach())
            loss = recon_mse + dict_loss + beta * commit_loss
            if not torch.isfinite(loss):
                raise NumericError(
                    f"vq training diverged at epoch {epoch} batch {batches} (loss={loss.item()})"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += loss.item()
            epoch_recon += recon_mse.item()
            batches += 1
        net.eval()
        record = {"epoch": epoch, "loss": epoch_loss / batches,
                  "recon_mse": epoch_recon / batches}
        if val_chips is not None:
            record["val_mse"] = codec.reconstruction_mse(val_chips)
        trace.append(record)
        net.train()
    net.eval()
    return trace


# --- persistence --------------------------------------------------------------


def save_codec(codec, path: str | Path) -> None:
    """Write codec config JSON; VQ weights go to a sibling .tens archive."""
    path = Path(path)
    doc = {
        "kind": codec.spec.codec_kind,
        "input_channels": codec.input_channels,
        "labels": list(codec.labels),
        "channels": codec.spec.channels,
        "factor": codec.spec.spatial_factor,
    }
    if isinstance(codec, (PatchCodec, VQCodec)):
        doc["seed"] = codec.seed
    if isinstance(codec, VQCodec):
        doc["num_codes"] = codec.num_codes
        doc["hidden"] = codec.hidden
        doc["weights"] = path.with_suffix(".tens").name
        from .data import write_tensors
        write_tensors(path.with_suffix(".tens"),
                      {k: v.numpy() for k, v in codec.net.state_dict().items()})
    path.write_text(json.dumps(doc, indent=2) + "\n")


def load_codec(path: str | Path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid codec JSON in {path}: {e}") from e
    for field in ("kind", "input_channels", "labels"):
        if field not in doc:
            raise ParseError(f"codec file {path} is missing field {field!r}")
    kind = doc["kind"]
    if kind == KIND_IDENTITY:
        return IdentityCodec(doc["input_channels"], doc["labels"])
    if kind == KIND_PATCH:
        return PatchCodec(doc["input_channels"], doc["labels"],
                          channels=doc["channels"], factor=doc["factor"],
                          seed=doc.get("seed", 0))
    if kind == KIND_VQ:
        codec = VQCodec(doc["input_channels"], doc["labels"],
                        channels=doc["channels"], factor=doc["factor"],
                        num_codes=doc["num_codes"], hidden=doc["hidden"],
                        seed=doc.get("seed", 0))
        from .data import read_tensors
        weights = read_tensors(path.with_suffix(".tens"))
        state = {k: torch.from_numpy(v) for k, v in weights.items()}
        codec.net.load_state_dict(state)
        return codec
    raise ParseError(f"codec file {path} has unknown kind {kind!r}")
