"""Conditional velocity model: ([x_t, z_src], m) -> predicted latent displacement.

A small one-level U-shaped conv net without attention. The final layer is
zero-initialized so the untrained velocity field is exactly zero and
inference starts out as the identity translation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .errors import DomainError, NumericError, ShapeError

TIME_SINUSOIDAL = "sinusoidal"
TIME_BROADCAST = "broadcast"


@dataclass(frozen=True)
class ModelConfig:
    latent_channels: int
    hidden_channels: tuple[int, int, int] = (32, 64, 32)
    time_embedding: str = TIME_SINUSOIDAL
    time_dim: int = 16
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.latent_channels < 1:
            raise DomainError("latent_channels must be positive")
        if len(self.hidden_channels) != 3 or min(self.hidden_channels) < 1:
            raise DomainError("hidden_channels must be three positive widths (stem, bottom, up)")
        if self.time_embedding not in (TIME_SINUSOIDAL, TIME_BROADCAST):
            raise DomainError(f"unknown time embedding {self.time_embedding!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise DomainError("dropout must lie in [0, 1)")


def sinusoidal_embedding(m: torch.Tensor, dim: int) -> torch.Tensor:
    """Fixed sin/cos features of progress m in [0, 1], shape (B, dim)."""
    half = dim // 2
    exponents = torch.arange(half, dtype=m.dtype, device=m.device) / max(half - 1, 1)
    freqs = torch.pow(torch.tensor(10000.0, dtype=m.dtype, device=m.device), exponents)
    args = m[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=1)
    return emb


class VelocityModel(nn.Module):
    """One down/up level conv net over [x_t, z_src] conditioned on progress m."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c_in = 2 * config.latent_channels
        c_stem, c_bottom, c_up = config.hidden_channels
        torch.manual_seed(config.seed)
        self.stem = nn.Conv2d(c_in, c_stem, 3, padding=1)
        if config.time_embedding == TIME_SINUSOIDAL:
            self.time_proj = nn.Linear(config.time_dim, c_stem)
        else:
            self.time_proj = None
        self.down = nn.Conv2d(c_stem, c_bottom, 3, stride=2, padding=1)
        self.mid = nn.Conv2d(c_bottom, c_bottom, 3, padding=1)
        self.up = nn.ConvTranspose2d(c_bottom, c_up, 2, stride=2)
        self.fuse = nn.Conv2d(c_up + c_stem, c_up, 3, padding=1)
        self.out = nn.Conv2d(c_up, config.latent_channels, 3, padding=1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)
        self.drop = nn.Dropout(config.dropout)

    def _time_bias(self, m: torch.Tensor, dtype, device) -> torch.Tensor:
        if self.time_proj is not None:
            emb = sinusoidal_embedding(m.to(dtype), self.config.time_dim)
            return self.time_proj(emb)[:, :, None, None]
        return m.to(dtype)[:, None, None, None]

    def forward(self, x_t: torch.Tensor, z_src: torch.Tensor, m) -> torch.Tensor:
        if x_t.shape != z_src.shape:
            raise ShapeError(f"state and conditioning shapes differ: "
                             f"{tuple(x_t.shape)} vs {tuple(z_src.shape)}")
        if x_t.ndim != 4:
            raise ShapeError(f"expected (B, C, h, w) latents, got {tuple(x_t.shape)}")
        if x_t.shape[2] % 2 or x_t.shape[3] % 2:
            raise ShapeError("latent spatial dims must be even for the down/up level")
        batch = x_t.shape[0]
        if not torch.is_tensor(m):
            m = torch.full((batch,), float(m), dtype=x_t.dtype, device=x_t.device)
        if m.ndim == 0:
            m = m.expand(batch)
        if float(m.min()) < 0.0 or float(m.max()) > 1.0:
            raise DomainError("progress m must lie in [0, 1]")

        h1 = torch.cat([x_t, z_src], dim=1)
        h1 = F.silu(self.stem(h1) + self._time_bias(m, x_t.dtype, x_t.device))
        h1 = self.drop(h1)
        h2 = F.silu(self.down(h1))
        h2 = self.drop(F.silu(self.mid(h2)))
        u = F.silu(self.up(h2))
        fused = F.silu(self.fuse(torch.cat([u, h1], dim=1)))
        return self.out(fused)


# --- parameter plumbing -------------------------------------------------------


def named_parameter_arrays(model: nn.Module) -> dict[str, np.ndarray]:
    return {name: p.detach().numpy().copy() for name, p in model.named_parameters()}


def flat_parameters(model: nn.Module) -> np.ndarray:
    """Concatenation of all parameters in named order (a copy, for counting/IO)."""
    return np.concatenate([
        p.detach().numpy().ravel() for _, p in model.named_parameters()
    ])


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# --- loss / update ------------------------------------------------------------


def loss_and_grad(model: nn.Module, x_t: torch.Tensor, z_src: torch.Tensor, m,
                  target: torch.Tensor) -> tuple[float, dict[str, torch.Tensor]]:
    """Mean-squared-error loss over all latent elements plus parameter gradients."""
    for name, t in (("x_t", x_t), ("z_src", z_src), ("target", target)):
        if not torch.all(torch.isfinite(t)):
            raise NumericError(f"non-finite values in {name}")
    pred = model(x_t, z_src, m)
    if pred.shape != target.shape:
        raise ShapeError(f"target shape {tuple(target.shape)} does not match "
                         f"output {tuple(pred.shape)}")
    loss = F.mse_loss(pred, target)
    if not torch.isfinite(loss):
        raise NumericError("non-finite values in loss")
    names = [n for n, _ in model.named_parameters()]
    grads = torch.autograd.grad(loss, [p for _, p in model.named_parameters()])
    return float(loss.detach()), dict(zip(names, grads))


def make_optimizer(model: nn.Module, lr: float) -> torch.optim.Adam:
    """Adam with beta1=0.9, beta2=0.999, eps=1e-8, weight decay 1e-8."""
    if lr <= 0:
        raise DomainError(f"learning rate must be positive, got {lr}")
    return torch.optim.Adam(model.parameters(), lr=lr,
                            betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-8)


def apply_update(model: nn.Module, grads: dict[str, torch.Tensor],
                 optimizer: torch.optim.Optimizer) -> None:
    """Install the gradient map and take one optimizer step."""
    params = dict(model.named_parameters())
    if set(grads) != set(params):
        raise ShapeError("gradient map does not match model parameters")
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {tuple(grads[name].shape)}, "
                             f"parameter has {tuple(p.shape)}")
        p.grad = grads[name].detach().clone()
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)


class ConstantVelocityModel(nn.Module):
    """Diagnostic model whose velocity is a fixed field, ignoring inputs and m.

    With the field set to the true target-minus-source difference this is the
    exact oracle for the Euler accumulation: every schedule and step count
    must land on the target latent.
    """

    def __init__(self, delta: torch.Tensor):
        super().__init__()
        self.register_buffer("delta", delta)

    def forward(self, x_t: torch.Tensor, z_src: torch.Tensor, m) -> torch.Tensor:
        if x_t.shape != z_src.shape:
            raise ShapeError("state and conditioning shapes differ")
        return self.delta.to(x_t.dtype).expand_as(x_t)
