"""Multi-stage training over paired latents.

Every batch passes through the enabled stages in fixed order, each with its
own optimizer update:

  continuous - progress drawn uniformly from [0, 1] per element
  discrete   - progress drawn from the grid {0/N, ..., (N-1)/N} per element
  boundary   - progress pinned to 0, input pair [z1, z1]

The regression target is always z2 - z1. Validation samples one grid
progress per batch and never touches parameters; the learning rate halves
when validation loss plateaus.
"""

from __future__ import annotations

import enum
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import DomainError, NumericError, ParseError, ShapeError
from .model import ModelConfig, VelocityModel, apply_update, loss_and_grad, make_optimizer
from .schedules import Schedule, ScheduleKind, mix_weight


class Stage(enum.Enum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete"
    BOUNDARY = "boundary"


ALL_STAGES = (Stage.CONTINUOUS, Stage.DISCRETE, Stage.BOUNDARY)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    steps_n: int = 100
    schedule: Schedule = field(default_factory=Schedule.cosine)
    stages: tuple[Stage, ...] = ALL_STAGES
    batch_size: int = 16
    lr: float = 1e-4
    checkpoint_interval: int = 0
    seed: int = 0
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    min_lr: float = 1e-6

    def __post_init__(self):
        if self.epochs < 0:
            raise DomainError("epochs must be >= 0")
        if self.steps_n < 1:
            raise DomainError("interpolation step count N must be >= 1")
        if not self.stages:
            raise DomainError("at least one training stage must be enabled")
        if len(set(self.stages)) != len(self.stages):
            raise DomainError("duplicate training stages")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if self.lr <= 0:
            raise DomainError("learning rate must be positive")


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    stage_losses: dict[str, float]
    val_loss: float
    lr: float
    updates: int
    wall_time: float

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss,
                "stage_losses": dict(self.stage_losses), "val_loss": self.val_loss,
                "lr": self.lr, "updates": self.updates, "wall_time": self.wall_time}


@dataclass
class TrainState:
    model: VelocityModel
    optimizer: torch.optim.Optimizer
    config: TrainConfig
    epoch: int
    reports: list[EpochReport]
    seed: int


def _check_pairs(z1: torch.Tensor, z2: torch.Tensor) -> None:
    if z1.shape != z2.shape:
        raise ShapeError(f"paired latents must match: {tuple(z1.shape)} vs {tuple(z2.shape)}")
    if z1.ndim != 4:
        raise ShapeError(f"expected (B, c, h, w) latent batches, got {tuple(z1.shape)}")


def _blend(sched: Schedule, z1: torch.Tensor, z2: torch.Tensor,
           m: np.ndarray) -> torch.Tensor:
    """x_t = (1 - w) z1 + w z2 with w computed in float64 per element."""
    w = torch.from_numpy(np.asarray(mix_weight(sched, m))).to(z1.dtype)
    w = w.reshape(-1, 1, 1, 1)
    return (1.0 - w) * z1 + w * z2


def draw_progress(stage: Stage, rng: np.random.Generator, batch: int,
                  steps_n: int) -> np.ndarray:
    """Per-element progress draws for one stage of one batch."""
    if stage is Stage.CONTINUOUS:
        return rng.random(batch)
    if stage is Stage.DISCRETE:
        return rng.integers(0, steps_n, size=batch).astype(np.float64) / steps_n
    return np.zeros(batch)


def _stage_step(model, optimizer, z1, z2, sched: Schedule, stage: Stage,
                rng: np.random.Generator, steps_n: int) -> float:
    _check_pairs(z1, z2)
    m = draw_progress(stage, rng, z1.shape[0], steps_n)
    x_t = z1 if stage is Stage.BOUNDARY else _blend(sched, z1, z2, m)
    target = z2 - z1
    loss, grads = loss_and_grad(model, x_t, z1, torch.from_numpy(m).to(z1.dtype), target)
    apply_update(model, grads, optimizer)
    return loss


def train_step_continuous(model, optimizer, z1, z2, sched: Schedule,
                          rng: np.random.Generator) -> float:
    """One continuous-stage batch: uniform m per element, then an update."""
    return _stage_step(model, optimizer, z1, z2, sched, Stage.CONTINUOUS, rng, 1)


def train_step_discrete(model, optimizer, z1, z2, sched: Schedule,
                        rng: np.random.Generator, steps_n: int) -> float:
    """One discrete-stage batch: m drawn from {0/N, ..., (N-1)/N}."""
    if steps_n < 1:
        raise DomainError("interpolation step count N must be >= 1")
    return _stage_step(model, optimizer, z1, z2, sched, Stage.DISCRETE, rng, steps_n)


def train_step_boundary(model, optimizer, z1, z2) -> float:
    """One boundary-stage batch: input pair [z1, z1] at m = 0."""
    rng = np.random.default_rng(0)  # unused; boundary draws nothing
    return _stage_step(model, optimizer, z1, z2, Schedule.cosine(), Stage.BOUNDARY, rng, 1)


def validation_loss(model, z1_set: torch.Tensor, z2_set: torch.Tensor,
                    config: TrainConfig, rng: np.random.Generator) -> float:
    """Mean batch loss on discrete-grid progress, without parameter updates."""
    _check_pairs(z1_set, z2_set)
    was_training = model.training
    model.eval()
    total, batches = 0.0, 0
    with torch.no_grad():
        for start in range(0, z1_set.shape[0], config.batch_size):
            z1 = z1_set[start:start + config.batch_size]
            z2 = z2_set[start:start + config.batch_size]
            t = int(rng.integers(0, config.steps_n))
            m = np.full(z1.shape[0], t / config.steps_n)
            x_t = _blend(config.schedule, z1, z2, m)
            pred = model(x_t, z1, torch.from_numpy(m).to(z1.dtype))
            loss = torch.mean((z2 - z1 - pred) ** 2)
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite validation loss at batch {batches}")
            total += float(loss)
            batches += 1
    if was_training:
        model.train()
    return total / batches


def run_training(model: VelocityModel, config: TrainConfig,
                 train_pairs: tuple[torch.Tensor, torch.Tensor],
                 val_pairs: tuple[torch.Tensor, torch.Tensor],
                 out_dir: str | Path | None = None,
                 optimizer: torch.optim.Optimizer | None = None,
                 start_epoch: int = 0,
                 lineage: list | None = None) -> tuple[TrainState, list[EpochReport]]:
    """Run the full multi-stage loop; returns final state and epoch reports."""
    z1_train, z2_train = train_pairs
    z1_val, z2_val = val_pairs
    _check_pairs(z1_train, z2_train)
    _check_pairs(z1_val, z2_val)
    if z1_train.shape[0] == 0 or z1_val.shape[0] == 0:
        raise DomainError("training and validation sets must be non-empty")

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    if optimizer is None:
        optimizer = make_optimizer(model, config.lr)
    plateau = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, factor=config.plateau_factor,
        patience=config.plateau_patience, min_lr=config.min_lr)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    reports: list[EpochReport] = []
    n = z1_train.shape[0]
    for epoch_offset in range(config.epochs):
        epoch = start_epoch + epoch_offset
        started = time.perf_counter()
        model.train()
        order = rng.permutation(n)
        stage_totals = {s.value: 0.0 for s in config.stages}
        total_loss, batches, updates = 0.0, 0, 0
        for start in range(0, n, config.batch_size):
            idx = torch.from_numpy(order[start:start + config.batch_size])
            z1, z2 = z1_train[idx], z2_train[idx]
            for stage in config.stages:
                loss = _stage_step(model, optimizer, z1, z2, config.schedule,
                                   stage, rng, config.steps_n)
                stage_totals[stage.value] += loss
                total_loss += loss
                updates += 1
            batches += 1

        val = validation_loss(model, z1_val, z2_val, config, rng)
        plateau.step(val)
        report = EpochReport(
            epoch=epoch,
            train_loss=total_loss / batches,
            stage_losses={k: v / batches for k, v in stage_totals.items()},
            val_loss=val,
            lr=optimizer.param_groups[0]["lr"],
            updates=updates,
            wall_time=time.perf_counter() - started,
        )
        reports.append(report)

        if out is not None and config.checkpoint_interval > 0 \
                and (epoch + 1) % config.checkpoint_interval == 0:
            save_checkpoint(out / f"checkpoint_epoch_{epoch + 1:04d}", model,
                            optimizer, config, epoch + 1, reports, lineage)

    state = TrainState(model=model, optimizer=optimizer, config=config,
                       epoch=start_epoch + config.epochs, reports=reports,
                       seed=config.seed)
    if out is not None:
        save_checkpoint(out / "checkpoint_final", model, optimizer, config,
                        state.epoch, reports, lineage)
    return state, reports


# --- checkpoint persistence ---------------------------------------------------


def _schedule_to_doc(sched: Schedule) -> dict:
    doc = {"kind": sched.kind.value}
    if sched.kind is ScheduleKind.EXPONENTIAL:
        doc["k"] = sched.k
        doc["eps"] = sched.eps
    return doc


def _schedule_from_doc(doc: dict) -> Schedule:
    kind = ScheduleKind(doc["kind"])
    if kind is ScheduleKind.EXPONENTIAL:
        return Schedule.exponential(doc["k"], eps=doc.get("eps", 1e-6))
    return Schedule(kind)


def train_config_to_doc(config: TrainConfig) -> dict:
    return {
        "epochs": config.epochs, "steps_n": config.steps_n,
        "schedule": _schedule_to_doc(config.schedule),
        "stages": [s.value for s in config.stages],
        "batch_size": config.batch_size, "lr": config.lr,
        "checkpoint_interval": config.checkpoint_interval, "seed": config.seed,
        "plateau_factor": config.plateau_factor,
        "plateau_patience": config.plateau_patience, "min_lr": config.min_lr,
    }


def train_config_from_doc(doc: dict) -> TrainConfig:
    return TrainConfig(
        epochs=doc["epochs"], steps_n=doc["steps_n"],
        schedule=_schedule_from_doc(doc["schedule"]),
        stages=tuple(Stage(s) for s in doc["stages"]),
        batch_size=doc["batch_size"], lr=doc["lr"],
        checkpoint_interval=doc["checkpoint_interval"], seed=doc["seed"],
        plateau_factor=doc.get("plateau_factor", 0.5),
        plateau_patience=doc.get("plateau_patience", 10),
        min_lr=doc.get("min_lr", 1e-6),
    )


def model_config_to_doc(config: ModelConfig) -> dict:
    return {
        "latent_channels": config.latent_channels,
        "hidden_channels": list(config.hidden_channels),
        "time_embedding": config.time_embedding,
        "time_dim": config.time_dim, "dropout": config.dropout,
        "seed": config.seed,
    }


def model_config_from_doc(doc: dict) -> ModelConfig:
    return ModelConfig(
        latent_channels=doc["latent_channels"],
        hidden_channels=tuple(doc["hidden_channels"]),
        time_embedding=doc["time_embedding"], time_dim=doc["time_dim"],
        dropout=doc["dropout"], seed=doc["seed"],
    )


def save_checkpoint(path_base: str | Path, model: VelocityModel,
                    optimizer: torch.optim.Optimizer, config: TrainConfig,
                    epoch: int, reports: list[EpochReport],
                    lineage: list | None = None) -> None:
    """Weights and optimizer moments in the tensor container, manifest as JSON."""
    from .data import write_tensors

    path_base = Path(path_base)
    tensors: dict[str, np.ndarray] = {}
    params = dict(model.named_parameters())
    for name, p in params.items():
        tensors[f"model.{name}"] = p.detach().numpy()
    for name, p in params.items():
        state = optimizer.state.get(p)
        if state:
            tensors[f"opt.{name}.exp_avg"] = state["exp_avg"].numpy()
            tensors[f"opt.{name}.exp_avg_sq"] = state["exp_avg_sq"].numpy()
            tensors[f"opt.{name}.step"] = np.asarray(
                [int(state["step"])], dtype=np.int64)
    write_tensors(path_base.with_suffix(".tens"), tensors)

    manifest = {
        "model_config": model_config_to_doc(model.config),
        "train_config": train_config_to_doc(config),
        "epoch": epoch,
        "seed": config.seed,
        "loss_history": [r.to_dict() for r in reports],
        "lineage": lineage or [],
    }
    path_base.with_suffix(".json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_checkpoint(path_base: str | Path) -> tuple[VelocityModel, torch.optim.Optimizer, dict]:
    """Rebuild the model and Adam state from a checkpoint pair of files."""
    from .data import read_tensors

    path_base = Path(path_base)
    manifest_path = path_base.with_suffix(".json")
    if not manifest_path.exists():
        raise ParseError(f"checkpoint manifest {manifest_path} not found")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid checkpoint manifest {manifest_path}: {e}") from e
    for key in ("model_config", "train_config", "epoch"):
        if key not in manifest:
            raise ParseError(f"checkpoint manifest {manifest_path} is missing {key!r}")

    tensors = read_tensors(path_base.with_suffix(".tens"))
    model_cfg = model_config_from_doc(manifest["model_config"])
    train_cfg = train_config_from_doc(manifest["train_config"])
    model = VelocityModel(model_cfg)
    state = {}
    for name, p in model.named_parameters():
        key = f"model.{name}"
        if key not in tensors:
            raise ParseError(f"checkpoint {path_base}: missing tensor {key!r}")
        state[name] = torch.from_numpy(tensors[key])
    model.load_state_dict(state)

    optimizer = make_optimizer(model, train_cfg.lr)
    for name, p in model.named_parameters():
        avg_key = f"opt.{name}.exp_avg"
        if avg_key in tensors:
            optimizer.state[p] = {
                "step": torch.tensor(float(tensors[f"opt.{name}.step"][0])),
                "exp_avg": torch.from_numpy(tensors[avg_key]),
                "exp_avg_sq": torch.from_numpy(tensors[f"opt.{name}.exp_avg_sq"]),
            }
    return model, optimizer, manifest
