"""End-to-end run orchestration behind the CLI.

A run directory is self-describing: effective config echo, dataset (generated
or referenced), fitted scalers, codecs, checkpoints, and result/report files
all live under one root so experiments stay diffable.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import codec as codec_mod
from . import data as data_mod
from . import scaler as scaler_mod
from .codec import (IdentityCodec, PatchCodec, VQCodec, load_codec, save_codec,
                    train_vq)
from .core import OPTICAL_LABELS, RADAR_LABELS
from .errors import ConfigError, ParseError
from .inference import (InferConfig, run_inference, save_result, truth_result)
from .metrics import MetricReport, report, write_report_csv, write_report_json
from .model import ModelConfig, VelocityModel
from .schedules import Schedule, schedule_from_name
from .trainer import (Stage, TrainConfig, load_checkpoint, run_training,
                      save_checkpoint)

RUN_MANIFEST = "run.json"
RESULTS_MANIFEST = "results.json"


# --- run configuration ----------------------------------------------------------


@dataclass
class DataSection:
    dir: str | None = None
    scenes: int = 200
    size: int = 64
    chip_size: int | None = None
    smoothness: float = 8.0


@dataclass
class ScalerSection:
    radar_pcts: tuple[float, float] = scaler_mod.RADAR_PERCENTILES
    optical_pcts: tuple[float, float] = scaler_mod.OPTICAL_PERCENTILES
    eps: float = 1e-6
    clip_high: float | None = None


@dataclass
class CodecSection:
    kind: str = "patch"
    channels: int = 16
    factor: int = 2
    vq_codes: int = 64
    vq_hidden: int = 48
    vq_epochs: int = 40
    vq_lr: float = 3e-3


@dataclass
class ModelSection:
    hidden_channels: tuple[int, int, int] = (32, 64, 32)
    time_embedding: str = "sinusoidal"
    time_dim: int = 16
    dropout: float = 0.1


@dataclass
class TrainSection:
    epochs: int = 40
    steps_n: int = 100
    schedule: str = "cosine"
    expo_k: float | None = None
    stages: tuple[str, ...] = ("continuous", "discrete", "boundary")
    batch_size: int = 16
    lr: float = 1e-3
    checkpoint_interval: int = 0


@dataclass
class InferSection:
    steps: int = 100
    schedule: str = "cosine"
    expo_k: float | None = None
    index_eps: float = 1e-7
    clip_unit: bool = False


@dataclass
class EvalSection:
    emit_json: bool = False


@dataclass
class RunConfig:
    seed: int
    data: DataSection = field(default_factory=DataSection)
    scaler: ScalerSection = field(default_factory=ScalerSection)
    codec: CodecSection = field(default_factory=CodecSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    infer: InferSection = field(default_factory=InferSection)
    eval: EvalSection = field(default_factory=EvalSection)


_SECTIONS = {"data": DataSection, "scaler": ScalerSection, "codec": CodecSection,
             "model": ModelSection, "train": TrainSection, "infer": InferSection,
             "eval": EvalSection}

# JSON spellings that differ from field names
_FIELD_ALIASES = {"eval": {"json": "emit_json"}}


def _build_section(name: str, cls, doc: dict):
    fields = {f.name for f in dataclasses.fields(cls)}
    aliases = _FIELD_ALIASES.get(name, {})
    kwargs = {}
    for key, value in doc.items():
        attr = aliases.get(key, key)
        if attr not in fields:
            raise ConfigError(f"unknown config key {name}.{key}")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[attr] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"bad {name} section: {e}") from e


def parse_run_config(doc: dict) -> RunConfig:
    """Validate a raw JSON document; unknown keys are rejected with their path."""
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a JSON object")
    if "seed" not in doc:
        raise ConfigError("run config requires a top-level seed")
    sections = {}
    for key, value in doc.items():
        if key == "seed":
            continue
        if key not in _SECTIONS:
            raise ConfigError(f"unknown config key {key}")
        if not isinstance(value, dict):
            raise ConfigError(f"config section {key} must be an object")
        sections[key] = _build_section(key, _SECTIONS[key], value)
    return RunConfig(seed=int(doc["seed"]), **sections)


def load_run_config(path: str | Path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ParseError(f"config file {path} not found") from None
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid config JSON in {path}: {e}") from e
    return parse_run_config(doc)


def effective_config(cfg: RunConfig) -> dict:
    """The fully-defaulted config document echoed into run manifests."""
    doc = dataclasses.asdict(cfg)
    return json.loads(json.dumps(doc))  # tuples -> lists, plain JSON types


def _train_schedule(section) -> Schedule:
    return schedule_from_name(section.schedule, section.expo_k)


# --- artifact construction ------------------------------------------------------


def fit_scalers(data_dir: Path, manifest: dict, cfg: RunConfig):
    _, radar_train = data_mod.load_split(data_dir, manifest, "train", "radar")
    _, optical_train = data_mod.load_split(data_dir, manifest, "train", "optical")
    radar_scaler = scaler_mod.fit(radar_train, *cfg.scaler.radar_pcts,
                                  eps=cfg.scaler.eps)
    optical_scaler = scaler_mod.fit(optical_train, *cfg.scaler.optical_pcts,
                                    eps=cfg.scaler.eps, clip_high=cfg.scaler.clip_high)
    return radar_scaler, optical_scaler


def build_codec(cfg: RunConfig, role: str, train_chips, val_chips):
    """Construct (and for VQ, train) the codec for one sensor role."""
    section = cfg.codec
    channels = len(RADAR_LABELS) if role == "radar" else len(OPTICAL_LABELS)
    labels = RADAR_LABELS if role == "radar" else OPTICAL_LABELS
    if section.kind == codec_mod.KIND_IDENTITY:
        return IdentityCodec(channels, labels)
    if section.kind == codec_mod.KIND_PATCH:
        return PatchCodec(channels, labels, channels=section.channels,
                          factor=section.factor, seed=cfg.seed)
    if section.kind == codec_mod.KIND_VQ:
        codec = VQCodec(channels, labels, channels=section.channels,
                        factor=section.factor, num_codes=section.vq_codes,
                        hidden=section.vq_hidden, seed=cfg.seed)
        train_vq(codec, train_chips, val_chips, epochs=section.vq_epochs,
                 lr=section.vq_lr, seed=cfg.seed)
        return codec
    raise ConfigError(f"unknown codec kind {section.kind!r}")


def _scaled_split(data_dir, manifest, split, role, params):
    ids, chips = data_mod.load_split(data_dir, manifest, split, role)
    return ids, [scaler_mod.transform(params, c) for c in chips]


def encode_pairs(source_codec, target_codec, radar_chips, optical_chips):
    z1 = np.stack([source_codec.encode(c).data for c in radar_chips])
    z2 = np.stack([target_codec.encode(c).data for c in optical_chips])
    return torch.from_numpy(z1.astype(np.float32)), torch.from_numpy(z2.astype(np.float32))


def _augmented_training_chips(radar, optical, seed):
    """Originals plus one jointly-augmented copy each (doubles the split)."""
    out_r, out_o = list(radar), list(optical)
    for i, (r, o) in enumerate(zip(radar, optical)):
        ar, ao = data_mod.augment_pair(r, o, seed + i)
        out_r.append(ar)
        out_o.append(ao)
    return out_r, out_o


# --- pipeline stages -------------------------------------------------------------


def _write_loss_trace(path: Path, reports, train_cfg: TrainConfig) -> None:
    stages = [s.value for s in train_cfg.stages]
    with open(path, "w") as fh:
        fh.write(",".join(["epoch", "train_loss", *[f"loss_{s}" for s in stages],
                           "val_loss", "lr"]) + "\n")
        for r in reports:
            cells = [str(r.epoch), repr(r.train_loss),
                     *[repr(r.stage_losses[s]) for s in stages],
                     repr(r.val_loss), repr(r.lr)]
            fh.write(",".join(cells) + "\n")


def prepare_run(cfg: RunConfig, run_dir: str | Path) -> dict:
    """Create the run directory with data, scalers, and codecs in place."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    if cfg.data.dir is not None:
        data_dir = Path(cfg.data.dir)
        manifest = data_mod.load_manifest(data_dir)
    else:
        data_dir = run_dir / "data"
        manifest = data_mod.generate_dataset(
            data_dir, seed=cfg.seed, scenes=cfg.data.scenes, size=cfg.data.size,
            chip_size=cfg.data.chip_size, smoothness=cfg.data.smoothness)

    radar_scaler, optical_scaler = fit_scalers(data_dir, manifest, cfg)
    scaler_mod.save(radar_scaler, run_dir / "scaler_radar.json")
    scaler_mod.save(optical_scaler, run_dir / "scaler_optical.json")

    _, radar_train = _scaled_split(data_dir, manifest, "train", "radar", radar_scaler)
    _, optical_train = _scaled_split(data_dir, manifest, "train", "optical", optical_scaler)
    _, radar_val = _scaled_split(data_dir, manifest, "val", "radar", radar_scaler)
    _, optical_val = _scaled_split(data_dir, manifest, "val", "optical", optical_scaler)

    source_codec = build_codec(cfg, "radar", radar_train, radar_val)
    target_codec = build_codec(cfg, "optical", optical_train, optical_val)
    save_codec(source_codec, run_dir / "codec_radar.json")
    save_codec(target_codec, run_dir / "codec_optical.json")

    run_doc = {
        "seed": cfg.seed,
        "config": effective_config(cfg),
        "data_dir": str(data_dir),
        "artifacts": {
            "scaler_radar": "scaler_radar.json",
            "scaler_optical": "scaler_optical.json",
            "codec_radar": "codec_radar.json",
            "codec_optical": "codec_optical.json",
        },
        "lineage": [],
    }
    (run_dir / RUN_MANIFEST).write_text(json.dumps(run_doc, indent=2) + "\n")
    return run_doc


def train_run(cfg: RunConfig, run_dir: str | Path) -> dict:
    """Full training pipeline: prepare artifacts, encode, run the trainer."""
    run_dir = Path(run_dir)
    run_doc = prepare_run(cfg, run_dir)
    data_dir = Path(run_doc["data_dir"])
    manifest = data_mod.load_manifest(data_dir)

    radar_scaler = scaler_mod.load(run_dir / "scaler_radar.json")
    optical_scaler = scaler_mod.load(run_dir / "scaler_optical.json")
    source_codec = load_codec(run_dir / "codec_radar.json")
    target_codec = load_codec(run_dir / "codec_optical.json")

    _, radar_train = _scaled_split(data_dir, manifest, "train", "radar", radar_scaler)
    _, optical_train = _scaled_split(data_dir, manifest, "train", "optical", optical_scaler)
    radar_train, optical_train = _augmented_training_chips(
        radar_train, optical_train, cfg.seed)
    _, radar_val = _scaled_split(data_dir, manifest, "val", "radar", radar_scaler)
    _, optical_val = _scaled_split(data_dir, manifest, "val", "optical", optical_scaler)

    train_pairs = encode_pairs(source_codec, target_codec, radar_train, optical_train)
    val_pairs = encode_pairs(source_codec, target_codec, radar_val, optical_val)

    model_cfg = ModelConfig(
        latent_channels=source_codec.spec.channels,
        hidden_channels=cfg.model.hidden_channels,
        time_embedding=cfg.model.time_embedding,
        time_dim=cfg.model.time_dim,
        dropout=cfg.model.dropout,
        seed=cfg.seed,
    )
    train_cfg = TrainConfig(
        epochs=cfg.train.epochs,
        steps_n=cfg.train.steps_n,
        schedule=_train_schedule(cfg.train),
        stages=tuple(Stage(s) for s in cfg.train.stages),
        batch_size=cfg.train.batch_size,
        lr=cfg.train.lr,
        checkpoint_interval=cfg.train.checkpoint_interval,
        seed=cfg.seed,
    )
    model = VelocityModel(model_cfg)
    state, reports = run_training(model, train_cfg, train_pairs, val_pairs,
                                  out_dir=run_dir)
    _write_loss_trace(run_dir / "loss_trace.csv", reports, train_cfg)

    run_doc["artifacts"]["checkpoint"] = "checkpoint_final"
    run_doc["artifacts"]["loss_trace"] = "loss_trace.csv"
    run_doc["epochs_trained"] = state.epoch
    (run_dir / RUN_MANIFEST).write_text(json.dumps(run_doc, indent=2) + "\n")
    return run_doc


def _load_run(run_dir: Path):
    manifest_path = run_dir / RUN_MANIFEST
    if not manifest_path.exists():
        raise ParseError(f"no {RUN_MANIFEST} in {run_dir}")
    run_doc = json.loads(manifest_path.read_text())
    radar_scaler = scaler_mod.load(run_dir / run_doc["artifacts"]["scaler_radar"])
    optical_scaler = scaler_mod.load(run_dir / run_doc["artifacts"]["scaler_optical"])
    source_codec = load_codec(run_dir / run_doc["artifacts"]["codec_radar"])
    target_codec = load_codec(run_dir / run_doc["artifacts"]["codec_optical"])
    return run_doc, radar_scaler, optical_scaler, source_codec, target_codec


def infer_run(run_dir: str | Path, steps: int | None = None,
              schedule: str | None = None, expo_k: float | None = None,
              clip_unit: bool | None = None, split: str = "test",
              out_name: str | None = None) -> Path:
    """Run inference over one split; emits per-chip result files + manifest."""
    run_dir = Path(run_dir)
    run_doc, radar_scaler, optical_scaler, source_codec, target_codec = _load_run(run_dir)
    cfg = parse_run_config(run_doc["config"])

    section = cfg.infer
    steps = section.steps if steps is None else steps
    if schedule is None:
        # no override: grid settings come from the run config as a unit
        sched_name, k = section.schedule, section.expo_k
    else:
        sched_name, k = schedule, expo_k
    infer_cfg = InferConfig(
        steps=steps,
        schedule=schedule_from_name(sched_name, k),
        index_eps=section.index_eps,
        clip_unit=section.clip_unit if clip_unit is None else clip_unit,
    )

    model, _, _ = load_checkpoint(run_dir / run_doc["artifacts"]["checkpoint"])
    model.eval()

    data_dir = Path(run_doc["data_dir"])
    manifest = data_mod.load_manifest(data_dir)
    ids, radar_chips = _scaled_split(data_dir, manifest, split, "radar", radar_scaler)

    results = run_inference(model, source_codec, target_codec, radar_chips, infer_cfg, ids=ids)

    label = infer_cfg.schedule.kind.value
    out_name = out_name or f"results_{label}_T{steps}_{split}"
    out_dir = run_dir / out_name
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for res in results:
        fname = f"{res.chip_id}.tens"
        save_result(out_dir / fname, res)
        files[res.chip_id] = fname
    doc = {
        "run_dir": str(run_dir), "data_dir": str(data_dir), "split": split,
        "steps": steps, "schedule": infer_cfg.schedule.label(),
        "index_eps": infer_cfg.index_eps, "clip_unit": infer_cfg.clip_unit,
        "codec_tag": target_codec.tag, "seed": run_doc["seed"], "files": files,
    }
    (out_dir / RESULTS_MANIFEST).write_text(json.dumps(doc, indent=2) + "\n")
    return out_dir


def load_results(results_dir: str | Path):
    from .inference import load_result

    results_dir = Path(results_dir)
    manifest_path = results_dir / RESULTS_MANIFEST
    if not manifest_path.exists():
        raise ParseError(f"no {RESULTS_MANIFEST} in {results_dir}")
    doc = json.loads(manifest_path.read_text())
    results = [load_result(results_dir / fname, cid, doc["codec_tag"])
               for cid, fname in doc["files"].items()]
    return doc, results


def truth_results(results_doc: dict, infer_cfg: InferConfig | None = None):
    """Ground-truth TranslationResults aligned with a results manifest."""
    run_dir = Path(results_doc["run_dir"])
    _, _, optical_scaler, _, target_codec = _load_run(run_dir)
    data_dir = Path(results_doc["data_dir"])
    manifest = data_mod.load_manifest(data_dir)
    cfg = infer_cfg or InferConfig(steps=max(results_doc["steps"], 2),
                                   index_eps=results_doc["index_eps"])
    ids, optical = _scaled_split(data_dir, manifest, results_doc["split"],
                                 "optical", optical_scaler)
    by_id = {cid: chip for cid, chip in zip(ids, optical)}
    return [truth_result(target_codec, by_id[cid], cfg, cid)
            for cid in results_doc["files"]]


def eval_run(results_dir: str | Path, csv_path: str | Path | None = None,
             json_path: str | Path | None = None) -> MetricReport:
    """Score one results directory against ground truth; emit CSV (and JSON)."""
    doc, results = load_results(results_dir)
    truths = truth_results(doc)
    rep = report(results, truths, steps=doc["steps"], schedule=doc["schedule"],
                 seed=doc["seed"])
    results_dir = Path(results_dir)
    csv_path = csv_path or results_dir / "report.csv"
    write_report_csv(csv_path, [rep])
    if json_path is None:
        run_cfg = parse_run_config(json.loads(
            (Path(doc["run_dir"]) / RUN_MANIFEST).read_text())["config"])
        if run_cfg.eval.emit_json:
            json_path = results_dir / "report.json"
    if json_path is not None:
        write_report_json(json_path, [rep])
    return rep


def finetune_run(parent_run: str | Path, data_dir: str | Path, epochs: int,
                 out_dir: str | Path, lr: float | None = None,
                 seed: int | None = None) -> dict:
    """Resume a checkpoint on a new dataset, reusing parent scalers and codecs."""
    parent_run = Path(parent_run)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_doc, radar_scaler, optical_scaler, source_codec, target_codec = _load_run(parent_run)
    model, optimizer, ckpt_manifest = load_checkpoint(
        parent_run / run_doc["artifacts"]["checkpoint"])

    if model.config.latent_channels != source_codec.spec.channels:
        raise ConfigError("checkpoint latent width disagrees with codec")

    data_dir = Path(data_dir)
    manifest = data_mod.load_manifest(data_dir)
    sample = data_mod.read_chip(data_dir / manifest["pairs"][0]["radar"])
    if sample.channels != source_codec.input_channels:
        raise ConfigError(
            f"dataset radar chips have {sample.channels} channels, "
            f"codec expects {source_codec.input_channels}")
    if sample.height % source_codec.spec.spatial_factor:
        raise ConfigError("dataset chip size incompatible with codec factor")

    base_cfg = parse_run_config(run_doc["config"])
    train_cfg = TrainConfig(
        epochs=epochs,
        steps_n=base_cfg.train.steps_n,
        schedule=_train_schedule(base_cfg.train),
        stages=tuple(Stage(s) for s in base_cfg.train.stages),
        batch_size=base_cfg.train.batch_size,
        lr=lr if lr is not None else base_cfg.train.lr,
        checkpoint_interval=base_cfg.train.checkpoint_interval,
        seed=seed if seed is not None else base_cfg.seed,
    )

    lineage = list(ckpt_manifest.get("lineage", []))
    lineage.append({"parent": str(parent_run), "parent_epoch": ckpt_manifest["epoch"],
                    "data_dir": str(data_dir), "epochs": epochs})

    # artifacts are shared with the parent; the new run dir holds the new weights
    for name in ("scaler_radar", "scaler_optical"):
        scaler_mod.save(radar_scaler if name == "scaler_radar" else optical_scaler,
                        out / f"{name}.json")
    save_codec(source_codec, out / "codec_radar.json")
    save_codec(target_codec, out / "codec_optical.json")

    if epochs > 0:
        _, radar_train = _scaled_split(data_dir, manifest, "train", "radar", radar_scaler)
        _, optical_train = _scaled_split(data_dir, manifest, "train", "optical",
                                         optical_scaler)
        radar_train, optical_train = _augmented_training_chips(
            radar_train, optical_train, train_cfg.seed)
        _, radar_val = _scaled_split(data_dir, manifest, "val", "radar", radar_scaler)
        _, optical_val = _scaled_split(data_dir, manifest, "val", "optical",
                                       optical_scaler)
        train_pairs = encode_pairs(source_codec, target_codec, radar_train, optical_train)
        val_pairs = encode_pairs(source_codec, target_codec, radar_val, optical_val)
        state, reports = run_training(model, train_cfg, train_pairs, val_pairs,
                                      out_dir=out, optimizer=optimizer,
                                      start_epoch=ckpt_manifest["epoch"],
                                      lineage=lineage)
        _write_loss_trace(out / "loss_trace.csv", reports, train_cfg)
        total_epochs = state.epoch
    else:
        save_checkpoint(out / "checkpoint_final", model, optimizer, train_cfg,
                        ckpt_manifest["epoch"], [], lineage)
        total_epochs = ckpt_manifest["epoch"]

    new_doc = {
        "seed": train_cfg.seed,
        "config": run_doc["config"],
        "data_dir": str(data_dir),
        "artifacts": dict(run_doc["artifacts"], checkpoint="checkpoint_final"),
        "lineage": lineage,
        "epochs_trained": total_epochs,
    }
    (out / RUN_MANIFEST).write_text(json.dumps(new_doc, indent=2) + "\n")
    return new_doc


def compare_schedules(base_cfg: RunConfig, out_dir: str | Path,
                      schedules=(("cosine", None), ("expo", 2.0), ("linear", None)),
                      steps_list=(100, 1000),
                      reuse_runs: dict | None = None) -> list[MetricReport]:
    """Train one model per schedule and score each at every step count.

    Emits a Table-shaped CSV: one row per (schedule, steps), all metric cells.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for name, k in schedules:
        label = name if k is None else f"{name}{k:g}"
        run_dir = (reuse_runs or {}).get((name, k))
        if run_dir is None:
            cfg = dataclasses.replace(
                base_cfg,
                train=dataclasses.replace(base_cfg.train, schedule=name, expo_k=k),
                infer=dataclasses.replace(base_cfg.infer, schedule=name, expo_k=k),
            )
            run_dir = out_dir / f"run_{label}"
            train_run(cfg, run_dir)
        for steps in steps_list:
            results_dir = infer_run(run_dir, steps=steps, schedule=name, expo_k=k)
            reports.append(eval_run(results_dir))
    write_report_csv(out_dir / "schedule_comparison.csv", reports)
    return reports
