"""Experiment configuration: INI files with sections, plus built-in presets.

Example::

    [experiment]
    output_dir = runs/mnist
    seeds = 0, 1, 2, 3, 4
    k = 100

    [data]
    source = idx            ; idx | moons
    train_dir = data/mnist  ; directory holding the IDX train/t10k files
    ood_dir = data/fashion-mnist

    [model]
    head = pbj              ; pbj | baseline
    backbone = cnn3
    latent_dim = 256

    [train]
    epochs = 75
    lr = 0.05
    schedule = 25:0.1, 50:0.1
    gamma = 100

Only the output directory can be overridden from the environment
(``PBJ_OUTPUT_DIR``).
"""
from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .training import TrainConfig


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in str(text).replace(",", " ").split())


def _schedule(text: str) -> tuple[tuple[int, float], ...]:
    out = []
    for item in str(text).split(","):
        item = item.strip()
        if not item:
            continue
        epoch, _, mult = item.partition(":")
        if not mult:
            raise ValueError(f"schedule entries look like 'epoch:multiplier', got {item!r}")
        out.append((int(epoch), float(mult)))
    return tuple(out)


@dataclass
class DataConfig:
    source: str = "idx"
    train_dir: str | None = None
    ood_dir: str | None = None
    moons_n: int = 1000
    moons_noise: float = 0.1
    moons_seed: int = 0


@dataclass
class ModelConfig:
    head: str = "pbj"
    backbone: str = "cnn3"
    latent_dim: int = 256
    hidden: tuple[int, ...] = (64, 64)
    channels: tuple[int, ...] = (64, 128, 128)
    paddings: tuple[int, ...] = (1, 0, 1)
    fc_width: int = 256
    projection_bias: bool = False
    calibration_scale: str = "std"


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    k: int = 100
    output_dir: str = "runs"

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.data.source not in ("idx", "moons"):
            raise ValueError(f"unknown data source {self.data.source!r}")
        if self.model.head not in ("pbj", "baseline"):
            raise ValueError(f"unknown head {self.model.head!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, train=replace(self.train, seed=seed))

    def estimator_params(self) -> dict:
        m, t = self.model, self.train
        params = dict(
            backbone=m.backbone, hidden=m.hidden, channels=m.channels, paddings=m.paddings,
            fc_width=m.fc_width, latent_dim=m.latent_dim, projection_bias=m.projection_bias,
            epochs=t.epochs, batch_size=t.batch_size, lr=t.lr, momentum=t.momentum,
            weight_decay=t.weight_decay, schedule=t.schedule, random_state=t.seed,
        )
        if m.head == "pbj":
            params.update(gamma=t.gamma, calibration_scale=m.calibration_scale)
        return params


def image_preset(**overrides) -> ExperimentConfig:
    """Three-layer CNN settings used for MNIST and FashionMNIST."""
    cfg = ExperimentConfig()
    return _apply(cfg, overrides)


def moons_preset(**overrides) -> ExperimentConfig:
    """Small MLP on two moons; the rates here were tuned for this toy problem."""
    cfg = ExperimentConfig(
        data=DataConfig(source="moons"),
        model=ModelConfig(backbone="mlp", latent_dim=8, hidden=(64, 64)),
        train=TrainConfig(epochs=300, batch_size=64, lr=0.05, schedule=((210, 0.1),), gamma=10.0),
        seeds=(0,),
    )
    return _apply(cfg, overrides)


PRESETS = {"image": image_preset, "moons": moons_preset}


def _apply(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    for key, value in overrides.items():
        section, _, name = key.partition(".")
        if not name:
            setattr(cfg, section, value)
        else:
            setattr(getattr(cfg, section), name, value)
    if isinstance(cfg.train, TrainConfig):
        cfg.train.__post_init__()
    cfg.__post_init__()
    return cfg


_CASTS = {
    "experiment": {"output_dir": str, "seeds": _ints, "k": int, "preset": str},
    "data": {
        "source": str, "train_dir": str, "ood_dir": str,
        "moons_n": int, "moons_noise": float, "moons_seed": int,
    },
    "model": {
        "head": str, "backbone": str, "latent_dim": int, "hidden": _ints, "channels": _ints,
        "paddings": _ints, "fc_width": int, "projection_bias": "bool", "calibration_scale": str,
    },
    "train": {
        "epochs": int, "batch_size": int, "lr": float, "momentum": float,
        "weight_decay": float, "schedule": _schedule, "gamma": float, "seed": int,
    },
}


def load_config(path) -> ExperimentConfig:
    """Parse an INI config; unknown sections or keys are errors."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.read(path)
    overrides = {}
    preset = "image"
    for section in parser.sections():
        if section not in _CASTS:
            raise ValueError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            cast = _CASTS[section].get(key)
            if cast is None:
                raise ValueError(f"{path}: unknown key {key!r} in [{section}]")
            value = parser.getboolean(section, key) if cast == "bool" else cast(raw)
            if section == "experiment" and key == "preset":
                preset = value
                continue
            name = key if section == "experiment" else f"{section}.{key}"
            overrides[name] = value
    if preset not in PRESETS:
        raise ValueError(f"{path}: unknown preset {preset!r}")
    if overrides.get("data.source") == "moons" and preset == "image":
        preset = "moons"
    return finalize(PRESETS[preset](**overrides))


def finalize(cfg: ExperimentConfig) -> ExperimentConfig:
    env = os.environ.get("PBJ_OUTPUT_DIR")
    if env:
        cfg.output_dir = env
    return cfg
