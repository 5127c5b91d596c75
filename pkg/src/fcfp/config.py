"""Flat key=value run configuration.

A config file is lines of `key = value` with `#` comments.  `preset` (if
given) applies a named bundle first; explicit keys then override it, in
whatever order they appear.  Unknown keys are hard errors, as are values
that fail their field's type.  The environment variable FCFP_SEED, when
set, overrides the training seed last of all.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass


@dataclass
class Config:
    # reproducibility
    seed: int = 1
    data_seed: int = 777
    threads: int = 1
    # model
    model: str = "q2a"  # q2a | baseline
    in_channels: int = 1
    n_classes: int = 2
    channels: tuple = (8, 16, 24, 32)
    k: int = 2
    s: int = 2
    enc_levels: int = 2  # sin/cos frequency pairs (L)
    cell_width: int = 2  # cell embedding width (C_e)
    aligned_width: int = 32  # aligned feature width (C_a)
    fcfp_hidden: tuple = (128, 64)
    head_hidden: int = 64
    tau1: float = -4.5 * math.log(2.0)
    tau2: float = 2.5 * math.log(2.0)
    ablation: str = "none"
    baseline_sample: str = "bilinear"  # bilinear | nearest
    # optimization
    optimizer: str = "adam"  # adam | sgd
    lr: float = 1e-3
    weight_decay: float = 0.0
    momentum: float = 0.9
    scheduler: str = "plateau"  # plateau | poly | none
    patience: int = 20
    factor: float = 0.1
    poly_power: float = 0.9
    epochs: int = 60
    batch_size: int = 16
    # data
    image_size: int = 64
    train_res: int = 32
    n_train: int = 200
    n_val: int = 50


PRESETS: dict[str, dict] = {
    # the library's own small-scale benchmark settings are the defaults
    "desk": {},
    "glas": {
        "channels": (32, 64, 96, 128),
        "k": 4,
        "aligned_width": 64,
        "cell_width": 2,
        "enc_levels": 2,
        "fcfp_hidden": (512, 256),
        "head_hidden": 128,
        "tau1": -4.5 * math.log(2.0),
        "tau2": 2.5 * math.log(2.0),
        "optimizer": "adam",
        "lr": 1e-3,
        "weight_decay": 0.0,
        "scheduler": "plateau",
        "patience": 20,
        "factor": 0.1,
        "epochs": 200,
        "batch_size": 16,
    },
    "synapse": {
        "channels": (32, 64, 96, 128),
        "k": 3,
        "aligned_width": 64,
        "cell_width": 2,
        "enc_levels": 2,
        "fcfp_hidden": (512, 256),
        "head_hidden": 128,
        "tau1": math.log(2.0 / 51.0),
        "tau2": 2.0 * math.log(2.0),
        "optimizer": "sgd",
        "lr": 0.01,
        "weight_decay": 5e-4,
        "momentum": 0.9,
        "scheduler": "poly",
        "poly_power": 0.9,
        "epochs": 150,
        "batch_size": 24,
    },
}

_FIELDS = {f.name: f for f in dataclasses.fields(Config)}


def _parse_value(name: str, raw: str):
    default = _FIELDS[name].default
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"{name}: expected an integer, got {raw!r}") from None
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ValueError(f"{name}: expected a number, got {raw!r}") from None
    if isinstance(default, tuple):
        try:
            return tuple(int(v.strip()) for v in raw.split(",") if v.strip())
        except ValueError:
            raise ValueError(f"{name}: expected comma-separated integers, got {raw!r}") from None
    return raw


def parse_config_text(text: str) -> Config:
    explicit: dict[str, object] = {}
    preset = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"line {lineno}: expected key = value, got {line.strip()!r}")
        key, raw = body.split("=", 1)
        key = key.strip()
        if key == "preset":
            preset = raw.strip()
            if preset not in PRESETS:
                raise ValueError(f"line {lineno}: unknown preset {preset!r}; one of {sorted(PRESETS)}")
            continue
        if key not in _FIELDS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        explicit[key] = _parse_value(key, raw)

    values: dict[str, object] = {}
    if preset is not None:
        values.update(PRESETS[preset])
    values.update(explicit)
    cfg = Config(**values)
    validate(cfg)
    return cfg


def load_config(path: str) -> Config:
    with open(path, "r", encoding="utf-8") as f:
        cfg = parse_config_text(f.read())
    env_seed = os.environ.get("FCFP_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ValueError(f"FCFP_SEED must be an integer, got {env_seed!r}") from None
    return cfg


def apply_overrides(cfg: Config, pairs: list[str]) -> Config:
    """Apply command-line `key=value` overrides on top of a parsed config."""
    cfg = dataclasses.replace(cfg)
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"override must be key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ValueError(f"unknown key {key!r}")
        setattr(cfg, key, _parse_value(key, raw))
    validate(cfg)
    return cfg


def config_to_text(cfg: Config) -> str:
    """Canonical fully resolved form; parsing it back reproduces cfg."""
    lines = []
    for f in dataclasses.fields(Config):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def validate(cfg: Config) -> None:
    from .pipeline import Ablation  # late import, avoids a cycle

    if cfg.model not in ("q2a", "baseline"):
        raise ValueError(f"model must be q2a or baseline, got {cfg.model!r}")
    if cfg.optimizer not in ("adam", "sgd"):
        raise ValueError(f"optimizer must be adam or sgd, got {cfg.optimizer!r}")
    if cfg.scheduler not in ("plateau", "poly", "none"):
        raise ValueError(f"scheduler must be plateau, poly or none, got {cfg.scheduler!r}")
    if cfg.baseline_sample not in ("bilinear", "nearest"):
        raise ValueError(f"baseline_sample must be bilinear or nearest, got {cfg.baseline_sample!r}")
    Ablation.from_name(cfg.ablation)
    if len(cfg.channels) != 4:
        raise ValueError(f"channels needs 4 stage widths, got {cfg.channels}")
    if cfg.k < 1 or cfg.s < 1:
        raise ValueError("k and s must be at least 1")
    if cfg.image_size % 32:
        raise ValueError(f"image_size must be divisible by 32, got {cfg.image_size}")
    if cfg.train_res < 1 or cfg.train_res > cfg.image_size:
        raise ValueError(f"train_res must be in [1, image_size], got {cfg.train_res}")
    if cfg.n_classes < 2:
        raise ValueError("n_classes must be at least 2")
    for name in ("epochs", "batch_size", "n_train", "n_val", "enc_levels", "cell_width", "aligned_width"):
        if getattr(cfg, name) < 1:
            raise ValueError(f"{name} must be positive")
