"""Training configuration and the plain ``key=value`` config file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from ..errors import ConfigError, ParseError
from ..imaging import AugmentationSpec
from ..pidloss import LossParams, PidState
from ..tinynet import AdamWConfig, Geometry

LOSSES = ("pid_tversky", "bce")


@dataclass(frozen=True)
class TrainConfig:
    # optimisation
    batch_size: int = 8
    encoder_lr: float = 1e-5
    decoder_lr: float = 1e-3
    weight_decay: float = 0.01
    max_epochs: int = 30
    patience: int = 5
    min_delta: float = 1e-4
    loss: str = "pid_tversky"
    seed: int = 0
    # controller and loss
    kp: float = 0.05
    ki: float = 0.005
    kd: float = 0.01
    beta0: float = 0.75
    beta_min: float = 0.65
    beta_max: float = 0.85
    integral_max: float = 10.0
    gamma: float = 4.0 / 3.0
    # geometry
    image_size: int = 64
    patch_size: int = 8
    d_vis: int = 32
    d_shared: int = 16
    n_heads: int = 8
    d_k: int = 4
    # data
    augment: bool = True
    max_rotation_deg: float = 3.0
    zoom_fraction: float = 0.05
    hflip_prob: float = 0.5
    contrast_fraction: float = 0.10
    roi_fraction: float = 0.6
    train_fraction: float = 0.70
    val_fraction: float = 0.15
    denoise: bool = False
    nlm_h: float = 0.08

    def __post_init__(self):
        positive = ["batch_size", "max_epochs", "patience", "gamma", "image_size", "patch_size",
                    "d_vis", "d_shared", "n_heads", "d_k"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("encoder_lr", "decoder_lr", "weight_decay", "min_delta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.patience > self.max_epochs:
            raise ConfigError("patience cannot exceed max_epochs")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if not self.beta_min <= self.beta0 <= self.beta_max:
            raise ConfigError("beta0 must lie inside [beta_min, beta_max]")

    def geometry(self, vocab_size: int) -> Geometry:
        return Geometry(self.image_size, self.patch_size, self.d_vis, self.d_shared,
                        self.n_heads, self.d_k, vocab_size)

    def adamw(self) -> AdamWConfig:
        return AdamWConfig(self.encoder_lr, self.decoder_lr, self.weight_decay)

    def pid_state(self) -> PidState:
        return PidState(kp=self.kp, ki=self.ki, kd=self.kd, beta=self.beta0, beta_min=self.beta_min,
                        beta_max=self.beta_max, integral_max=self.integral_max)

    def loss_params(self) -> LossParams:
        return LossParams(gamma=self.gamma)

    def augmentation(self) -> AugmentationSpec:
        return AugmentationSpec(self.max_rotation_deg, self.zoom_fraction, self.hflip_prob,
                                self.contrast_fraction)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, kind, raw: str):
    raw = raw.strip()
    try:
        if kind in (bool, "bool"):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_overrides(pairs) -> dict:
    """Turn ``["key=value", ...]`` into typed TrainConfig keyword arguments."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    out = {}
    for lineno, pair in pairs:
        if "=" not in pair:
            raise ParseError(f"expected key=value, got {pair!r}", lineno)
        key, value = (s.strip() for s in pair.split("=", 1))
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _coerce(key, types[key], value)
    return out


def read_config_file(path) -> dict:
    pairs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if line:
            pairs.append((lineno, line))
    return parse_overrides(pairs)


def load_config(path=None, overrides=()) -> TrainConfig:
    values = read_config_file(path) if path else {}
    values.update(parse_overrides([(None, o) for o in overrides]))
    return TrainConfig(**values)


def write_config_file(cfg: TrainConfig, path) -> None:
    lines = [f"{k}={v}" for k, v in cfg.to_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
