"""Pipeline configuration: training hyperparameters plus module defaults."""
from __future__ import annotations

import hashlib
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .formats import read_kv, write_kv
from .model import ArchitectureSpec, Variant
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    # training hyperparameters
    patch_size: int = 23
    overlap: int = 22
    batch_size: int = 1024
    epochs: int = 500
    lr: float = 1e-5
    n_splits: int = 9
    transforms_per_split: int = 2
    train_split: float = 0.68
    val_split: float = 0.12
    test_split: float = 0.20
    p_augment: float = 0.1
    patience: int = 20
    # data preparation
    clamp_max: float = 1.5
    red_nm: float = 670.0
    nir_nm: float = 800.0
    ndvi_threshold: float = 0.4
    band_lo: int = -1          # -1: keep all bands
    band_hi: int = -1
    n_features: int = 40
    fa_max_iter: int = 1000
    fa_tol: float = 1e-4
    k_groups: int = 3
    train_fraction: float = 1.0
    # model
    variant: str = Variant.PROPOSED.value
    # reproducibility
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        self.validate()

    @property
    def stride(self) -> int:
        return self.patch_size - self.overlap

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train_split, self.val_split, self.test_split)

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.patch_size >= 1 and self.patch_size % 2 == 1, f"patch_size must be odd and >= 1, got {self.patch_size}")
        need(0 <= self.overlap < self.patch_size, f"overlap must be in [0, patch_size), got {self.overlap}")
        need(self.batch_size >= 1, f"batch_size must be >= 1, got {self.batch_size}")
        need(self.epochs >= 1, f"epochs must be >= 1, got {self.epochs}")
        need(0.0 < self.lr <= 1.0, f"lr must be in (0, 1], got {self.lr}")
        need(self.n_splits >= 1 and self.transforms_per_split >= 1, "n_splits and transforms_per_split must be >= 1")
        need(all(f >= 0 for f in self.fractions) and abs(sum(self.fractions) - 1.0) < 1e-9,
             f"split fractions must be non-negative and sum to 1, got {self.fractions}")
        need(0.0 <= self.p_augment <= 1.0, f"p_augment must be in [0, 1], got {self.p_augment}")
        need(self.patience >= 1, "patience must be >= 1")
        need(self.clamp_max > 0, "clamp_max must be positive")
        need(-1.0 <= self.ndvi_threshold <= 1.0, f"ndvi_threshold must be in [-1, 1], got {self.ndvi_threshold}")
        need(self.n_features >= 1, "n_features must be >= 1")
        need(self.fa_max_iter >= 1 and self.fa_tol > 0, "fa_max_iter >= 1 and fa_tol > 0 required")
        need(self.k_groups >= 0, "k_groups must be >= 0")
        need(0.0 < self.train_fraction <= 1.0, f"train_fraction must be in (0, 1], got {self.train_fraction}")
        need(self.variant in {v.value for v in Variant}, f"unknown variant {self.variant!r}")
        need(self.threads >= 1, "threads must be >= 1")
        need(self.seed >= 0, "seed must be non-negative")

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                           n_splits=self.n_splits, transforms_per_split=self.transforms_per_split,
                           p_augment=self.p_augment, patience=self.patience, seed=self.seed)

    def arch_spec(self, n_classes: int, **overrides) -> ArchitectureSpec:
        return ArchitectureSpec(patch_size=self.patch_size, n_features=self.n_features,
                                n_classes=n_classes, variant=Variant(self.variant), **overrides)

    def to_kv(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        text = "".join(f"{k}={v!r}\n" for k, v in sorted(asdict(self).items()))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def override(self, **values) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in values.items() if v is not None})

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "PipelineConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in kv.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            kind = types[key]
            try:
                kw[key] = int(raw) if kind == "int" else float(raw) if kind == "float" else raw
            except ValueError:
                raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind}") from None
        return cls(**kw)


def load_config(path: str | os.PathLike) -> PipelineConfig:
    return PipelineConfig.from_kv(read_kv(path))


def save_config(path: str | os.PathLike, cfg: PipelineConfig) -> Path:
    return write_kv(path, cfg.to_kv())
