"""One flat configuration document shared by every command.

Defaults are the full-scale training settings; desk-scale runs override
the handful of fields they need via flags or a JSON config file. Flags
always win over the file, which wins over defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, fields, replace
from pathlib import Path

from .augment import NoiseSpec, RAcutConfig
from .cpi import CpiConfig, FinetuneConfig
from .encoder import EncoderConfig
from .errors import ValidationError
from .perm import SinkhornConfig
from .pretrain import PretrainConfig


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # data geometry
    n: int = 24
    l_max: int = 1200
    max_atoms: int = 290
    mask_prob: float = 0.15
    noise_kind: str = "mask"
    # encoder
    embed_dim: int = 256
    layers: int = 8
    heads: int = 8
    ffn_dim: int = 1024
    # optimization (both phases unless overridden per command)
    epochs: int = 200
    lr: float = 5e-5
    batch_size: int = 64
    weight_decay: float = 1e-4
    sinkhorn_m: int = 10
    eval_m: int = 50
    # downstream head
    fusion_dim: int = 512
    comp_layers: int = 2
    comp_heads: int = 8
    comp_ffn_dim: int = 1024
    lam: float = 1e-4
    # split
    train_ratio: float = 0.7
    valid_ratio: float = 0.1
    test_ratio: float = 0.2

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls().with_overrides(data)

    def with_overrides(self, overrides: dict) -> "RunConfig":
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **overrides)

    def to_dict(self) -> dict:
        return asdict(self)

    # ---- builders for the per-module configs ----

    def racut(self) -> RAcutConfig:
        return RAcutConfig(n=self.n, l_max=self.l_max)

    def noise(self) -> NoiseSpec:
        return NoiseSpec(kind=self.noise_kind, mask_prob=self.mask_prob)

    def encoder(self) -> EncoderConfig:
        rc = self.racut()
        return EncoderConfig(
            embed_dim=self.embed_dim,
            layers=self.layers,
            heads=self.heads,
            ffn_dim=self.ffn_dim,
            n=rc.n,
            f_max=rc.f_max,
        )

    def pretrain(self, stop_accuracy: float | None = None) -> PretrainConfig:
        return PretrainConfig(
            epochs=self.epochs,
            lr=self.lr,
            batch_size=self.batch_size,
            weight_decay=self.weight_decay,
            sinkhorn=SinkhornConfig(m=self.sinkhorn_m),
            noise=self.noise(),
            global_seed=self.seed,
            eval_m=self.eval_m,
            stop_accuracy=stop_accuracy,
        )

    def cpi(self) -> CpiConfig:
        return CpiConfig(
            embed_dim=self.embed_dim,
            comp_layers=self.comp_layers,
            comp_heads=self.comp_heads,
            comp_ffn_dim=self.comp_ffn_dim,
            fusion_dim=self.fusion_dim,
            max_atoms=self.max_atoms,
        )

    def finetune(self) -> FinetuneConfig:
        return FinetuneConfig(
            epochs=self.epochs,
            lr=self.lr,
            batch_size=self.batch_size,
            lam=self.lam,
            seed=self.seed,
        )

    def ratios(self) -> tuple[float, float, float]:
        return (self.train_ratio, self.valid_ratio, self.test_ratio)
