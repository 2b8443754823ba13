"""Model configuration shared by the data pipeline and the network."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field


@dataclass
class ModelConfig:
    """Hyperparameters of the forecasting network.

    ``embed_size`` must be divisible by every head count so attention heads
    split the channel dimension evenly.
    """

    n_nodes: int = 1
    t_r: int = 12
    t_d: int = 3
    t_w: int = 3
    horizon: int = 12
    embed_size: int = 64
    n_blocks: int = 2
    heads_fusion_rd: int = 4
    heads_fusion_rw: int = 4
    heads_spatial: int = 16
    heads_temporal: int = 16
    q: int = 288
    learning_rate: float = 1e-3
    out_channels: int = 128

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        for name in ("heads_fusion_rd", "heads_fusion_rw", "heads_spatial", "heads_temporal"):
            h = getattr(self, name)
            if self.embed_size % h != 0:
                raise ValueError(f"embed_size {self.embed_size} not divisible by {name}={h}")

    @property
    def head_counts(self) -> tuple[int, int, int, int]:
        return (self.heads_fusion_rd, self.heads_fusion_rw, self.heads_spatial, self.heads_temporal)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    @classmethod
    def from_json(cls, path: str) -> "ModelConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))
