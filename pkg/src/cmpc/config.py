"""Run configuration: model hyperparameters, ablation switches, training knobs."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path


@dataclass
class RunConfig:
    # feature sizes
    image_size: int = 32
    c_l: int = 64
    c_n: int = 32
    c_v: int = 64
    c_m: int = 64
    c_h: int = 64
    c_cell: int = 32
    backbone_widths: tuple = (16, 16, 32, 32, 32, 32)
    backbone_strides: tuple = (2, 2, 1, 1, 1, 1)
    backbone_residual: bool = True
    # reasoning
    r: int = 3
    n_gc: int = 1
    gc_relu: bool | None = None
    share_gc: bool = False
    n_rounds: int = 1
    normalize_pool: bool = True
    tgfe_per_level: bool = False
    # ablation switches
    ep: bool = True
    rar: bool = True
    tgfe: bool = True
    multi_level: bool = True
    level_order: tuple = (3, 4, 5)
    # training
    lambda_wt: float = 0.0
    lr: float = 1e-3
    lr_schedule: str = "poly"
    warmup_steps: int = 500
    weight_decay: float = 5e-4
    epochs: int = 15
    batch_size: int = 8
    seed: int = 0
    threshold: float = 0.5
    # data
    n_train: int = 2000
    n_val: int = 500
    data_seed: int = 7
    rel_fraction: float = 0.5

    def __post_init__(self):
        self.backbone_widths = tuple(int(w) for w in self.backbone_widths)
        self.backbone_strides = tuple(int(s) for s in self.backbone_strides)
        self.level_order = tuple(int(v) for v in self.level_order)
        if sorted(self.level_order) != [3, 4, 5]:
            raise ValueError(f"level_order must be a permutation of (3, 4, 5), got {self.level_order}")
        if self.r < 1:
            raise ValueError("r must be >= 1")
        if self.rar and self.n_gc < 1:
            raise ValueError("n_gc must be >= 1 when relation-aware reasoning is on")
        if self.n_rounds < 0:
            raise ValueError("n_rounds must be >= 0")
        if self.lr_schedule not in ("constant", "poly"):
            raise ValueError(f"lr_schedule must be 'constant' or 'poly', got {self.lr_schedule!r}")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if self.tgfe and not self.multi_level:
            raise ValueError("feature exchange needs multi_level=True")

    @property
    def levels(self):
        return self.level_order if self.multi_level else (5,)

    @property
    def uses_tgfe(self):
        return self.tgfe and self.multi_level and self.n_rounds > 0

    def to_dict(self):
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n")


FULL_SCALE = dict(c_l=1000, c_v=1000, c_m=1000, c_h=1000, c_cell=500, r=5, n_rounds=3,
                  lr=2.5e-4, weight_decay=5e-4, warmup_steps=0)

# ablation rows: (name, overrides)
ABLATION_ROWS = (
    ("baseline", dict(ep=False, rar=False, tgfe=False, multi_level=False)),
    ("+EP", dict(ep=True, rar=False, tgfe=False, multi_level=False)),
    ("+RAR", dict(ep=False, rar=True, tgfe=False, multi_level=False)),
    ("+EP+RAR", dict(ep=True, rar=True, tgfe=False, multi_level=False)),
    ("ML-baseline", dict(ep=False, rar=False, tgfe=False, multi_level=True)),
    ("ML+TGFE", dict(ep=False, rar=False, tgfe=True, multi_level=True)),
    ("ML+EP+TGFE", dict(ep=True, rar=False, tgfe=True, multi_level=True)),
    ("ML+RAR+TGFE", dict(ep=False, rar=True, tgfe=True, multi_level=True)),
    ("full", dict(ep=True, rar=True, tgfe=True, multi_level=True)),
)
