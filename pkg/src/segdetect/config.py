"""Run configuration: one flat key/value text file covering every knob."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from .errors import InputError


@dataclass
class Config:
    # segmentation features
    grid_k: int = 3
    lambda_bias: float = -0.7
    min_segment_pixels: int = 1500
    # inference
    nms_iou: float = 0.3
    top_k: int = 100
    # training
    pos_iou: float = 0.5
    neg_iou: float = 0.3
    c_reg: float = 1e-2
    eta0: float = 1e-3
    decay: float = 1e-4
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    neg_cache_cap: int = 10000
    outer_iters: int = 3
    # box regression
    ridge: float = 1.0
    reg_pair_iou: float = 0.6
    bbox_max_iters: int = 2
    change_thresh: float = 0.2
    # evaluation
    eval_iou: float = 0.5
    eleven_point: bool = False
    # execution
    threads: int = 0   # 0 = machine parallelism

    def __post_init__(self):
        if self.grid_k < 1:
            raise InputError("grid_k must be >= 1")
        if self.c_reg <= 0:
            raise InputError("c_reg must be positive")
        if not (0 < self.neg_iou <= self.pos_iou <= 1):
            raise InputError("need 0 < neg_iou <= pos_iou <= 1")
        if self.min_segment_pixels < 0 or self.neg_cache_cap < 1:
            raise InputError("invalid cache/filter sizes")


_BOOL = {"true": True, "false": False, "1": True, "0": False}


def load_config(path) -> Config:
    if not os.path.exists(path):
        raise InputError(f"config file not found: {path}")
    overrides = {}
    types = {f.name: f.type for f in fields(Config)}
    defaults = Config()
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(None, 1)
            if len(parts) != 2:
                raise InputError(f"{path}:{lineno}: expected 'key value'")
            key, value = parts
            if key not in types:
                raise InputError(f"{path}:{lineno}: unknown config key {key!r}")
            kind = type(getattr(defaults, key))
            try:
                if kind is bool:
                    overrides[key] = _BOOL[value.lower()]
                else:
                    overrides[key] = kind(value)
            except (ValueError, KeyError) as e:
                raise InputError(f"{path}:{lineno}: bad value for {key}: {value}") from e
    return Config(**overrides)


def save_config(path, cfg: Config):
    with open(path, "w") as f:
        for fld in fields(Config):
            value = getattr(cfg, fld.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            f.write(f"{fld.name} {value}\n")
