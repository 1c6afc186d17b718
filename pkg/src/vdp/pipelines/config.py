"""Task configuration and its flat INI representation."""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

from vdp.losses import LossWeights

TASKS = ("relight", "dehaze", "uvos")
ALPHA_INPUTS = ("flow_rgb", "noise", "rgb")
WARP_MODES = ("sample_forward_flow", "sample_backward_flow")
EMBEDDERS = ("pretrained", "fallback")
LR_RANGE = (2e-5, 2e-3)
DEFAULT_EPOCHS = {"relight": 60, "dehaze": 60, "uvos": 100}


class ConfigError(ValueError):
    pass


@dataclass
class TaskConfig:
    task: str
    layers: int = 2
    weights: LossWeights | None = None
    epochs: int | None = None
    lr: float = 2e-4
    seed: int = 0
    alpha_input: str = "flow_rgb"
    warp_mode: str = "sample_forward_flow"
    embedder: str = "pretrained"
    width: float = 1.0
    batch_frames: int = 0  # 0: the whole sequence per step
    layer_target: str = "layer"  # or "reconstruction"
    warp_masks: bool = False
    occlusion_mask: bool = False
    allow_lr_override: bool = False
    resize: float = 1.0
    divergence_factor: float = 10.0
    tmap_init_bias: float = 0.0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"invalid task {self.task!r}; choose from {', '.join(TASKS)}")
        if self.weights is None:
            self.weights = LossWeights.for_task(self.task)
        if self.epochs is None:
            self.epochs = DEFAULT_EPOCHS[self.task]
        if self.task == "uvos" and self.layers < 2:
            raise ConfigError("layers must be ≥ 2")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        lo, hi = LR_RANGE
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not (lo <= self.lr <= hi) and not self.allow_lr_override:
            raise ConfigError(f"lr {self.lr} outside [{lo}, {hi}]; pass allow_lr_override to force it")
        for name, allowed in (("alpha_input", ALPHA_INPUTS), ("warp_mode", WARP_MODES), ("embedder", EMBEDDERS),
                              ("layer_target", ("layer", "reconstruction"))):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"invalid {name} {getattr(self, name)!r}; choose from {', '.join(allowed)}")
        if self.width <= 0 or self.resize <= 0 or self.batch_frames < 0:
            raise ConfigError("width and resize must be positive, batch_frames non-negative")

    # -- flat key/value form -------------------------------------------------

    def to_flat(self) -> dict[str, Any]:
        d = asdict(self)
        w = d.pop("weights")
        for k, v in w.items():
            d[f"w_{k}"] = v
        return d

    @classmethod
    def from_flat(cls, values: Mapping[str, Any]) -> "TaskConfig":
        """Build from string or typed values, keys as in ``to_flat``; unknown keys are an error."""
        types = {f.name: f.type for f in fields(cls)}
        kwargs: dict[str, Any] = {}
        wkw: dict[str, float] = {}
        for key, raw in values.items():
            if raw is None:
                continue
            if key.startswith("w_"):
                name = key[2:]
                if name not in {f.name for f in fields(LossWeights)}:
                    raise ConfigError(f"unknown loss weight {key!r}")
                wkw[name] = float(raw)
                continue
            if key not in types or key == "weights":
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(raw, types[key], key)
        if "task" not in kwargs:
            raise ConfigError("config is missing 'task'")
        if wkw:
            base = LossWeights.for_task(kwargs["task"]) if kwargs["task"] in TASKS else LossWeights()
            kwargs["weights"] = replace(base, **wkw)
        return cls(**kwargs)

    def to_ini(self, extra: Mapping[str, Any] | None = None) -> str:
        lines = ["[vdp]"]
        for k, v in {**self.to_flat(), **(extra or {})}.items():
            lines.append(f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}")
        return "\n".join(lines) + "\n"


def _coerce(raw: Any, typ: Any, key: str) -> Any:
    typ = str(typ)
    if not isinstance(raw, str):
        return raw
    try:
        if typ.startswith("bool"):
            if raw.strip().lower() in ("1", "true", "yes", "on"):
                return True
            if raw.strip().lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ.startswith("int"):
            return int(raw)
        if typ.startswith("float"):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw.strip()


def read_ini(path) -> dict[str, str]:
    """Flat ``key = value`` pairs; a section header is optional and ignored."""
    text = Path(path).read_text()
    if not text.lstrip().startswith("["):
        text = "[vdp]\n" + text
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    out: dict[str, str] = {}
    for section in cp.sections():
        out.update(cp[section])
    return out
