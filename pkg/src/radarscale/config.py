"""Flat ``key = value`` configuration shared by every CLI command.

One key per line, ``#`` starts a comment. Unknown keys, malformed values and
duplicate keys are errors that name the offending line. ``box`` may repeat;
each occurrence adds one box ``cx cy cz sx sy sz``. Optional reals accept
``none``.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .align import AlignSpace
from .pipeline import GA_METHODS
from .synth import Box


class ConfigError(ValueError):
    pass


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _opt_float(text):
    return None if text.lower() == "none" else float(text)


def parse_methods(text):
    methods = tuple(m.strip().lower() for m in text.split(",") if m.strip())
    if not methods:
        raise ValueError("empty method list")
    for m in methods:
        if m not in GA_METHODS:
            raise ValueError(f"unknown GA method {m!r}; choose from {', '.join(GA_METHODS)}")
    if len(set(methods)) != len(methods):
        raise ValueError("GA method listed twice")
    return methods


def parse_caps(text):
    caps = tuple(float(c) for c in text.split(",") if c.strip())
    if not caps or any(not c > 0 for c in caps):
        raise ValueError("range caps must be positive reals")
    return caps


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return parse


def _box(text):
    vals = [float(v) for v in text.replace(",", " ").split()]
    if len(vals) != 6:
        raise ValueError("box needs 'cx cy cz sx sy sz'")
    if any(not s > 0 for s in vals[3:]):
        raise ValueError("box sizes must be positive")
    return Box(tuple(vals[:3]), tuple(vals[3:]))


@dataclass(frozen=True)
class Config:
    # scene generation
    frames: int = 1
    width: int = 320
    height: int = 240
    fx: float | None = None
    fy: float | None = None
    cx: float | None = None
    cy: float | None = None
    ground_height: float | None = 1.5
    background: float | None = 80.0
    boxes: tuple = ()
    random_boxes: int = 0
    radar_points: int = 64
    radar_sigma: float = 0.0
    radar_jitter: float = 0.0
    radar_outliers: float = 0.0
    radar_max_range: float = 80.0
    radar_row_bias: float = 2.0
    lidar_stride: int = 4
    lidar_sweeps: int = 1
    mono_a: float = 1.0
    mono_b: float = 0.0
    mono_gamma: float = 0.0
    a_min: float | None = None
    a_max: float | None = None
    b_min: float | None = None
    b_max: float | None = None
    write_confidence: bool = False
    seed: int = 0
    # pipeline
    ga: tuple = ("ls",)
    space: str = "inverse_depth"
    tau: float = 0.5
    patch_w: int = 0
    patch_h: int = 0
    confidence: str = "oracle"
    residual: str = "zero"
    checkpoint: str | None = None
    ransac_refit: bool = False
    const_scale: float | None = None
    range_caps: tuple = (50.0, 70.0, 80.0)
    eval_reference: str = "gt"
    # refiner training
    lr: float = 1e-3
    iterations: int = 500
    lambda_gt: float = 1.0
    beta: float = 1.0
    momentum: float = 0.9
    guarded: bool = True
    loss_variant: str = "standard"
    init_scale: float = 0.01

    @property
    def align_space(self) -> AlignSpace:
        return AlignSpace(self.space)

    def a_range(self):
        return _range(self.a_min, self.a_max, "a")

    def b_range(self):
        return _range(self.b_min, self.b_max, "b")


def _range(lo, hi, name):
    if lo is None and hi is None:
        return None
    if lo is None or hi is None or lo > hi:
        raise ConfigError(f"{name}_min and {name}_max must be given together with min <= max")
    return (lo, hi)


_PARSERS = {
    "frames": int, "width": int, "height": int,
    "fx": _opt_float, "fy": _opt_float, "cx": _opt_float, "cy": _opt_float,
    "ground_height": _opt_float, "background": _opt_float,
    "random_boxes": int, "radar_points": int,
    "radar_sigma": float, "radar_jitter": float, "radar_outliers": float,
    "radar_max_range": float, "radar_row_bias": float,
    "lidar_stride": int, "lidar_sweeps": int,
    "mono_a": float, "mono_b": float, "mono_gamma": float,
    "a_min": _opt_float, "a_max": _opt_float, "b_min": _opt_float, "b_max": _opt_float,
    "write_confidence": _bool, "seed": int,
    "ga": parse_methods, "space": _choice("inverse_depth", "depth"), "tau": float,
    "patch_w": int, "patch_h": int,
    "confidence": _choice("oracle", "files"), "residual": _choice("zero", "checkpoint"),
    "checkpoint": str, "ransac_refit": _bool, "const_scale": _opt_float,
    "range_caps": parse_caps, "eval_reference": _choice("gt", "dgt", "dint"),
    "lr": float, "iterations": int, "lambda_gt": float, "beta": float,
    "momentum": float, "guarded": _bool,
    "loss_variant": _choice("standard", "printed"), "init_scale": float,
}
assert set(_PARSERS) | {"boxes"} == {f.name for f in fields(Config)}


def _check(cfg: Config) -> None:
    if cfg.frames < 1:
        raise ConfigError("frames must be >= 1")
    if cfg.width < 1 or cfg.height < 1:
        raise ConfigError("image size must be positive")
    if cfg.lidar_sweeps < 1 or cfg.iterations < 0 or cfg.random_boxes < 0:
        raise ConfigError("lidar_sweeps must be >= 1; iterations and random_boxes >= 0")
    if not 0 < cfg.tau < 1:
        raise ConfigError("tau must lie in (0, 1)")
    if cfg.residual == "checkpoint" and not cfg.checkpoint:
        raise ConfigError("residual = checkpoint needs a checkpoint path")
    cfg.a_range()
    cfg.b_range()


def parse_config(text: str, source: str = "<config>") -> Config:
    values = {}
    boxes = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "box":
            try:
                boxes.append(_box(value))
            except ValueError as exc:
                raise ConfigError(f"{where}: {exc}") from None
            continue
        if key not in _PARSERS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None
    cfg = Config(boxes=tuple(boxes), **values)
    _check(cfg)
    return cfg


def load_config(path) -> Config:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def override(cfg: Config, **changes) -> Config:
    """Apply command-line overrides; ``None`` means not given."""
    cfg = replace(cfg, **{k: v for k, v in changes.items() if v is not None})
    _check(cfg)
    return cfg
