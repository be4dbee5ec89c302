"""Run configuration: one flat ``key=value`` namespace over every tunable."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError
from .geometry import CameraIntrinsics
from .inference import InferenceConfig
from .init import InitConfig
from .io import format_kv, read_kv
from .metrics import DEFAULT_BASELINE, EvalConfig
from .scenemodel import EnergyWeights, WeightSet

_WEIGHT_SECTIONS = {"bg": "background", "obj": "object", "cross": "cross"}
_INIT_KEYS = {
    "theta4": "theta4",
    "lm_max_iterations": "max_iterations",
    "lm_initial_damping": "initial_damping",
    "vote_threshold": "vote_threshold",
    "huber_width": "huber_width",
}
_PATH_KEYS = ("image0", "image1", "prior0", "prior1", "mask0", "mask1", "matches", "recalib")


@dataclass
class RunConfig:
    fx: float | None = None
    fy: float | None = None
    cx: float | None = None
    cy: float | None = None
    superpixels: int = 60
    weights: EnergyWeights = field(default_factory=EnergyWeights)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    init: InitConfig = field(default_factory=InitConfig)
    baseline: float = DEFAULT_BASELINE
    abs_threshold: float = 3.0
    rel_threshold: float = 0.05
    mre_depth_cap: float = 50.0
    paths: dict = field(default_factory=dict)

    def intrinsics(self, width: int, height: int) -> CameraIntrinsics:
        if None in (self.fx, self.fy):
            raise ConfigError("config must define fx and fy")
        cx = width / 2.0 if self.cx is None else self.cx
        cy = height / 2.0 if self.cy is None else self.cy
        try:
            return CameraIntrinsics(self.fx, self.fy, cx, cy, width, height)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def eval_config(self) -> EvalConfig:
        if self.fx is None:
            raise ConfigError("config must define fx to convert inverse depth to disparity")
        return EvalConfig(self.baseline * self.fx, self.abs_threshold, self.rel_threshold, self.mre_depth_cap)

    # -- key=value mapping --

    def to_kv(self) -> dict:
        out = {}
        for k in ("fx", "fy", "cx", "cy"):
            if getattr(self, k) is not None:
                out[k] = repr(getattr(self, k))
        out["superpixels"] = self.superpixels
        for short, attr in _WEIGHT_SECTIONS.items():
            ws = getattr(self.weights, attr)
            for f in fields(WeightSet):
                out[f"{short}.{f.name}"] = repr(getattr(ws, f.name))
        for f in fields(InferenceConfig):
            out[f.name] = repr(getattr(self.inference, f.name))
        for key, attr in _INIT_KEYS.items():
            out[key] = repr(getattr(self.init, attr))
        for k in ("baseline", "abs_threshold", "rel_threshold", "mre_depth_cap"):
            out[k] = repr(getattr(self, k))
        out.update(self.paths)
        return out

    def to_text(self) -> str:
        return format_kv(self.to_kv())


def _convert(key, value, typ):
    try:
        if typ is int:
            return int(value)
        return float(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r} as {typ.__name__}") from exc


def apply_overrides(cfg: RunConfig, kv: dict) -> RunConfig:
    """Return a copy of ``cfg`` with ``kv`` applied; unknown keys are rejected."""
    cfg = replace(cfg, paths=dict(cfg.paths))
    weights = {attr: getattr(cfg.weights, attr) for attr in _WEIGHT_SECTIONS.values()}
    inf_kw, init_kw = {}, {}
    inf_types = {f.name: (int if f.type in ("int", int) else float) for f in fields(InferenceConfig)}
    init_types = {f.name: (int if f.type in ("int", int) else float) for f in fields(InitConfig)}
    for key, value in kv.items():
        value = str(value).strip()
        if key in ("fx", "fy", "cx", "cy", "baseline", "abs_threshold", "rel_threshold", "mre_depth_cap"):
            setattr(cfg, key, _convert(key, value, float))
        elif key == "superpixels":
            cfg.superpixels = _convert(key, value, int)
        elif "." in key and key.split(".", 1)[0] in _WEIGHT_SECTIONS:
            section, name = key.split(".", 1)
            if name not in {f.name for f in fields(WeightSet)}:
                raise ConfigError(f"unknown key {key}")
            attr = _WEIGHT_SECTIONS[section]
            try:
                weights[attr] = replace(weights[attr], **{name: _convert(key, value, float)})
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        elif key in inf_types:
            inf_kw[key] = _convert(key, value, inf_types[key])
        elif key in _INIT_KEYS:
            attr = _INIT_KEYS[key]
            init_kw[attr] = _convert(key, value, init_types[attr])
        elif key in _PATH_KEYS:
            cfg.paths[key] = value
        else:
            raise ConfigError(f"unknown key {key}")
    try:
        cfg.weights = EnergyWeights(**weights)
        cfg.inference = replace(cfg.inference, **inf_kw)
        cfg.init = replace(cfg.init, **init_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.superpixels < 1:
        raise ConfigError("superpixels must be >= 1")
    return cfg


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        cfg = apply_overrides(cfg, read_kv(path))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg
